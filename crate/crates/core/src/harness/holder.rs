//! Oscillation decay over nested sections.

use crate::convex::{section, ConvexPotential};
use crate::error::{LmaError, Result};
use crate::fit::loglog;
use crate::grid::GridFunction2D;

/// Sections with fewer nodes than this make the two smallest heights unreliable.
pub const MIN_SECTION_NODES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub x0: [f64; 2],
    /// Descending.
    pub heights: Vec<f64>,
    pub oscillations: Vec<f64>,
    pub node_counts: Vec<usize>,
    /// Heights used by the fit (a prefix of `heights`).
    pub fitted: usize,
    pub gamma0: f64,
    pub prefactor: f64,
    /// Two-scale decay `osc(h') ≤ θ·osc(h) + K·h^{1/2−n/(2q)}` along
    /// consecutive heights.
    pub theta: f64,
    pub k_const: f64,
    pub q: f64,
}

impl HolderReport {
    pub fn two_scale_holds(&self) -> bool {
        self.theta < 1.0 && self.k_const.is_finite()
    }

    pub fn summary(&self) -> String {
        format!(
            "x0 = {}, {}\nheights = {}\nfitted = {}\ngamma0 = {}\nprefactor = {}\ntheta = {}\nK = {}\nq = {}\n",
            self.x0[0],
            self.x0[1],
            self.heights.len(),
            self.fitted,
            self.gamma0,
            self.prefactor,
            self.theta,
            self.k_const,
            self.q
        )
    }
}

/// `max − min` of `u` over the section, which must lie in `u`'s mask.
pub fn oscillation(u: &GridFunction2D, mask: &[bool]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..mask.len() {
        if mask[k] {
            if !u.mask[k] {
                return Err(LmaError::InvalidArgument(format!(
                    "u is undefined at section node {:?}",
                    u.grid.node_of(k)
                )));
            }
            lo = lo.min(u.values[k]);
            hi = hi.max(u.values[k]);
        }
    }
    Ok(hi - lo)
}

pub fn holder_scan(u: &GridFunction2D, p: &ConvexPotential, x0: [f64; 2], heights: &[f64], q: f64) -> Result<HolderReport> {
    if heights.len() < 4 {
        return Err(LmaError::FitIllConditioned(format!(
            "height ladder has {} entries, need 4",
            heights.len()
        )));
    }
    let mut hs = heights.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let mut osc = Vec::with_capacity(hs.len());
    let mut counts = Vec::with_capacity(hs.len());
    for &h in &hs {
        let s = section(p, x0, h)?;
        if s.touches_boundary {
            return Err(LmaError::SectionNotInterior { h });
        }
        osc.push(oscillation(u, &s.mask)?);
        counts.push(s.node_count);
    }
    let fitted = if counts.iter().any(|&c| c < MIN_SECTION_NODES) {
        hs.len() - 2
    } else {
        hs.len()
    };
    let e = 0.5 - 2.0 / (2.0 * q);
    if osc.iter().all(|&o| o == 0.0) {
        return Ok(HolderReport {
            x0,
            heights: hs,
            oscillations: osc,
            node_counts: counts,
            fitted,
            gamma0: 1.0,
            prefactor: 0.0,
            theta: 0.0,
            k_const: 0.0,
            q,
        });
    }
    let f = loglog(&hs[..fitted], &osc[..fitted])?;
    // θ by least squares through the origin on consecutive pairs, K the
    // smallest constant making every pair hold
    let (mut num, mut den) = (0.0, 0.0);
    for w in osc[..fitted].windows(2) {
        num += w[0] * w[1];
        den += w[0] * w[0];
    }
    let theta = if den > 0.0 { num / den } else { 0.0 };
    let mut k_const = 0.0f64;
    for (i, w) in osc[..fitted].windows(2).enumerate() {
        k_const = k_const.max((w[1] - theta * w[0]) / hs[i].powf(e));
    }
    Ok(HolderReport {
        x0,
        heights: hs,
        oscillations: osc,
        node_counts: counts,
        fitted,
        gamma0: f.slope,
        prefactor: f.intercept.exp(),
        theta,
        k_const,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PotentialFamily;
    use crate::grid::Grid;

    #[test]
    fn linear_function_on_disks() {
        let g = Grid::square(257, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Identity.build(g).unwrap();
        let u = GridFunction2D::from_fn(g, GridFunction2D::full_mask(&g), |x, _| x);
        let heights: Vec<f64> = (0..8).map(|i| 0.45 * 0.7f64.powi(i)).collect();
        let r = holder_scan(&u, &p, [0.0, 0.0], &heights, 4.0).unwrap();
        assert!((r.gamma0 - 0.5).abs() < 0.02, "{}", r.gamma0);
        assert!((r.prefactor - 2.0 * 2f64.sqrt()).abs() < 0.1, "{}", r.prefactor);
        assert!(r.two_scale_holds());
        assert!(r.oscillations.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_and_short_ladders() {
        let g = Grid::square(65, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Identity.build(g).unwrap();
        let u = GridFunction2D::from_fn(g, GridFunction2D::full_mask(&g), |_, _| 3.0);
        let r = holder_scan(&u, &p, [0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], 4.0).unwrap();
        assert_eq!((r.gamma0, r.prefactor), (1.0, 0.0));
        assert!(matches!(
            holder_scan(&u, &p, [0.0, 0.0], &[0.4, 0.2, 0.1], 4.0),
            Err(LmaError::FitIllConditioned(_))
        ));
        assert!(matches!(
            holder_scan(&u, &p, [0.0, 0.0], &[0.4, 0.2, 0.1, 1e-9], 4.0),
            Err(LmaError::EmptySection { .. })
        ));
    }
}
