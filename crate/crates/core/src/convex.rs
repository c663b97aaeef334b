//! Discretized convex potentials: Hessian and cofactor fields, determinant
//! validation, sections `S_φ(x₀, h)`, section volumes and the modulus of
//! convexity.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LmaError, Node, Result};
use crate::grid::{Grid, GridFunction2D};
use crate::sym2::Sym2;

/// Tolerances and sampling knobs for [`build_potential_with`].
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Absolute slack on both determinant bounds and on the PSD test.
    pub tol: f64,
    pub midpoint_checks: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            tol: 1e-9,
            midpoint_checks: 1000,
            seed: 0x5eed,
        }
    }
}

/// Where the determinant bounds and convexity tests held.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub interior_nodes: usize,
    pub det_min: f64,
    pub det_max: f64,
    pub det_violations: Vec<Node>,
    pub indefinite: Vec<Node>,
    pub midpoint_checks: usize,
    pub midpoint_failures: usize,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.det_violations.is_empty() && self.indefinite.is_empty() && self.midpoint_failures == 0
    }
}

#[derive(Debug, Clone)]
pub struct ConvexPotential {
    pub phi: GridFunction2D,
    /// `[φ_{x₁}, φ_{x₂}]`
    pub grad: [GridFunction2D; 2],
    pub hessian: Vec<Sym2>,
    /// Nodes where all three second derivatives are defined.
    pub hessian_mask: Vec<bool>,
    pub det_field: GridFunction2D,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub report: ValidationReport,
}

pub fn build_potential(phi: GridFunction2D, lambda_lo: f64, lambda_hi: f64) -> Result<ConvexPotential> {
    build_potential_with(phi, lambda_lo, lambda_hi, ValidationOptions::default())
}

/// Differentiates `phi`, then checks convexity and `λ ≤ det D²φ ≤ Λ` on
/// interior nodes.
pub fn build_potential_with(
    phi: GridFunction2D,
    lambda_lo: f64,
    lambda_hi: f64,
    opts: ValidationOptions,
) -> Result<ConvexPotential> {
    if !(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo) {
        return Err(LmaError::InvalidArgument(format!(
            "need 0 < lambda <= Lambda, got [{lambda_lo}, {lambda_hi}]"
        )));
    }
    phi.validate()?;
    let grid = phi.grid;
    let grad = [phi.d1(0), phi.d1(1)];
    let dxx = phi.d2(0);
    let dyy = phi.d2(1);
    let dxy = phi.d12();

    let n = grid.len();
    let mut hessian = vec![Sym2::default(); n];
    let mut hessian_mask = vec![false; n];
    let mut det = vec![f64::NAN; n];
    for k in 0..n {
        if dxx.mask[k] && dyy.mask[k] && dxy.mask[k] {
            let h = Sym2::new(dxx.values[k], dxy.values[k], dyy.values[k]);
            hessian[k] = h;
            hessian_mask[k] = true;
            det[k] = h.det();
        }
    }
    let det_field = GridFunction2D::from_parts(grid, det, hessian_mask.clone())?;

    let mut report = ValidationReport {
        interior_nodes: 0,
        det_min: f64::INFINITY,
        det_max: f64::NEG_INFINITY,
        det_violations: Vec::new(),
        indefinite: Vec::new(),
        midpoint_checks: 0,
        midpoint_failures: 0,
    };
    let scale = lambda_hi.max(1.0);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            if !phi.is_interior(i, j) || !hessian_mask[k] {
                continue;
            }
            report.interior_nodes += 1;
            let h = hessian[k];
            let d = det_field.values[k];
            report.det_min = report.det_min.min(d);
            report.det_max = report.det_max.max(d);
            if h.eigenvalues()[0] < -opts.tol * scale.max(h.trace().abs()) {
                report.indefinite.push((i, j));
            }
            if d < lambda_lo - opts.tol * scale || d > lambda_hi + opts.tol * scale {
                report.det_violations.push((i, j));
            }
        }
    }
    let (checks, failures, first_fail) = midpoint_spot_checks(&phi, opts);
    report.midpoint_checks = checks;
    report.midpoint_failures = failures;

    if !report.indefinite.is_empty() || failures > 0 {
        return Err(LmaError::NonConvex {
            count: report.indefinite.len() + failures,
            first: report.indefinite.first().copied().or(first_fail),
        });
    }
    if !report.det_violations.is_empty() {
        return Err(LmaError::DetOutOfBounds {
            lo: lambda_lo,
            hi: lambda_hi,
            nodes: report.det_violations,
        });
    }
    Ok(ConvexPotential {
        phi,
        grad,
        hessian,
        hessian_mask,
        det_field,
        lambda_lo,
        lambda_hi,
        report,
    })
}

/// Random node pairs with a grid-node midpoint: `φ(mid) ≤ (φ(a)+φ(b))/2`.
fn midpoint_spot_checks(phi: &GridFunction2D, opts: ValidationOptions) -> (usize, usize, Option<Node>) {
    let nodes: Vec<Node> = phi.masked_nodes().collect();
    if nodes.len() < 3 || opts.midpoint_checks == 0 {
        return (0, 0, None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = phi.masked_values().fold(1.0f64, |m, v| m.max(v.abs()));
    let (mut checks, mut failures, mut first) = (0, 0, None);
    let mut attempts = 0;
    while checks < opts.midpoint_checks && attempts < 50 * opts.midpoint_checks {
        attempts += 1;
        let a = nodes[rng.gen_range(0..nodes.len())];
        let b = nodes[rng.gen_range(0..nodes.len())];
        if a == b || (a.0 + b.0) % 2 != 0 || (a.1 + b.1) % 2 != 0 {
            continue;
        }
        let m = ((a.0 + b.0) / 2, (a.1 + b.1) / 2);
        if !phi.mask[phi.grid.idx(m.0, m.1)] {
            continue;
        }
        checks += 1;
        let chord = 0.5 * (phi.at(a.0, a.1) + phi.at(b.0, b.1));
        if phi.at(m.0, m.1) > chord + opts.tol * scale {
            failures += 1;
            first.get_or_insert(m);
        }
    }
    (checks, failures, first)
}

impl ConvexPotential {
    pub fn grid(&self) -> &Grid {
        &self.phi.grid
    }

    pub fn hessian_at(&self, i: usize, j: usize) -> Option<Sym2> {
        let k = self.grid().idx(i, j);
        self.hessian_mask[k].then(|| self.hessian[k])
    }

    /// `(min, max)` of det D²φ over interior nodes.
    pub fn det_range(&self) -> (f64, f64) {
        (self.report.det_min, self.report.det_max)
    }

    /// Hessian component field: `(0,0)` → φ₁₁, `(0,1)` → φ₁₂, `(1,1)` → φ₂₂.
    pub fn hessian_component(&self, a: usize, b: usize) -> GridFunction2D {
        let values = self
            .hessian
            .iter()
            .map(|h| match (a.min(b), a.max(b)) {
                (0, 0) => h.xx,
                (0, 1) => h.xy,
                _ => h.yy,
            })
            .collect();
        GridFunction2D {
            grid: *self.grid(),
            values,
            mask: self.hessian_mask.clone(),
        }
    }

    /// φ and Dφ at a point: exact at nodes, bilinear otherwise.
    pub fn value_and_gradient(&self, x: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let g = self.grid();
        let (i, j) = g.nearest(x);
        let close = (g.x(i) - x[0]).abs() <= 1e-12 * g.spacing[0]
            && (g.y(j) - x[1]).abs() <= 1e-12 * g.spacing[1];
        let k = g.idx(i, j);
        if close && self.phi.mask[k] && self.grad[0].mask[k] && self.grad[1].mask[k] {
            return Some((
                self.phi.values[k],
                [self.grad[0].values[k], self.grad[1].values[k]],
            ));
        }
        Some((
            self.phi.bilinear(x)?,
            [self.grad[0].bilinear(x)?, self.grad[1].bilinear(x)?],
        ))
    }

    pub fn cofactor(&self) -> CofactorField {
        cofactor(self)
    }
}

/// Per-node cofactor matrix of D²φ.
#[derive(Debug, Clone)]
pub struct CofactorField {
    pub grid: Grid,
    pub values: Vec<Sym2>,
    pub mask: Vec<bool>,
}

pub fn cofactor(p: &ConvexPotential) -> CofactorField {
    CofactorField {
        grid: *p.grid(),
        values: p.hessian.iter().map(Sym2::cofactor).collect(),
        mask: p.hessian_mask.clone(),
    }
}

impl CofactorField {
    /// Constant field, e.g. the identity for the classical Dirichlet energy.
    pub fn constant(grid: Grid, mask: Vec<bool>, m: Sym2) -> Self {
        CofactorField {
            grid,
            values: vec![m; grid.len()],
            mask,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Sym2 {
        self.values[self.grid.idx(i, j)]
    }

    /// Entry `Φ^{ab}` as a scalar field.
    pub fn component(&self, a: usize, b: usize) -> GridFunction2D {
        let values = self
            .values
            .iter()
            .map(|m| match (a.min(b), a.max(b)) {
                (0, 0) => m.xx,
                (0, 1) => m.xy,
                _ => m.yy,
            })
            .collect();
        GridFunction2D {
            grid: self.grid,
            values,
            mask: self.mask.clone(),
        }
    }
}

/// `max_{i, node} |∑_j D_j Φ^{ij}|` with centred differences, over nodes whose
/// four neighbours carry centred Hessians.
pub fn divergence_free_residual(c: &CofactorField) -> f64 {
    let g = &c.grid;
    let support = GridFunction2D {
        grid: *g,
        values: vec![0.0; g.len()],
        mask: c.mask.clone(),
    };
    let central = support.interior8_mask();
    let (hx, hy) = (g.spacing[0], g.spacing[1]);
    let mut worst = 0.0f64;
    for j in 1..g.ny.saturating_sub(1) {
        for i in 1..g.nx.saturating_sub(1) {
            let nbrs = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)];
            if !central[g.idx(i, j)] || !nbrs.iter().all(|&(a, b)| central[g.idx(a, b)]) {
                continue;
            }
            let (w, e, s, n) = (c.at(i - 1, j), c.at(i + 1, j), c.at(i, j - 1), c.at(i, j + 1));
            let r1 = (e.xx - w.xx) / (2.0 * hx) + (n.xy - s.xy) / (2.0 * hy);
            let r2 = (e.xy - w.xy) / (2.0 * hx) + (n.yy - s.yy) / (2.0 * hy);
            worst = worst.max(r1.abs()).max(r2.abs());
        }
    }
    worst
}

/// Nodes of `S_φ(x₀, h) = {y : φ(y) < φ(x₀) + Dφ(x₀)·(y − x₀) + h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionMask {
    pub center: [f64; 2],
    pub h: f64,
    pub mask: Vec<bool>,
    pub node_count: usize,
    pub volume: f64,
    /// Some section node lies on the boundary of the domain mask.
    pub touches_boundary: bool,
}

pub fn section(p: &ConvexPotential, x0: [f64; 2], h: f64) -> Result<SectionMask> {
    if !(h > 0.0) {
        return Err(LmaError::InvalidArgument(format!("section height must be positive, got {h}")));
    }
    let (phi0, d0) = p.value_and_gradient(x0).ok_or_else(|| {
        LmaError::InvalidArgument(format!("section center {x0:?} is outside the domain"))
    })?;
    let g = p.grid();
    let mut mask = vec![false; g.len()];
    let mut count = 0;
    let mut touches = false;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if !p.phi.mask[k] {
                continue;
            }
            let (x, y) = (g.x(i), g.y(j));
            let plane = phi0 + d0[0] * (x - x0[0]) + d0[1] * (y - x0[1]);
            if p.phi.values[k] < plane + h {
                mask[k] = true;
                count += 1;
                if !p.phi.is_interior(i, j) {
                    touches = true;
                }
            }
        }
    }
    // a lone centre node is not a resolved section
    if count < 2 {
        return Err(LmaError::EmptySection { h });
    }
    Ok(SectionMask {
        center: x0,
        h,
        mask,
        node_count: count,
        volume: count as f64 * g.cell_area(),
        touches_boundary: touches,
    })
}

/// `(inf, sup)` over `heights` of `|S_φ(x₀, h)| / h` (the n = 2 case of
/// `h^{n/2}`).
pub fn section_volume_fit(p: &ConvexPotential, x0: [f64; 2], heights: &[f64]) -> Result<(f64, f64)> {
    if heights.is_empty() {
        return Err(LmaError::InvalidArgument("empty height ladder".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &h in heights {
        let s = section(p, x0, h)?;
        if s.touches_boundary {
            return Err(LmaError::SectionNotInterior { h });
        }
        let r = s.volume / h;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusProfile {
    pub ts: Vec<f64>,
    pub ms: Vec<f64>,
}

/// Upper bound on sampled node pairs per distance.
pub const MODULUS_PAIR_BUDGET: usize = 1_000_000;

/// `m_φ(t) = inf{φ(x) − φ(z) − Dφ(z)·(x − z) : |x − z| > t}` by brute force.
///
/// The gap is nondecreasing along rays from `z`, so only offsets in the
/// shell `t < |x − z| ≤ t + 1.5·max(dx, dy)` are scanned; the profile is then
/// closed under `s ≥ t` with a suffix minimum.
pub fn modulus_of_convexity(p: &ConvexPotential, ts: &[f64], seed: u64) -> Result<ModulusProfile> {
    if ts.iter().any(|&t| !(t > 0.0)) {
        return Err(LmaError::InvalidArgument("modulus distances must be positive".into()));
    }
    let g = p.grid();
    let (hx, hy) = (g.spacing[0], g.spacing[1]);
    let shell = 1.5 * hx.max(hy);
    let centers: Vec<Node> = (0..g.len())
        .filter(|&k| p.phi.mask[k] && p.grad[0].mask[k] && p.grad[1].mask[k])
        .map(|k| g.node_of(k))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let mut raw = vec![f64::INFINITY; ts.len()];
    for &ti in &order {
        let t = ts[ti];
        let r_out = t + shell;
        let (mx, my) = ((r_out / hx).ceil() as isize, (r_out / hy).ceil() as isize);
        let mut offsets = Vec::new();
        for b in -my..=my {
            for a in -mx..=mx {
                let d = ((a as f64 * hx).powi(2) + (b as f64 * hy).powi(2)).sqrt();
                if d > t && d <= r_out {
                    offsets.push((a, b));
                }
            }
        }
        if offsets.is_empty() || centers.is_empty() {
            continue;
        }
        let per_center = offsets.len();
        let n_centers = (MODULUS_PAIR_BUDGET / per_center).clamp(1, centers.len());
        let mut picked: Vec<usize> = sample(&mut rng, centers.len(), n_centers).into_vec();
        picked.sort_unstable();
        let mut best = f64::INFINITY;
        for &ci in &picked {
            let (zi, zj) = centers[ci];
            let kz = g.idx(zi, zj);
            let (fz, gx, gy) = (p.phi.values[kz], p.grad[0].values[kz], p.grad[1].values[kz]);
            for &(a, b) in &offsets {
                let (xi, xj) = (zi as isize + a, zj as isize + b);
                if !p.phi.masked(xi, xj) {
                    continue;
                }
                let fx = p.phi.at(xi as usize, xj as usize);
                let gap = fx - fz - gx * (a as f64 * hx) - gy * (b as f64 * hy);
                best = best.min(gap);
            }
        }
        raw[ti] = best;
    }
    if raw.iter().any(|m| !m.is_finite()) {
        return Err(LmaError::InvalidArgument(
            "some modulus distance exceeds the domain diameter".into(),
        ));
    }
    let mut ms = raw.clone();
    let mut running = f64::INFINITY;
    for &ti in order.iter().rev() {
        running = running.min(raw[ti]);
        ms[ti] = running;
    }
    Ok(ModulusProfile { ts: ts.to_vec(), ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PotentialFamily;

    fn square(n: usize) -> Grid {
        Grid::square(n, -1.0, 1.0).unwrap()
    }

    #[test]
    fn quadratic_examples_accepted() {
        let g = square(33);
        let p = PotentialFamily::Identity.build(g).unwrap();
        assert!((p.det_range().0 - 1.0).abs() < 1e-10 && (p.det_range().1 - 1.0).abs() < 1e-10);

        let phi = PotentialFamily::Diagonal { a: 2.0, b: 0.5 }.sample(g, GridFunction2D::full_mask(&g));
        let p = build_potential(phi, 1.0, 1.0).unwrap();
        assert!((p.det_range().1 - 1.0).abs() < 1e-10);

        let phi = GridFunction2D::from_fn(g, GridFunction2D::full_mask(&g), |x, y| {
            0.5 * (x * x + y * y) + 0.5 * x * y
        });
        let p = build_potential(phi, 0.7, 0.8).unwrap();
        assert!((p.det_range().0 - 0.75).abs() < 1e-10);
    }

    #[test]
    fn det_out_of_bounds_lists_nodes() {
        let g = square(17);
        let phi = PotentialFamily::Identity.sample(g, GridFunction2D::full_mask(&g));
        match build_potential(phi, 1.5, 2.0) {
            Err(LmaError::DetOutOfBounds { nodes, .. }) => assert_eq!(nodes.len(), 15 * 15),
            other => panic!("expected DetOutOfBounds, got {other:?}"),
        }
    }

    #[test]
    fn saddle_is_non_convex() {
        let g = square(17);
        let phi = GridFunction2D::from_fn(g, GridFunction2D::full_mask(&g), |x, y| x * x - y * y);
        assert!(matches!(
            build_potential(phi, 0.1, 10.0),
            Err(LmaError::NonConvex { .. })
        ));
    }

    #[test]
    fn cofactor_closed_forms() {
        let g = square(17);
        for (fam, expect) in [
            (PotentialFamily::Identity, Sym2::IDENTITY),
            (PotentialFamily::Diagonal { a: 3.0, b: 0.5 }, Sym2::diag(0.5, 3.0)),
            (PotentialFamily::Skew { eps: 0.3 }, Sym2::new(1.0, -0.3, 1.0)),
        ] {
            let c = fam.build(g).unwrap().cofactor();
            for k in 0..g.len() {
                assert!(c.values[k].max_abs_diff(&expect) < 1e-10, "{fam:?}");
            }
            assert!(divergence_free_residual(&c) < 1e-8);
        }
    }

    #[test]
    fn cofactor_matches_det_times_inverse() {
        let p = PotentialFamily::Perturbed { amp: 0.05 }.build(square(33)).unwrap();
        for k in 0..p.hessian.len() {
            if !p.hessian_mask[k] {
                continue;
            }
            let h = p.hessian[k];
            let alt = h.inverse().unwrap() * h.det();
            let c = h.cofactor();
            assert!(c.max_abs_diff(&alt) <= 1e-12 * (1.0 + c.xx.abs().max(c.yy.abs())));
        }
    }

    #[test]
    fn sections_of_quadratics() {
        let g = square(129);
        let p = PotentialFamily::Identity.build(g).unwrap();
        let s = section(&p, [0.0, 0.0], 0.08).unwrap();
        assert!(!s.touches_boundary);
        assert!((s.volume - 0.16 * std::f64::consts::PI).abs() < 0.02);
        let small = section(&p, [0.0, 0.0], 0.02).unwrap();
        assert!(small.mask.iter().zip(&s.mask).all(|(&a, &b)| !a || b));

        let p = PotentialFamily::Diagonal { a: 4.0, b: 1.0 }.build(g).unwrap();
        let s = section(&p, [0.0, 0.0], 0.08).unwrap();
        let g = p.grid();
        for (i, j) in (0..g.len()).filter(|&k| s.mask[k]).map(|k| g.node_of(k)) {
            let (x, y) = (g.x(i), g.y(j));
            assert!((x / 0.2).powi(2) + (y / 0.4).powi(2) < 1.0);
        }
    }

    #[test]
    fn tiny_height_is_empty_section() {
        let p = PotentialFamily::Identity.build(square(17)).unwrap();
        assert!(matches!(
            section(&p, [0.0, 0.0], 1e-6),
            Err(LmaError::EmptySection { .. })
        ));
    }

    #[test]
    fn volume_fit_constants() {
        let g = square(257);
        let hs = [0.02, 0.04, 0.08, 0.16];
        let p = PotentialFamily::Identity.build(g).unwrap();
        let (c1, c2) = section_volume_fit(&p, [0.0, 0.0], &hs).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        assert!((c1 - tp).abs() / tp < 0.05 && (c2 - tp).abs() / tp < 0.05, "{c1} {c2}");
        let p = PotentialFamily::Diagonal { a: 4.0, b: 1.0 }.build(g).unwrap();
        let (c1, c2) = section_volume_fit(&p, [0.0, 0.0], &hs).unwrap();
        let pi = std::f64::consts::PI;
        assert!((c1 - pi).abs() / pi < 0.05 && (c2 - pi).abs() / pi < 0.05, "{c1} {c2}");
    }

    #[test]
    fn modulus_of_quadratics() {
        let g = square(41);
        let h = g.spacing[0];
        let ts = [0.1, 0.3, 0.5, 0.8];
        let p = PotentialFamily::Identity.build(g).unwrap();
        let m = modulus_of_convexity(&p, &ts, 1).unwrap();
        for (t, v) in m.ts.iter().zip(&m.ms) {
            let hi = 0.5 * (t + 1.5 * h).powi(2);
            assert!(*v >= 0.5 * t * t - 1e-12 && *v <= hi, "t={t} m={v}");
        }
        let p = PotentialFamily::Diagonal { a: 2.0, b: 0.5 }.build(g).unwrap();
        let m = modulus_of_convexity(&p, &ts, 1).unwrap();
        for (t, v) in m.ts.iter().zip(&m.ms) {
            let lo = 0.25 * t * t;
            assert!(*v >= lo - 1e-12 && *v <= 0.25 * (t + 1.5 * h).powi(2), "t={t} m={v}");
        }
        assert!(m.ms.windows(2).all(|w| w[0] <= w[1]));
    }
}
