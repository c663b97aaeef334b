//! sup/inf ratios of positive solutions of the homogeneous equation on
//! concentric sections.

use crate::convex::{section, ConvexPotential};
use crate::error::{LmaError, Node, Result};
use crate::grid::GridFunction2D;
use crate::plegendre::Forcing;
use crate::solver::{solve, EllipticProblem, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct HarnackReport {
    pub center: [f64; 2],
    /// Inner height; the solve runs on the section of height `2h`.
    pub h: f64,
    pub outer_nodes: usize,
    pub inner_nodes: usize,
    pub sup: f64,
    pub inf: f64,
    pub ratio: f64,
}

impl HarnackReport {
    pub fn summary(&self) -> String {
        format!(
            "center = {}, {}\nh = {}\nouter_nodes = {}\ninner_nodes = {}\nsup = {}\ninf = {}\nratio = {}\n",
            self.center[0], self.center[1], self.h, self.outer_nodes, self.inner_nodes, self.sup, self.inf, self.ratio
        )
    }
}

/// Solves `D_j(Φ^{ij}D_iu) = 0` on `S(x₀, 2h)` with Dirichlet values from
/// `data` and measures `sup/inf` over `S(x₀, h)`.
pub fn harnack_ratio(
    p: &ConvexPotential,
    x0: [f64; 2],
    h: f64,
    data: &GridFunction2D,
    opts: SolveOptions,
) -> Result<HarnackReport> {
    let outer = section(p, x0, 2.0 * h)?;
    if outer.touches_boundary {
        return Err(LmaError::SectionNotInterior { h: 2.0 * h });
    }
    let inner = section(p, x0, h)?;
    let g = *p.grid();
    let c = p.cofactor();
    let zero = Forcing::zero(g, GridFunction2D::full_mask(&g));
    let prob = EllipticProblem::on_domain(g, &outer.mask, c.values.clone(), &zero, data)?;
    let mut any_positive = false;
    for k in 0..g.len() {
        if outer.mask[k] && !prob.unknown[k] {
            let v = prob.boundary[k];
            if !(v >= 0.0) {
                return Err(LmaError::InvalidArgument(format!(
                    "boundary data {v} at {:?} is not nonnegative",
                    g.node_of(k)
                )));
            }
            any_positive |= v > 0.0;
        }
    }
    if !any_positive {
        return Err(LmaError::InvalidArgument("boundary data vanish identically".into()));
    }
    let r = solve(&prob, opts)?;
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    let mut bad: Vec<Node> = Vec::new();
    for k in 0..g.len() {
        if inner.mask[k] {
            let v = r.u.values[k];
            if !(v > 0.0) {
                bad.push(g.node_of(k));
            }
            sup = sup.max(v);
            inf = inf.min(v);
        }
    }
    if !bad.is_empty() {
        return Err(LmaError::NonPositiveSolution { nodes: bad });
    }
    Ok(HarnackReport {
        center: x0,
        h,
        outer_nodes: outer.node_count,
        inner_nodes: inner.node_count,
        sup,
        inf,
        ratio: sup / inf,
    })
}
