//! The partial Legendre transform `(ξ, η) = (φ_{x₁}, x₂)` in two dimensions:
//! forward map and its inverse, the dual potential `φ*`, the transformed
//! elliptic problem, the energy functionals and pullback of solutions.

use rayon::prelude::*;

use crate::convex::{CofactorField, ConvexPotential};
use crate::error::{LmaError, Node, Result};
use crate::grid::{row_lagrange_slice, Grid, GridFunction2D};

/// How the `(ξ, η)` target grid covers the image of the source mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSpec {
    /// `ξ` spans the interval common to every row: no target node is masked out.
    Inscribed,
    /// `ξ` spans the union of the row images; nodes outside a row's image are masked.
    Bounding,
}

#[derive(Debug, Clone)]
pub struct PltMap {
    pub source: Grid,
    /// `ξ = φ_{x₁}` on the source grid.
    pub xi_field: GridFunction2D,
    /// `φ_{x₁x₁}` on the source grid.
    pub jacobian_field: GridFunction2D,
    /// Masked run of each source row.
    pub runs: Vec<Option<(usize, usize)>>,
    /// `[ξ_min, ξ_max]` of each source row's image.
    pub row_images: Vec<Option<(f64, f64)>>,
    /// `[[ξ_min, ξ_max], [η_min, η_max]]`
    pub image_bbox: [[f64; 2]; 2],
    /// Target row `t` sits on source row `row_offset + t`.
    pub row_offset: usize,
    pub target: Grid,
    pub target_mask: Vec<bool>,
    /// `x₁` with `φ_{x₁}(x₁, η) = ξ` at each target node; NaN off the mask.
    pub inverse: Vec<f64>,
}

pub fn forward_map(p: &ConvexPotential) -> Result<PltMap> {
    forward_map_with(p, TargetSpec::Inscribed, p.grid().nx)
}

/// Builds `P`, checks row-wise injectivity and inverts it on a target grid
/// with `nxi` columns.
pub fn forward_map_with(p: &ConvexPotential, spec: TargetSpec, nxi: usize) -> Result<PltMap> {
    let g = *p.grid();
    if nxi < 2 {
        return Err(LmaError::InvalidArgument("target grid needs at least 2 columns".into()));
    }
    let xi_field = p.grad[0].clone();
    let jacobian_field = p.hessian_component(0, 0);

    let mut runs = Vec::with_capacity(g.ny);
    let mut row_images = Vec::with_capacity(g.ny);
    for j in 0..g.ny {
        let run = p.phi.row_run(j)?;
        let image = match run {
            Some((lo, hi)) if hi > lo => {
                for i in lo..hi {
                    let (a, b) = (g.idx(i, j), g.idx(i + 1, j));
                    if !xi_field.mask[a] || !xi_field.mask[b] || !(xi_field.values[b] > xi_field.values[a]) {
                        return Err(LmaError::NotMonotone { row: j });
                    }
                }
                Some((xi_field.at(lo, j), xi_field.at(hi, j)))
            }
            _ => None,
        };
        runs.push(run.filter(|(lo, hi)| hi > lo));
        row_images.push(image);
    }
    for j in 0..g.ny {
        for i in 0..g.nx {
            if p.phi.is_interior(i, j) {
                let k = g.idx(i, j);
                if !(jacobian_field.mask[k] && jacobian_field.values[k] > 0.0) {
                    return Err(LmaError::NotMonotone { row: j });
                }
            }
        }
    }

    let rows: Vec<usize> = (0..g.ny).filter(|&j| row_images[j].is_some()).collect();
    let (j_lo, j_hi) = match (rows.first(), rows.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => return Err(LmaError::DegenerateImage { delta: 0.0, cell: g.spacing[1] }),
    };
    if rows.len() != j_hi - j_lo + 1 {
        return Err(LmaError::InvalidGrid("source mask rows are not contiguous".into()));
    }
    let imgs: Vec<(f64, f64)> = rows.iter().map(|&j| row_images[j].unwrap()).collect();
    let union = (
        imgs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        imgs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let common = (
        imgs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        imgs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    );
    let (xlo, xhi) = match spec {
        TargetSpec::Inscribed => common,
        TargetSpec::Bounding => union,
    };
    if !(xhi > xlo) {
        return Err(LmaError::DegenerateImage {
            delta: (xhi - xlo).max(0.0),
            cell: g.spacing[0],
        });
    }
    let target = Grid::new(
        nxi,
        j_hi - j_lo + 1,
        [xlo, g.y(j_lo)],
        [(xhi - xlo) / (nxi - 1) as f64, g.spacing[1]],
    )?;

    let slack = 1e-12 * (1.0 + xlo.abs().max(xhi.abs()));
    let per_row: Vec<Result<(Vec<bool>, Vec<f64>)>> = (0..target.ny)
        .into_par_iter()
        .map(|t| {
            let j = j_lo + t;
            let (lo, hi) = row_images[j].unwrap();
            let run = runs[j].unwrap();
            let row = &xi_field.values[g.idx(0, j)..g.idx(0, j) + g.nx];
            let mut mask = vec![false; target.nx];
            let mut x1 = vec![f64::NAN; target.nx];
            for c in 0..target.nx {
                let xi = target.x(c);
                let inside = match spec {
                    TargetSpec::Inscribed => true,
                    TargetSpec::Bounding => xi >= lo - slack && xi <= hi + slack,
                };
                if inside {
                    mask[c] = true;
                    x1[c] = invert_row(row, &g, run, xi.clamp(lo, hi));
                }
            }
            Ok((mask, x1))
        })
        .collect();
    let mut target_mask = Vec::with_capacity(target.len());
    let mut inverse = Vec::with_capacity(target.len());
    for r in per_row {
        let (m, x) = r?;
        target_mask.extend(m);
        inverse.extend(x);
    }
    Ok(PltMap {
        source: g,
        xi_field,
        jacobian_field,
        runs,
        row_images,
        image_bbox: [[union.0, union.1], [g.y(j_lo), g.y(j_hi)]],
        row_offset: j_lo,
        target,
        target_mask,
        inverse,
    })
}

/// Solves `ξ(x₁) = xi` on one row by bisection on the row interpolant,
/// after bracketing between consecutive nodes.
fn invert_row(row: &[f64], g: &Grid, run: (usize, usize), xi: f64) -> f64 {
    let (lo, hi) = run;
    if xi <= row[lo] {
        return g.x(lo);
    }
    if xi >= row[hi] {
        return g.x(hi);
    }
    // largest i with row[i] <= xi
    let mut a = lo;
    let mut b = hi;
    while b - a > 1 {
        let m = (a + b) / 2;
        if row[m] <= xi {
            a = m;
        } else {
            b = m;
        }
    }
    if row[a] == xi {
        return g.x(a);
    }
    let f = |x: f64| row_lagrange_slice(row, g.origin[0], g.spacing[0], run, x, 6) - xi;
    let (mut xa, mut xb) = (g.x(a), g.x(b));
    let mut fa = f(xa);
    for _ in 0..200 {
        let xm = 0.5 * (xa + xb);
        if xm <= xa || xm >= xb {
            break;
        }
        let fm = f(xm);
        if fm == 0.0 {
            return xm;
        }
        if (fm < 0.0) == (fa < 0.0) {
            xa = xm;
            fa = fm;
        } else {
            xb = xm;
        }
    }
    0.5 * (xa + xb)
}

impl PltMap {
    /// Source row carrying target row `t`.
    #[inline]
    pub fn source_row(&self, t: usize) -> usize {
        self.row_offset + t
    }

    /// Target row carrying source row `j`, if any.
    pub fn target_row(&self, j: usize) -> Option<usize> {
        (j >= self.row_offset && j - self.row_offset < self.target.ny).then(|| j - self.row_offset)
    }

    pub fn target_template(&self) -> GridFunction2D {
        GridFunction2D::zeros(self.target, self.target_mask.clone())
    }

    /// `max |ξ(P⁻¹(ξ, η)) − ξ|` over the target mask.
    pub fn roundtrip_error(&self) -> f64 {
        let g = &self.source;
        let mut worst = 0.0f64;
        for t in 0..self.target.ny {
            let j = self.source_row(t);
            let run = self.runs[j].unwrap();
            for c in 0..self.target.nx {
                let k = self.target.idx(c, t);
                if self.target_mask[k] {
                    let back = self.xi_field.row_quintic(j, run, self.inverse[k]);
                    let _ = g;
                    worst = worst.max((back - self.target.x(c)).abs());
                }
            }
        }
        worst
    }

    /// `ũ(ξ, η) = u(P⁻¹(ξ, η))`, six-point Lagrange along source rows. `u` must be
    /// masked on every source run.
    pub fn push_forward(&self, u: &GridFunction2D) -> Result<GridFunction2D> {
        if u.grid != self.source {
            return Err(LmaError::InvalidArgument("field is not on the source grid".into()));
        }
        let mut out = self.target_template();
        for t in 0..self.target.ny {
            let j = self.source_row(t);
            let run = self.runs[j].unwrap();
            if (run.0..=run.1).any(|i| !u.mask[u.grid.idx(i, j)]) {
                return Err(LmaError::InvalidArgument(format!(
                    "field is not defined on all of source row {j}"
                )));
            }
            for c in 0..self.target.nx {
                let k = self.target.idx(c, t);
                if self.target_mask[k] {
                    out.values[k] = u.row_quintic(j, run, self.inverse[k]);
                }
            }
        }
        Ok(out)
    }

    /// `P(x)` at source node `(i, j)`.
    pub fn image_of_node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.xi_field.at(i, j), self.source.y(j)]
    }
}

/// Second-derivative fields of `φ*`.
#[derive(Debug, Clone)]
pub struct DualDerivatives {
    pub xi: GridFunction2D,
    pub eta: GridFunction2D,
    pub xixi: GridFunction2D,
    pub xieta: GridFunction2D,
    pub etaeta: GridFunction2D,
}

/// Max node discrepancies between differenced `φ*` and the composed identities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityDiscrepancy {
    pub xi: f64,
    pub eta: f64,
    pub xixi: f64,
    pub xieta: f64,
    pub etaeta: f64,
}

impl IdentityDiscrepancy {
    pub fn max(&self) -> f64 {
        self.xi.max(self.eta).max(self.xixi).max(self.xieta).max(self.etaeta)
    }
}

#[derive(Debug, Clone)]
pub struct TransformedPotential {
    pub grid: Grid,
    pub mask: Vec<bool>,
    /// `φ*(ξ, η) = x₁ξ − φ(x₁, η)` at the inverse sample.
    pub phistar: GridFunction2D,
    /// Derivatives from composing source derivatives with `P⁻¹`.
    pub composed: DualDerivatives,
    /// Derivatives from differencing `phistar` on the target grid.
    pub differenced: DualDerivatives,
    /// `det D²φ` composed with `P⁻¹`.
    pub det: GridFunction2D,
    /// Target nodes with a centred 3×3 stencil whose row interpolation
    /// stencil avoids the source nodes carrying one-sided derivatives.
    pub core: Vec<bool>,
    /// Taken over `core`.
    pub discrepancy: IdentityDiscrepancy,
}

fn compose(map: &PltMap, f: &GridFunction2D, name: &str) -> Result<GridFunction2D> {
    map.push_forward(f)
        .map_err(|_| LmaError::InvalidArgument(format!("{name} is not defined on every source run")))
}

pub fn transform_potential(p: &ConvexPotential, map: &PltMap) -> Result<TransformedPotential> {
    let grid = map.target;
    let mask = map.target_mask.clone();
    let mut phistar = map.target_template();
    let mut x1 = map.target_template();
    for t in 0..grid.ny {
        let j = map.source_row(t);
        let run = map.runs[j].unwrap();
        for c in 0..grid.nx {
            let k = grid.idx(c, t);
            if mask[k] {
                let x = map.inverse[k];
                if !x.is_finite() {
                    return Err(LmaError::OutsideImage {
                        count: 1,
                        first: Some((c, t)),
                    });
                }
                x1.values[k] = x;
                phistar.values[k] = x * grid.x(c) - p.phi.row_quintic(j, run, x);
            }
        }
    }
    let phi2 = compose(map, &p.grad[1], "φ_x2")?;
    let h11 = compose(map, &p.hessian_component(0, 0), "φ_x1x1")?;
    let h12 = compose(map, &p.hessian_component(0, 1), "φ_x1x2")?;
    let det = compose(map, &p.det_field, "det D²φ")?;

    let composed = DualDerivatives {
        xi: x1,
        eta: phi2.map(|v| -v),
        xixi: h11.map(|v| 1.0 / v),
        xieta: zip(&h12, &h11, |b, a| -b / a),
        etaeta: zip(&det, &h11, |d, a| -d / a),
    };
    let differenced = DualDerivatives {
        xi: phistar.d1(0),
        eta: phistar.d1(1),
        xixi: phistar.d2(0),
        xieta: phistar.d12(),
        etaeta: phistar.d2(1),
    };
    let central = phistar.interior8_mask();
    let core: Vec<bool> = (0..grid.len())
        .map(|k| {
            let (_, t) = grid.node_of(k);
            let j = map.source_row(t);
            let (lo, hi) = map.runs[j].unwrap();
            central[k]
                && hi >= lo + 6
                && map.inverse[k] >= map.source.x(lo + 3)
                && map.inverse[k] <= map.source.x(hi - 3)
        })
        .collect();
    let diff = |a: &GridFunction2D, b: &GridFunction2D| {
        (0..grid.len())
            .filter(|&k| core[k])
            .fold(0.0f64, |m, k| m.max((a.values[k] - b.values[k]).abs()))
    };
    let discrepancy = IdentityDiscrepancy {
        xi: diff(&composed.xi, &differenced.xi),
        eta: diff(&composed.eta, &differenced.eta),
        xixi: diff(&composed.xixi, &differenced.xixi),
        xieta: diff(&composed.xieta, &differenced.xieta),
        etaeta: diff(&composed.etaeta, &differenced.etaeta),
    };
    Ok(TransformedPotential {
        grid,
        mask,
        phistar,
        composed,
        differenced,
        det,
        core,
        discrepancy,
    })
}

fn zip(a: &GridFunction2D, b: &GridFunction2D, f: impl Fn(f64, f64) -> f64) -> GridFunction2D {
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&a.mask)
        .map(|((&x, &y), &m)| if m { f(x, y) } else { 0.0 })
        .collect();
    a.with_values(values)
}

/// `max |det·φ*_{ξξ} + φ*_{ηη}|` with differenced `φ*` and composed det, over
/// the core nodes.
pub fn dual_equation_residual(t: &TransformedPotential) -> f64 {
    (0..t.grid.len())
        .filter(|&k| t.core[k])
        .map(|k| (t.det.values[k] * t.differenced.xixi.values[k] + t.differenced.etaeta.values[k]).abs())
        .fold(0.0, f64::max)
}

/// Radius of the largest disk centred at `P(center)` inside the image of
/// the disk `B_R(center)`, searched over source rows.
pub fn inscribed_disk(p: &ConvexPotential, map: &PltMap, center: [f64; 2], radius: f64) -> Result<f64> {
    let g = map.source;
    if !(radius > 0.0) {
        return Err(LmaError::InvalidArgument("radius must be positive".into()));
    }
    let inside = |x: f64, y: f64| {
        x >= g.origin[0] && x <= g.x_max() && y >= g.origin[1] && y <= g.y_max()
    };
    if !inside(center[0] - radius, center[1] - radius) || !inside(center[0] + radius, center[1] + radius) {
        return Err(LmaError::InvalidArgument("disk leaves the source grid".into()));
    }
    let (_, dphi) = p
        .value_and_gradient(center)
        .ok_or_else(|| LmaError::InvalidArgument("center outside the domain".into()))?;
    let xc = dphi[0];
    let mut delta = radius;
    for j in 0..g.ny {
        let e = g.y(j) - center[1];
        if e.abs() >= radius {
            continue;
        }
        let Some(run) = map.runs[j] else {
            return Err(LmaError::InvalidArgument(format!("disk meets empty source row {j}")));
        };
        let s = (radius * radius - e * e).sqrt();
        let (a, b) = (center[0] - s, center[0] + s);
        if a < g.x(run.0) || b > g.x(run.1) {
            return Err(LmaError::InvalidArgument("disk leaves the source mask".into()));
        }
        let lo = map.xi_field.row_quintic(j, run, a);
        let hi = map.xi_field.row_quintic(j, run, b);
        let m = (xc - lo).min(hi - xc);
        let r = if m >= 0.0 { (e * e + m * m).sqrt() } else { e.abs() };
        delta = delta.min(r);
    }
    let cell = g.spacing[0].max(g.spacing[1]);
    if delta < cell {
        return Err(LmaError::DegenerateImage { delta, cell });
    }
    Ok(delta)
}

/// Right-hand side data of `D_j(a^{ij} D_i u) = div F + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub flux: [GridFunction2D; 2],
    pub source: GridFunction2D,
}

impl Forcing {
    pub fn zero(grid: Grid, mask: Vec<bool>) -> Self {
        let z = GridFunction2D::zeros(grid, mask);
        Forcing {
            flux: [z.clone(), z.clone()],
            source: z,
        }
    }

    pub fn from_fns(
        grid: Grid,
        mask: Vec<bool>,
        f1: impl Fn(f64, f64) -> f64,
        f2: impl Fn(f64, f64) -> f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        Forcing {
            flux: [
                GridFunction2D::from_fn(grid, mask.clone(), f1),
                GridFunction2D::from_fn(grid, mask.clone(), f2),
            ],
            source: GridFunction2D::from_fn(grid, mask, f),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flux
            .iter()
            .chain(std::iter::once(&self.source))
            .all(|g| g.masked_values().all(|v| v == 0.0))
    }
}

/// `(−φ*_{ηη}/φ*_{ξξ} ũ_ξ)_ξ + ũ_{ηη} = div G + g` on the target grid.
#[derive(Debug, Clone)]
pub struct TransformedProblem {
    pub grid: Grid,
    pub mask: Vec<bool>,
    pub a: GridFunction2D,
    pub flux: [GridFunction2D; 2],
    pub source: GridFunction2D,
    /// Target nodes whose preimage is an interior source node neighbourhood,
    /// where `λ ≤ a ≤ Λ` was enforced.
    pub checked: usize,
}

impl TransformedProblem {
    pub fn forcing(&self) -> Forcing {
        Forcing {
            flux: self.flux.clone(),
            source: self.source.clone(),
        }
    }
}

pub fn transform_problem(
    p: &ConvexPotential,
    forcing: &Forcing,
    t: &TransformedPotential,
    map: &PltMap,
) -> Result<TransformedProblem> {
    let f1 = compose(map, &forcing.flux[0], "F¹")?;
    let f2 = compose(map, &forcing.flux[1], "F²")?;
    let f = compose(map, &forcing.source, "f")?;
    let d = &t.composed;
    let a = zip(&d.etaeta, &d.xixi, |e, x| -e / x);
    let g1 = {
        let mut out = f1.clone();
        for k in 0..out.values.len() {
            if out.mask[k] {
                out.values[k] = f1.values[k] - f2.values[k] * d.xieta.values[k];
            }
        }
        out
    };
    let g2 = zip(&f2, &d.xixi, |v, x| v * x);
    let g = zip(&f, &d.xixi, |v, x| v * x);

    let (lo, hi) = (p.lambda_lo, p.lambda_hi);
    let tol = 1e-9 * hi.max(1.0);
    let src = map.source;
    let mut bad: Vec<Node> = Vec::new();
    let mut checked = 0;
    for tr in 0..t.grid.ny {
        let j = map.source_row(tr);
        let Some((rlo, rhi)) = map.runs[j] else { continue };
        if rhi < rlo + 2 {
            continue;
        }
        for c in 0..t.grid.nx {
            let k = t.grid.idx(c, tr);
            if !t.mask[k] {
                continue;
            }
            let x = map.inverse[k];
            let cell = ((x - src.origin[0]) / src.spacing[0]).floor().max(0.0) as usize;
            // cubic stencil nodes must all be validated interior nodes
            let s0 = cell.saturating_sub(1).max(rlo).min(rhi.saturating_sub(3).max(rlo));
            let interior = (s0..=(s0 + 3).min(rhi)).all(|i| p.phi.is_interior(i, j));
            if !interior {
                continue;
            }
            checked += 1;
            let v = a.values[k];
            if !(v >= lo - tol && v <= hi + tol) {
                bad.push((c, tr));
            }
        }
    }
    if !bad.is_empty() {
        return Err(LmaError::EllipticityViolated { lo, hi, nodes: bad });
    }
    Ok(TransformedProblem {
        grid: t.grid,
        mask: t.mask.clone(),
        a,
        flux: [g1, g2],
        source: g,
        checked,
    })
}

/// Sixth-order gradient; a direction with no masked neighbour (isolated
/// corner nodes of a staircase mask) contributes zero.
fn gradient6(u: &GridFunction2D) -> [GridFunction2D; 2] {
    [u.d1_sixth(0), u.d1_sixth(1)].map(|mut d| {
        for k in 0..d.values.len() {
            if !d.mask[k] {
                d.values[k] = 0.0;
            }
        }
        d
    })
}

/// `A(u) = ∫ Φ^{ij}D_iuD_ju − 2F·Du + 2fu` by trapezoid quadrature on the
/// mask of `u`, with fourth-order gradients.
pub fn energy(u: &GridFunction2D, forcing: &Forcing, c: &CofactorField) -> f64 {
    let [ux, uy] = gradient6(u);
    let g = &u.grid;
    u.integrate_with(|i, j, v| {
        let k = g.idx(i, j);
        let m = c.values[k];
        let (a, b) = (ux.values[k], uy.values[k]);
        m.xx * a * a + 2.0 * m.xy * a * b + m.yy * b * b
            - 2.0 * (forcing.flux[0].values[k] * a + forcing.flux[1].values[k] * b)
            + 2.0 * forcing.source.values[k] * v
    })
}

/// `A*(ũ) = ∫ a ũ_ξ² + ũ_η² − 2G·Dũ + 2gũ` on the mask of `ũ`.
pub fn energy_star(ut: &GridFunction2D, prob: &TransformedProblem) -> f64 {
    let [ux, uy] = gradient6(ut);
    let g = &ut.grid;
    ut.integrate_with(|i, j, v| {
        let k = g.idx(i, j);
        let (a, b) = (ux.values[k], uy.values[k]);
        prob.a.values[k] * a * a + b * b
            - 2.0 * (prob.flux[0].values[k] * a + prob.flux[1].values[k] * b)
            + 2.0 * prob.source.values[k] * v
    })
}

/// `u(x) = ũ(P(x))`, linear along the target row through `P(x)`. Source
/// nodes whose image falls outside a fully masked target cell are unmasked.
pub fn pullback_where_defined(ut: &GridFunction2D, map: &PltMap) -> (GridFunction2D, usize) {
    let src = map.source;
    let tg = &map.target;
    let mut out = GridFunction2D::zeros(src, vec![false; src.len()]);
    let mut missing = 0;
    for j in 0..src.ny {
        let Some(run) = map.runs[j] else { continue };
        let tr = map.target_row(j);
        for i in run.0..=run.1 {
            let k = src.idx(i, j);
            let v = tr.and_then(|t| {
                let xi = map.xi_field.values[k];
                let s = (xi - tg.origin[0]) / tg.spacing[0];
                let eps = 1e-9;
                if s < -eps || s > (tg.nx - 1) as f64 + eps {
                    return None;
                }
                let c = (s.floor().max(0.0) as usize).min(tg.nx - 2);
                let w = (s - c as f64).clamp(0.0, 1.0);
                let (ka, kb) = (tg.idx(c, t), tg.idx(c + 1, t));
                if w == 0.0 && ut.mask[ka] {
                    return Some(ut.values[ka]);
                }
                if w == 1.0 && ut.mask[kb] {
                    return Some(ut.values[kb]);
                }
                (ut.mask[ka] && ut.mask[kb]).then(|| (1.0 - w) * ut.values[ka] + w * ut.values[kb])
            });
            match v {
                Some(v) => {
                    out.values[k] = v;
                    out.mask[k] = true;
                }
                None => missing += 1,
            }
        }
    }
    (out, missing)
}

/// Strict pullback: every source node must map into the solved target region.
pub fn pullback_solution(ut: &GridFunction2D, map: &PltMap) -> Result<GridFunction2D> {
    let (out, missing) = pullback_where_defined(ut, map);
    if missing > 0 {
        let src = map.source;
        let first = (0..src.len())
            .find(|&k| {
                let (_, j) = src.node_of(k);
                map.runs[j].is_some_and(|(lo, hi)| (lo..=hi).contains(&src.node_of(k).0)) && !out.mask[k]
            })
            .map(|k| src.node_of(k));
        return Err(LmaError::OutsideImage { count: missing, first });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PotentialFamily;

    fn square(n: usize) -> Grid {
        Grid::square(n, -1.0, 1.0).unwrap()
    }

    #[test]
    fn identity_map() {
        let p = PotentialFamily::Identity.build(square(17)).unwrap();
        let m = forward_map(&p).unwrap();
        assert!(m.jacobian_field.masked_values().all(|v| (v - 1.0).abs() < 1e-12));
        for k in 0..m.target.len() {
            let (c, t) = m.target.node_of(k);
            assert!((m.inverse[k] - m.target.x(c)).abs() < 1e-12);
            assert!((m.target.y(t) - m.source.y(t)).abs() < 1e-15);
        }
        assert!(m.roundtrip_error() < 1e-12);
    }

    #[test]
    fn skew_map_is_shear() {
        let eps = 0.3;
        let p = PotentialFamily::Skew { eps }.build(square(21)).unwrap();
        let m = forward_map_with(&p, TargetSpec::Bounding, 21).unwrap();
        for (i, j) in p.phi.masked_nodes() {
            let [xi, eta] = m.image_of_node(i, j);
            let (x, y) = (m.source.x(i), m.source.y(j));
            assert!((xi - (x + eps * y)).abs() < 1e-12 && eta == y);
        }
        assert!((m.image_bbox[0][0] + 1.0 + eps).abs() < 1e-12);
    }

    #[test]
    fn diagonal_stretch_doubles_width() {
        let p = PotentialFamily::Diagonal { a: 2.0, b: 1.0 }.build(square(17)).unwrap();
        let m = forward_map(&p).unwrap();
        let w = m.image_bbox[0][1] - m.image_bbox[0][0];
        assert!((w - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_monotone_row_rejected() {
        let g = square(9);
        let phi = PotentialFamily::Identity.build(g).unwrap();
        let mut bad = phi.clone();
        bad.grad[0].set(4, 3, 10.0);
        assert!(matches!(forward_map(&bad), Err(LmaError::NotMonotone { row: 3 })));
    }

    #[test]
    fn quadratic_duals_closed_form() {
        let eps = 0.5;
        let p = PotentialFamily::Skew { eps }.build(square(33)).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        for k in 0..t.grid.len() {
            let (c, r) = t.grid.node_of(k);
            let (xi, eta) = (t.grid.x(c), t.grid.y(r));
            let exact = 0.5 * (xi - eps * eta).powi(2) - 0.5 * eta * eta;
            assert!((t.phistar.values[k] - exact).abs() < 1e-12);
            assert!((t.composed.xieta.values[k] + eps).abs() < 1e-12);
        }
        assert!(t.discrepancy.max() < 1e-10, "{:?}", t.discrepancy);
        assert!(dual_equation_residual(&t) < 1e-10);
    }

    #[test]
    fn inscribed_disk_examples() {
        let g = square(81);
        for (fam, want) in [
            (PotentialFamily::Identity, 0.5),
            (PotentialFamily::Diagonal { a: 2.0, b: 1.0 }, 0.5),
            (PotentialFamily::Diagonal { a: 0.5, b: 2.0 }, 0.25),
        ] {
            let p = fam.build(g).unwrap();
            let m = forward_map(&p).unwrap();
            let d = inscribed_disk(&p, &m, [0.0, 0.0], 0.5).unwrap();
            assert!((d - want).abs() < 1e-9, "{fam:?}: {d}");
        }
    }

    #[test]
    fn skew_problem_constants() {
        let g = square(17);
        let p = PotentialFamily::Skew { eps: 0.5 }.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let forcing = Forcing::from_fns(g, p.phi.mask.clone(), |_, _| 1.0, |_, _| 1.0, |_, _| 0.0);
        let prob = transform_problem(&p, &forcing, &t, &m).unwrap();
        for k in 0..prob.grid.len() {
            assert!((prob.flux[0].values[k] - 1.5).abs() < 1e-12);
            assert!((prob.flux[1].values[k] - 1.0).abs() < 1e-12);
            assert!((prob.a.values[k] - 0.75).abs() < 1e-12);
        }
        let zero = Forcing::zero(g, p.phi.mask.clone());
        let prob = transform_problem(&p, &zero, &t, &m).unwrap();
        assert!(prob.forcing().is_zero());
    }

    #[test]
    fn pullback_identity_and_shear() {
        let eps = 0.25;
        let g = square(33);
        let p = PotentialFamily::Skew { eps }.build(g).unwrap();
        let m = forward_map_with(&p, TargetSpec::Bounding, 41).unwrap();
        let ut = GridFunction2D::from_fn(m.target, m.target_mask.clone(), |xi, _| xi);
        // row ends can land in half-masked target cells
        let (u, missing) = pullback_where_defined(&ut, &m);
        assert!(missing <= 2 * g.ny);
        assert!(pullback_solution(&ut, &m).is_err() == (missing > 0));
        for (i, j) in u.masked_nodes() {
            assert!((u.at(i, j) - (g.x(i) + eps * g.y(j))).abs() < 1e-12);
        }

        let p = PotentialFamily::Identity.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let ut = GridFunction2D::from_fn(m.target, m.target_mask.clone(), |x, y| (3.0 * x).sin() * y);
        let u = pullback_solution(&ut, &m).unwrap();
        for k in 0..g.len() {
            assert!((u.values[k] - ut.values[k]).abs() < 1e-13);
        }
    }

    fn bump(x: f64, y: f64) -> f64 {
        let s = (x * x + y * y) / 0.16;
        if s < 1.0 {
            (1.0 - s).powi(4)
        } else {
            0.0
        }
    }

    #[test]
    fn energy_identity_and_zero() {
        let g = square(33);
        let p = PotentialFamily::Identity.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let forcing = Forcing::from_fns(g, p.phi.mask.clone(), |x, _| x, |_, y| y * y, |x, y| x - y);
        let prob = transform_problem(&p, &forcing, &t, &m).unwrap();
        let u = GridFunction2D::from_fn(g, p.phi.mask.clone(), |x, y| (2.0 * x).sin() * (1.0 - y * y));
        let ut = m.push_forward(&u).unwrap();
        let (e, es) = (energy(&u, &forcing, &p.cofactor()), energy_star(&ut, &prob));
        assert!((e - es).abs() < 1e-12 * e.abs(), "{e} {es}");
        let zero = GridFunction2D::zeros(g, p.phi.mask.clone());
        assert_eq!(energy(&zero, &forcing, &p.cofactor()), 0.0);
    }

    #[test]
    fn skew_bump_energy_invariance() {
        let g = square(129);
        let p = PotentialFamily::Skew { eps: 0.5 }.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let zero = Forcing::zero(g, p.phi.mask.clone());
        let prob = transform_problem(&p, &zero, &t, &m).unwrap();
        let u = GridFunction2D::from_fn(g, p.phi.mask.clone(), bump);
        let ut = m.push_forward(&u).unwrap();
        let (e, es) = (energy(&u, &zero, &p.cofactor()), energy_star(&ut, &prob));
        assert!((e - es).abs() < 1e-6, "{e} {es} {:e}", e - es);
    }

    #[test]
    fn pullback_second_order() {
        // linear interpolation along rows: |err| ≤ h_ξ²/8 · max|ũ_ξξ|, and
        // |ũ_ξξ| ≤ 8 for this u and potential
        for n in [33, 65, 129] {
            let g = square(n);
            let p = PotentialFamily::Perturbed { amp: 0.1 }.build(g).unwrap();
            let m = forward_map(&p).unwrap();
            let u = |x: f64, y: f64| (2.0 * x + 0.5).sin() * (1.5 * y).cos();
            let mut ut = GridFunction2D::zeros(m.target, m.target_mask.clone());
            for k in 0..m.target.len() {
                if ut.mask[k] {
                    let (_, r) = m.target.node_of(k);
                    ut.values[k] = u(m.inverse[k], m.target.y(r));
                }
            }
            let (back, _) = pullback_where_defined(&ut, &m);
            let err = back
                .masked_nodes()
                .map(|(i, j)| (back.at(i, j) - u(g.x(i), g.y(j))).abs())
                .fold(0.0, f64::max);
            let h = m.target.spacing[0];
            assert!(err <= h * h, "n={n}: {err} vs {}", h * h);
        }
    }
}
