//! Divergence-form elliptic problems `D_j(a^{ij} D_i u) = div G + g` with
//! Dirichlet data on masked grids, assembled from a per-cell discrete energy
//! and solved by Jacobi-preconditioned conjugate gradients.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::convex::{CofactorField, ConvexPotential};
use crate::error::{LmaError, Node, Result};
use crate::grid::{Grid, GridFunction2D};
use crate::plegendre::{
    forward_map, pullback_where_defined, transform_potential, transform_problem, Forcing, PltMap,
    TransformedProblem,
};
use crate::sym2::Sym2;

#[derive(Debug, Clone)]
pub struct EllipticProblem {
    pub grid: Grid,
    /// `a^{ij}` per node.
    pub coeff: Vec<Sym2>,
    /// `G` per node.
    pub flux: [Vec<f64>; 2],
    /// `g` per node.
    pub source: Vec<f64>,
    /// Dirichlet values, read at every node that is not an unknown.
    pub boundary: Vec<f64>,
    pub unknown: Vec<bool>,
    /// Declared eigenvalue bounds of `a`, checked on active cells if present.
    pub ell_bounds: Option<(f64, f64)>,
}

fn fill(field: &GridFunction2D) -> Vec<f64> {
    field
        .values
        .iter()
        .zip(&field.mask)
        .map(|(&v, &m)| if m { v } else { f64::NAN })
        .collect()
}

impl EllipticProblem {
    /// Unknowns are the nodes of `domain` whose 3×3 neighbourhood lies in
    /// `domain`; the rest of `domain` carries Dirichlet data from `boundary`.
    pub fn on_domain(
        grid: Grid,
        domain: &[bool],
        coeff: Vec<Sym2>,
        forcing: &Forcing,
        boundary: &GridFunction2D,
    ) -> Result<Self> {
        let dom = GridFunction2D::zeros(grid, domain.to_vec());
        let unknown = dom.interior8_mask();
        let bvals = boundary
            .values
            .iter()
            .zip(&boundary.mask)
            .zip(domain)
            .map(|((&v, &m), &d)| if m && d { v } else { f64::NAN })
            .collect();
        let p = EllipticProblem {
            grid,
            coeff,
            flux: [fill(&forcing.flux[0]), fill(&forcing.flux[1])],
            source: fill(&forcing.source),
            boundary: bvals,
            unknown,
            ell_bounds: None,
        };
        Ok(p)
    }

    /// The original equation with `a = Φ`, on the cofactor's mask.
    pub fn from_cofactor(c: &CofactorField, forcing: &Forcing, boundary: &GridFunction2D) -> Result<Self> {
        let domain: Vec<bool> = (0..c.grid.len())
            .map(|k| c.mask[k] && boundary.mask[k])
            .collect();
        EllipticProblem::on_domain(c.grid, &domain, c.values.clone(), forcing, boundary)
    }

    /// The transformed equation with `a = diag(−φ*_{ηη}/φ*_{ξξ}, 1)`.
    pub fn from_transformed(prob: &TransformedProblem, boundary: &GridFunction2D) -> Result<Self> {
        let coeff = prob.a.values.iter().map(|&a| Sym2::diag(a, 1.0)).collect();
        let domain: Vec<bool> = (0..prob.grid.len())
            .map(|k| prob.mask[k] && boundary.mask[k])
            .collect();
        EllipticProblem::on_domain(prob.grid, &domain, coeff, &prob.forcing(), boundary)
    }

    /// Restricts the unknowns to `keep`; dropped unknowns become Dirichlet nodes.
    pub fn restrict_unknowns(mut self, keep: &[bool]) -> Self {
        for (u, &k) in self.unknown.iter_mut().zip(keep) {
            *u = *u && k;
        }
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.ell_bounds = Some((lo, hi));
        self
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown.iter().filter(|&&u| u).count()
    }

    /// Cells with at least one unknown corner, by lower-left node.
    fn active_cells(&self) -> Vec<Node> {
        let g = &self.grid;
        let mut cells = Vec::new();
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                if corners(g, i, j).iter().any(|&k| self.unknown[k]) {
                    cells.push((i, j));
                }
            }
        }
        cells
    }

    fn check(&self) -> Result<()> {
        let g = &self.grid;
        let n = g.len();
        if self.coeff.len() != n
            || self.flux[0].len() != n
            || self.flux[1].len() != n
            || self.source.len() != n
            || self.boundary.len() != n
            || self.unknown.len() != n
        {
            return Err(LmaError::InvalidArgument("problem fields do not match the grid".into()));
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                if self.unknown[g.idx(i, j)] && (i == 0 || j == 0 || i + 1 == g.nx || j + 1 == g.ny) {
                    return Err(LmaError::InvalidArgument(format!(
                        "unknown node {:?} on the grid edge has no Dirichlet neighbour",
                        (i, j)
                    )));
                }
            }
        }
        let mut bad = Vec::new();
        for (i, j) in self.active_cells() {
            for k in corners(g, i, j) {
                let m = self.coeff[k];
                let ok_data = m.is_finite() && self.flux[0][k].is_finite() && self.flux[1][k].is_finite();
                if !ok_data {
                    return Err(LmaError::InvalidArgument(format!(
                        "coefficient or flux undefined at {:?}",
                        g.node_of(k)
                    )));
                }
                if !self.unknown[k] && !self.boundary[k].is_finite() {
                    return Err(LmaError::InvalidArgument(format!(
                        "missing Dirichlet value at {:?}",
                        g.node_of(k)
                    )));
                }
                let ev = m.eigenvalues();
                let bounds_ok = match self.ell_bounds {
                    Some((lo, hi)) => ev[0] >= lo * (1.0 - 1e-9) && ev[1] <= hi * (1.0 + 1e-9),
                    None => ev[0] > 0.0,
                };
                if !bounds_ok {
                    bad.push(g.node_of(k));
                }
            }
        }
        for k in 0..n {
            if self.unknown[k] && !self.source[k].is_finite() {
                return Err(LmaError::InvalidArgument(format!(
                    "source undefined at {:?}",
                    g.node_of(k)
                )));
            }
        }
        if !bad.is_empty() {
            bad.sort_unstable();
            bad.dedup();
            return Err(LmaError::SingularSystem(format!(
                "coefficient not uniformly elliptic at {} nodes (first {:?})",
                bad.len(),
                bad[0]
            )));
        }
        Ok(())
    }
}

#[inline]
fn corners(g: &Grid, i: usize, j: usize) -> [usize; 4] {
    [g.idx(i, j), g.idx(i + 1, j), g.idx(i, j + 1), g.idx(i + 1, j + 1)]
}

/// Local 4×4 energy matrix and flux load of one cell, corners ordered
/// `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`. The flag is false when the cell
/// needed the non-monotone cross-term fallback.
fn cell_matrix(a: Sym2, gbar: [f64; 2], h: [f64; 2]) -> ([[f64; 4]; 4], [f64; 4], bool) {
    let (h1, h2) = (h[0], h[1]);
    let w = h1 * h2;
    let vb = [-1.0, 1.0, 0.0, 0.0];
    let vt = [0.0, 0.0, -1.0, 1.0];
    let vl = [-1.0, 0.0, 1.0, 0.0];
    let vr = [0.0, -1.0, 0.0, 1.0];
    let sx = [-0.5 / h1, 0.5 / h1, -0.5 / h1, 0.5 / h1];
    let sy = [-0.5 / h2, -0.5 / h2, 0.5 / h2, 0.5 / h2];
    let mut m = [[0.0; 4]; 4];
    let mut outer = |v: &[f64; 4], u: &[f64; 4], c: f64| {
        for p in 0..4 {
            for q in 0..4 {
                m[p][q] += c * v[p] * u[q];
            }
        }
    };
    let c1 = a.xx - a.xy.abs() * h1 / h2;
    let c2 = a.yy - a.xy.abs() * h2 / h1;
    let monotone = c1 >= 0.0 && c2 >= 0.0;
    if monotone {
        outer(&vb, &vb, w * c1 / (2.0 * h1 * h1));
        outer(&vt, &vt, w * c1 / (2.0 * h1 * h1));
        outer(&vl, &vl, w * c2 / (2.0 * h2 * h2));
        outer(&vr, &vr, w * c2 / (2.0 * h2 * h2));
        let vd = if a.xy >= 0.0 {
            [-1.0, 0.0, 0.0, 1.0]
        } else {
            [0.0, 1.0, -1.0, 0.0]
        };
        outer(&vd, &vd, w * a.xy.abs() / (h1 * h2));
    } else {
        outer(&vb, &vb, w * a.xx / (2.0 * h1 * h1));
        outer(&vt, &vt, w * a.xx / (2.0 * h1 * h1));
        outer(&vl, &vl, w * a.yy / (2.0 * h2 * h2));
        outer(&vr, &vr, w * a.yy / (2.0 * h2 * h2));
        outer(&sx, &sy, w * a.xy);
        outer(&sy, &sx, w * a.xy);
    }
    let mut load = [0.0; 4];
    for p in 0..4 {
        load[p] = w * (gbar[0] * sx[p] + gbar[1] * sy[p]);
    }
    (m, load, monotone)
}

fn cell_average(p: &EllipticProblem, c: [usize; 4]) -> (Sym2, [f64; 2]) {
    let mut a = Sym2::default();
    let mut gb = [0.0; 2];
    for &k in &c {
        a = a + p.coeff[k] * 0.25;
        gb[0] += 0.25 * p.flux[0][k];
        gb[1] += 0.25 * p.flux[1][k];
    }
    (a, gb)
}

/// Symmetric sparse system over the unknowns, rows in node order.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Grid node of each unknown.
    pub nodes: Vec<usize>,
    pub nonmonotone_cells: usize,
}

impl LinearSystem {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yr = s;
        });
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let s = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        s.binary_search(&c)
            .map(|p| self.vals[self.row_ptr[r] + p])
            .unwrap_or(0.0)
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.entry(r, r)).collect()
    }
}

/// Exact gradient of the discrete energy
/// `∑_cells ½ uᵀM u − G·Du  +  ∑_nodes g u w`.
pub fn assemble(p: &EllipticProblem) -> Result<LinearSystem> {
    p.check()?;
    let g = &p.grid;
    let mut index = vec![usize::MAX; g.len()];
    let mut nodes = Vec::new();
    for k in 0..g.len() {
        if p.unknown[k] {
            index[k] = nodes.len();
            nodes.push(k);
        }
    }
    let n = nodes.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(9); n];
    let mut rhs = vec![0.0; n];
    let mut nonmonotone = 0;
    for (i, j) in p.active_cells() {
        let c = corners(g, i, j);
        let (a, gb) = cell_average(p, c);
        let (m, load, mono) = cell_matrix(a, gb, g.spacing);
        if !mono {
            nonmonotone += 1;
        }
        for s in 0..4 {
            let r = index[c[s]];
            if r == usize::MAX {
                continue;
            }
            rhs[r] += load[s];
            for t in 0..4 {
                let q = index[c[t]];
                if q == usize::MAX {
                    rhs[r] -= m[s][t] * p.boundary[c[t]];
                } else {
                    rows[r].push((q, m[s][t]));
                }
            }
        }
    }
    let w = g.cell_area();
    for (r, &k) in nodes.iter().enumerate() {
        rhs[r] -= p.source[k] * w;
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for row in &mut rows {
        row.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in row.iter() {
            if c == last {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                last = c;
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(LinearSystem {
        n,
        row_ptr,
        cols,
        vals,
        rhs,
        nodes,
        nonmonotone_cells: nonmonotone,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `max(20·√N, 200)`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Solution on the unknowns plus the Dirichlet nodes of active cells.
    pub u: GridFunction2D,
    pub iterations: usize,
    /// Relative residual `‖b − Ku‖/‖b‖`.
    pub residual: f64,
    pub unknowns: usize,
    pub nonmonotone_cells: usize,
    pub elapsed: Duration,
}

impl SolveResult {
    /// `iterations`, `residual` and wall time as `key = value` lines.
    pub fn stats_block(&self) -> String {
        format!(
            "unknowns = {}\niterations = {}\nresidual = {:e}\nnonmonotone_cells = {}\nwall_time_s = {:.6}\n",
            self.unknowns,
            self.iterations,
            self.residual,
            self.nonmonotone_cells,
            self.elapsed.as_secs_f64()
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG from `x = 0`.
pub fn pcg(sys: &LinearSystem, opts: SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
    let n = sys.n;
    let b = &sys.rhs;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if n == 0 || bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let diag = sys.diagonal();
    if let Some(r) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(LmaError::SingularSystem(format!("non-positive diagonal at unknown {r}")));
    }
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| ((20.0 * (n as f64).sqrt()) as usize).max(200));
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 1..=max_iter {
        sys.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(LmaError::SingularSystem("matrix is not positive definite".into()));
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= opts.tol {
            return Ok((x, it, res));
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(LmaError::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

pub fn solve(p: &EllipticProblem, opts: SolveOptions) -> Result<SolveResult> {
    let start = Instant::now();
    let sys = assemble(p)?;
    let (x, iterations, residual) = pcg(&sys, opts)?;
    let g = p.grid;
    let mut values = vec![0.0; g.len()];
    let mut mask = vec![false; g.len()];
    for (i, j) in p.active_cells() {
        for k in corners(&g, i, j) {
            if !p.unknown[k] {
                values[k] = p.boundary[k];
                mask[k] = true;
            }
        }
    }
    for (r, &k) in sys.nodes.iter().enumerate() {
        values[k] = x[r];
        mask[k] = true;
    }
    Ok(SolveResult {
        u: GridFunction2D { grid: g, values, mask },
        iterations,
        residual,
        unknowns: sys.n,
        nonmonotone_cells: sys.nonmonotone_cells,
        elapsed: start.elapsed(),
    })
}

/// The discrete energy whose gradient [`assemble`] builds, evaluated at `u`
/// (values at unknowns and at Dirichlet corners of active cells).
pub fn discrete_energy(p: &EllipticProblem, u: &[f64]) -> f64 {
    let g = &p.grid;
    let mut e = 0.0;
    for (i, j) in p.active_cells() {
        let c = corners(g, i, j);
        let (a, gb) = cell_average(p, c);
        let (m, load, _) = cell_matrix(a, gb, g.spacing);
        let uc = c.map(|k| u[k]);
        for s in 0..4 {
            for t in 0..4 {
                e += 0.5 * uc[s] * m[s][t] * uc[t];
            }
            if p.unknown[c[s]] {
                e -= load[s] * uc[s];
            }
        }
    }
    let w = g.cell_area();
    for k in 0..g.len() {
        if p.unknown[k] {
            e += p.source[k] * u[k] * w;
        }
    }
    e
}

/// `∑_cells uᵀM(ā)u ≈ ∫ a^{ij}D_iuD_ju` over cells whose four corners
/// are masked in `u`, with the same cell matrices as [`assemble`].
pub fn cell_energy(coeff: &[Sym2], u: &GridFunction2D) -> f64 {
    let g = &u.grid;
    let mut e = 0.0;
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let c = corners(g, i, j);
            if !c.iter().all(|&k| u.mask[k]) {
                continue;
            }
            let mut a = Sym2::default();
            for &k in &c {
                a = a + coeff[k] * 0.25;
            }
            let (m, _, _) = cell_matrix(a, [0.0; 2], g.spacing);
            let uc = c.map(|k| u.values[k]);
            for s in 0..4 {
                for t in 0..4 {
                    e += uc[s] * m[s][t] * uc[t];
                }
            }
        }
    }
    e
}

/// Problem with exact solution `u_exact`: `f = Φ^{ij}D_{ij}u − div F` by
/// differencing, Dirichlet data from `u_exact`.
pub fn manufactured_problem(
    u_exact: &GridFunction2D,
    p: &ConvexPotential,
    flux: &[GridFunction2D; 2],
) -> Result<(EllipticProblem, Forcing)> {
    let g = *p.grid();
    if u_exact.grid != g {
        return Err(LmaError::InvalidArgument("exact solution is not on the potential's grid".into()));
    }
    let c = p.cofactor();
    let (uxx, uyy, uxy) = (u_exact.d2(0), u_exact.d2(1), u_exact.d12());
    let (f1x, f2y) = (flux[0].d1(0), flux[1].d1(1));
    let mut source = GridFunction2D::zeros(g, vec![false; g.len()]);
    for k in 0..g.len() {
        let ok = uxx.mask[k] && uyy.mask[k] && uxy.mask[k] && f1x.mask[k] && f2y.mask[k] && c.mask[k];
        if ok {
            let m = c.values[k];
            source.values[k] = m.xx * uxx.values[k] + 2.0 * m.xy * uxy.values[k] + m.yy * uyy.values[k]
                - f1x.values[k]
                - f2y.values[k];
            source.mask[k] = true;
        }
    }
    let forcing = Forcing {
        flux: flux.clone(),
        source,
    };
    let prob = EllipticProblem::from_cofactor(&c, &forcing, u_exact)?;
    Ok((prob, forcing))
}

#[derive(Debug, Clone)]
pub struct PathComparison {
    pub direct: SolveResult,
    pub transformed: SolveResult,
    /// Transformed solution pulled back to the source grid.
    pub pulled_back: GridFunction2D,
    pub map: PltMap,
    pub compared_nodes: usize,
    pub max_diff: f64,
    pub l2_diff: f64,
}

/// Solves the original equation directly and through the transform, with
/// the transformed Dirichlet data taken from the direct solution's trace.
pub fn direct_vs_transformed(
    p: &ConvexPotential,
    forcing: &Forcing,
    boundary: &GridFunction2D,
    region: Option<&[bool]>,
    opts: SolveOptions,
) -> Result<PathComparison> {
    let c = p.cofactor();
    let direct_prob = EllipticProblem::from_cofactor(&c, forcing, boundary).map_err(|e| e.in_stage("direct"))?;
    let direct = solve(&direct_prob, opts).map_err(|e| e.in_stage("direct"))?;

    let map = forward_map(p).map_err(|e| e.in_stage("transform"))?;
    let tp = transform_potential(p, &map).map_err(|e| e.in_stage("transform"))?;
    let tprob = transform_problem(p, forcing, &tp, &map).map_err(|e| e.in_stage("transform"))?;
    let trace = map.push_forward(&direct.u).map_err(|e| e.in_stage("transform"))?;
    let tsolve = EllipticProblem::from_transformed(&tprob, &trace)
        .map_err(|e| e.in_stage("transformed solve"))?
        .with_bounds(p.lambda_lo.min(1.0), p.lambda_hi.max(1.0));
    let transformed = solve(&tsolve, opts).map_err(|e| e.in_stage("transformed solve"))?;
    let (pulled_back, _) = pullback_where_defined(&transformed.u, &map);

    let g = p.grid();
    let mut count = 0;
    let mut max_diff = 0.0f64;
    let mut l2 = 0.0;
    for k in 0..g.len() {
        let inside = region.map_or(true, |r| r[k]);
        if inside && pulled_back.mask[k] && direct.u.mask[k] {
            let d = (pulled_back.values[k] - direct.u.values[k]).abs();
            max_diff = max_diff.max(d);
            l2 += d * d * g.cell_area();
            count += 1;
        }
    }
    if count == 0 {
        return Err(LmaError::InvalidArgument("comparison region is empty".into()));
    }
    Ok(PathComparison {
        direct,
        transformed,
        pulled_back,
        map,
        compared_nodes: count,
        max_diff,
        l2_diff: l2.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PotentialFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Grid {
        Grid::square(n, 0.0, 1.0).unwrap()
    }

    fn laplace(g: Grid, boundary: &GridFunction2D, forcing: &Forcing) -> EllipticProblem {
        let mask = GridFunction2D::full_mask(&g);
        EllipticProblem::on_domain(g, &mask, vec![Sym2::IDENTITY; g.len()], forcing, boundary).unwrap()
    }

    #[test]
    fn laplace_stencil_is_five_point() {
        let g = unit(6);
        let mask = GridFunction2D::full_mask(&g);
        let z = GridFunction2D::zeros(g, mask.clone());
        let sys = assemble(&laplace(g, &z, &Forcing::zero(g, mask))).unwrap();
        // unknowns form a 4×4 block; an interior one couples to 4 neighbours
        let r = 5;
        assert!((sys.entry(r, r) - 4.0).abs() < 1e-14);
        for c in [1, 4, 6, 9] {
            assert!((sys.entry(r, c) + 1.0).abs() < 1e-14);
        }
        for c in [0, 2, 8, 10] {
            assert_eq!(sys.entry(r, c), 0.0);
        }
    }

    #[test]
    fn skew_stencil_hand_assembled() {
        // a = [[1, -e], [-e, 1]] with h = 1: the anti-diagonal split gives
        // centre 4 - 2e, axis neighbours -(1 - e), anti-diagonal neighbours -e
        let e = 0.3;
        let g = Grid::new(5, 5, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let mask = GridFunction2D::full_mask(&g);
        let z = GridFunction2D::zeros(g, mask.clone());
        let forcing = Forcing::zero(g, mask.clone());
        let prob = EllipticProblem::on_domain(g, &mask, vec![Sym2::new(1.0, -e, 1.0); g.len()], &forcing, &z).unwrap();
        let sys = assemble(&prob).unwrap();
        // unknowns are the 3×3 block; centre is unknown 4
        assert!((sys.entry(4, 4) - (4.0 - 2.0 * e)).abs() < 1e-14);
        for c in [1, 3, 5, 7] {
            assert!((sys.entry(4, c) + (1.0 - e)).abs() < 1e-14);
        }
        // (i+1, j-1) and (i-1, j+1)
        assert!((sys.entry(4, 2) + e).abs() < 1e-14);
        assert!((sys.entry(4, 6) + e).abs() < 1e-14);
        assert_eq!(sys.entry(4, 0), 0.0);
        assert_eq!(sys.entry(4, 8), 0.0);
        for r in 0..sys.n {
            for c in 0..sys.n {
                assert_eq!(sys.entry(r, c), sys.entry(c, r));
            }
        }
    }

    #[test]
    fn constant_flux_gives_zero() {
        let g = unit(17);
        let mask = GridFunction2D::full_mask(&g);
        let forcing = Forcing::from_fns(g, mask.clone(), |_, _| 0.7, |_, _| -1.3, |_, _| 0.0);
        let z = GridFunction2D::zeros(g, mask);
        let sys = assemble(&laplace(g, &z, &forcing)).unwrap();
        assert!(sys.rhs.iter().all(|v| v.abs() < 1e-14));
        let s = solve(&laplace(g, &z, &forcing), SolveOptions::default()).unwrap();
        assert!(s.u.lp_norm(f64::INFINITY) == 0.0);
    }

    #[test]
    fn manufactured_laplace_second_order() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [33, 65] {
            let g = Grid::square(n, -1.0, 1.0).unwrap();
            let p = PotentialFamily::Identity.build(g).unwrap();
            let mask = GridFunction2D::full_mask(&g);
            let u = GridFunction2D::from_fn(g, mask.clone(), |x, y| (pi * x).sin() * (pi * y).sin());
            let zero = [GridFunction2D::zeros(g, mask.clone()), GridFunction2D::zeros(g, mask.clone())];
            let (prob, forcing) = manufactured_problem(&u, &p, &zero).unwrap();
            let h = g.spacing[0];
            for k in 0..g.len() {
                if prob.unknown[k] {
                    let exact = -2.0 * pi * pi * u.values[k];
                    assert!((forcing.source.values[k] - exact).abs() < 2.0 * pi.powi(4) * h * h / 12.0);
                }
            }
            // the differenced source reproduces u exactly on the five-point stencil
            let s = solve(&prob, SolveOptions::default()).unwrap();
            assert!((0..g.len()).all(|k| !s.u.mask[k] || (s.u.values[k] - u.values[k]).abs() < 1e-10));

            let analytic = Forcing::from_fns(g, mask, |_, _| 0.0, |_, _| 0.0, |x, y| {
                -2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
            });
            let prob = EllipticProblem::from_cofactor(&p.cofactor(), &analytic, &u).unwrap();
            let s = solve(&prob, SolveOptions::default()).unwrap();
            let err = (0..g.len())
                .filter(|&k| s.u.mask[k])
                .map(|k| (s.u.values[k] - u.values[k]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "{errs:?}");
    }

    #[test]
    fn cubic_manufactured_skew_is_exact() {
        let g = Grid::square(21, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Skew { eps: 0.4 }.build(g).unwrap();
        let mask = GridFunction2D::full_mask(&g);
        let u = GridFunction2D::from_fn(g, mask.clone(), |x, y| x * x * y - 0.5 * x * y * y + x - 2.0 * y);
        let zero = [GridFunction2D::zeros(g, mask.clone()), GridFunction2D::zeros(g, mask)];
        let (prob, forcing) = manufactured_problem(&u, &p, &zero).unwrap();
        for k in 0..g.len() {
            if prob.unknown[k] {
                let (i, j) = g.node_of(k);
                let (x, y) = (g.x(i), g.y(j));
                // Φ = [[1, -ε], [-ε, 1]], D²u = [[2y, 2x - y], [2x - y, -x]]
                let exact = 2.0 * y - 2.0 * 0.4 * (2.0 * x - y) - x;
                assert!((forcing.source.values[k] - exact).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let g = Grid::square(33, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Skew { eps: 0.6 }.build(g).unwrap();
        let mask = GridFunction2D::full_mask(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bdry = GridFunction2D::from_parts(g, noise, mask.clone()).unwrap();
        let forcing = Forcing::from_fns(g, mask, |_, _| 0.0, |_, _| 0.0, |x, _| 1.0 + x * x);
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &forcing, &bdry).unwrap();
        let s = solve(&prob, SolveOptions::default()).unwrap();
        assert_eq!(s.nonmonotone_cells, 0);
        let bmax = (0..g.len())
            .filter(|&k| s.u.mask[k] && !prob.unknown[k])
            .map(|k| s.u.values[k])
            .fold(f64::MIN, f64::max);
        let imax = (0..g.len())
            .filter(|&k| prob.unknown[k])
            .map(|k| s.u.values[k])
            .fold(f64::MIN, f64::max);
        assert!(imax <= bmax + 1e-10);
    }

    #[test]
    fn solution_minimizes_discrete_energy() {
        let g = Grid::square(17, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Perturbed { amp: 0.1 }.build(g).unwrap();
        let mask = GridFunction2D::full_mask(&g);
        let forcing = Forcing::from_fns(g, mask.clone(), |x, _| x, |_, y| y * y, |x, y| x - y);
        let bdry = GridFunction2D::from_fn(g, mask, |x, y| x * y);
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &forcing, &bdry).unwrap();
        let s = solve(&prob, SolveOptions { tol: 1e-13, max_iter: None }).unwrap();
        let e0 = discrete_energy(&prob, &s.u.values);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut v = s.u.values.clone();
            let d: f64 = rng.gen_range(-1e-3..1e-3);
            for k in 0..g.len() {
                if prob.unknown[k] {
                    v[k] += d * rng.gen_range(-1.0..1.0);
                }
            }
            assert!(discrete_energy(&prob, &v) >= e0 - 1e-10);
        }
    }

    #[test]
    fn identity_paths_agree() {
        let g = Grid::square(33, -1.0, 1.0).unwrap();
        let p = PotentialFamily::Identity.build(g).unwrap();
        let mask = GridFunction2D::full_mask(&g);
        let forcing = Forcing::from_fns(g, mask.clone(), |_, _| 0.0, |_, _| 0.0, |_, _| 1.0);
        let bdry = GridFunction2D::zeros(g, mask);
        let cmp = direct_vs_transformed(&p, &forcing, &bdry, None, SolveOptions::default()).unwrap();
        assert!(cmp.max_diff < 1e-8, "{}", cmp.max_diff);
        assert_eq!(cmp.compared_nodes, g.len());
    }

    #[test]
    fn edge_unknowns_rejected() {
        let g = unit(5);
        let mask = GridFunction2D::full_mask(&g);
        let z = GridFunction2D::zeros(g, mask.clone());
        let mut prob = laplace(g, &z, &Forcing::zero(g, mask));
        prob.unknown[0] = true;
        assert!(matches!(assemble(&prob), Err(LmaError::InvalidArgument(_))));
    }
}
