//! Level-set estimates: level profiles, the iteration lemma and its
//! vanishing level, the weighted field `F_φ = (D²φ)^{1/2}F`, the weak maximum
//! principle and the Dirichlet bound on sections.

use rand::Rng;

use crate::convex::{section, ConvexPotential};
use crate::error::{LmaError, Node, Result};
use crate::fit::loglog;
use crate::grid::GridFunction2D;
use crate::plegendre::Forcing;
use crate::solver::{cell_energy, solve, EllipticProblem, SolveOptions, SolveResult};

/// Space dimension of every solve in this crate.
pub const DIM: f64 = 2.0;

/// `q* = nq/(n+q)`.
pub fn q_star(n: f64, q: f64) -> f64 {
    n * q / (n + q)
}

/// Per-node `(D²φ)^{1/2}F` on the nodes where the Hessian and `F` exist.
pub fn weighted_field(p: &ConvexPotential, flux: &[GridFunction2D; 2]) -> Result<[GridFunction2D; 2]> {
    let g = *p.grid();
    let mut out = [
        GridFunction2D::zeros(g, vec![false; g.len()]),
        GridFunction2D::zeros(g, vec![false; g.len()]),
    ];
    let mut bad: Vec<Node> = Vec::new();
    for k in 0..g.len() {
        if !(p.hessian_mask[k] && flux[0].mask[k] && flux[1].mask[k]) {
            continue;
        }
        match p.hessian[k].sqrt_spd(1e-14) {
            Some(s) => {
                let v = s.apply([flux[0].values[k], flux[1].values[k]]);
                for a in 0..2 {
                    out[a].values[k] = v[a];
                    out[a].mask[k] = true;
                }
            }
            None => bad.push(g.node_of(k)),
        }
    }
    if !bad.is_empty() {
        return Err(LmaError::NotSpd { nodes: bad });
    }
    Ok(out)
}

/// `|v|` of a vector field, restricted to `region`.
fn magnitude(v: &[GridFunction2D; 2], region: &[bool]) -> GridFunction2D {
    let g = v[0].grid;
    let mut out = GridFunction2D::zeros(g, vec![false; g.len()]);
    for k in 0..g.len() {
        if region[k] {
            out.mask[k] = true;
            if v[0].mask[k] && v[1].mask[k] {
                out.values[k] = v[0].values[k].hypot(v[1].values[k]);
            }
        }
    }
    out
}

fn restrict(f: &GridFunction2D, region: &[bool]) -> GridFunction2D {
    let mut out = f.clone();
    for k in 0..out.values.len() {
        out.mask[k] = region[k];
        if !(region[k] && f.mask[k]) {
            out.values[k] = 0.0;
        }
    }
    out
}

/// Distribution function of a grid function on a level ladder.
///
/// As data of the iteration lemma the profile is the step function
/// `ω(x) = omegas[i]` for `x ∈ [ks[i], ks[i+1])`, continued by the last
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProfile {
    pub ks: Vec<f64>,
    pub omegas: Vec<f64>,
    pub k0: f64,
}

impl LevelProfile {
    /// First level at which the profile is zero.
    pub fn vanishing_level(&self) -> Option<f64> {
        self.omegas
            .iter()
            .position(|&w| w == 0.0)
            .map(|i| self.ks[i])
    }

    /// Checks `ω(h) ≤ C(h−k)^{−α}ω(k)^β` for every `h > k ≥ k₀` of the step
    /// function. The worst pair for steps `i ≤ j` is `k = ks[i]`, `h → ks[j+1]`.
    pub fn satisfies_recursion(&self, params: &IterationParams) -> bool {
        let n = self.ks.len();
        for j in 0..n {
            let wj = self.omegas[j];
            if wj == 0.0 {
                continue;
            }
            let Some(&end) = self.ks.get(j + 1) else {
                // a positive tail never vanishes; the hypothesis fails for large h
                return false;
            };
            for i in 0..=j {
                let gap = end - self.ks[i];
                let bound = params.c * gap.powf(-params.alpha) * self.omegas[i].powf(params.beta);
                if wj > bound {
                    return false;
                }
            }
        }
        true
    }
}

/// `ω(k) = |{u > k}|` by node counting times cell area; levels are sorted.
pub fn level_profile(u: &GridFunction2D, levels: &[f64]) -> LevelProfile {
    let mut ks = levels.to_vec();
    ks.sort_by(f64::total_cmp);
    let mut vals: Vec<f64> = u.masked_values().collect();
    vals.sort_by(f64::total_cmp);
    let area = u.grid.cell_area();
    let omegas = ks
        .iter()
        .map(|&k| {
            let above = vals.len() - vals.partition_point(|&v| v <= k);
            above as f64 * area
        })
        .collect();
    LevelProfile {
        k0: ks.first().copied().unwrap_or(0.0),
        ks,
        omegas,
    }
}

/// `(C, α, β)` of the recursion `ω(h) ≤ C(h−k)^{−α}ω(k)^β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationParams {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl IterationParams {
    pub fn new(c: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 1.0) {
            return Err(LmaError::BetaNotAboveOne(beta));
        }
        if !(c > 0.0 && alpha > 0.0) {
            return Err(LmaError::InvalidArgument(format!(
                "iteration needs C > 0 and alpha > 0, got C = {c}, alpha = {alpha}"
            )));
        }
        Ok(IterationParams { c, alpha, beta })
    }
}

/// `d = C^{1/α} ω(k₀)^{(β−1)/α} 2^{β/(β−1)}`: the profile vanishes at `k₀ + d`.
pub fn iteration_vanishing_level(params: &IterationParams, omega_k0: f64) -> Result<f64> {
    let IterationParams { c, alpha, beta } = *params;
    if !(beta > 1.0) {
        return Err(LmaError::BetaNotAboveOne(beta));
    }
    if !(omega_k0 >= 0.0) {
        return Err(LmaError::InvalidArgument(format!("omega(k0) = {omega_k0} is negative")));
    }
    Ok(c.powf(1.0 / alpha) * omega_k0.powf((beta - 1.0) / alpha) * 2f64.powf(beta / (beta - 1.0)))
}

/// Random step profile obeying the recursion, built greedily: each step is
/// as wide and as tall as the constraints from all earlier steps allow, up
/// to a random slack, and the profile is cut to zero once it falls below
/// `1e-12·ω(k₀)`.
pub fn synthetic_profile<R: Rng>(params: &IterationParams, omega_k0: f64, k0: f64, rng: &mut R) -> LevelProfile {
    let IterationParams { c, alpha, beta } = *params;
    let mut ks = vec![k0];
    let mut ws = vec![omega_k0];
    if omega_k0 == 0.0 {
        return LevelProfile { ks, omegas: ws, k0 };
    }
    loop {
        let j = ks.len() - 1;
        let wj = ws[j];
        // own step: wj ≤ C Δ^{-α} wj^β
        let mut end = ks[j] + (c * wj.powf(beta - 1.0)).powf(1.0 / alpha);
        // earlier steps: wj ≤ C (end − k_i)^{-α} w_i^β
        for i in 0..j {
            end = end.min(ks[i] + (c * ws[i].powf(beta) / wj).powf(1.0 / alpha));
        }
        let next_k = ks[j] + rng.gen_range(0.3..1.0) * (end - ks[j]);
        // widths below an ulp of k round up; vanishing now is always admissible
        let rounded_ok = (0..=j).all(|i| wj <= c * (next_k - ks[i]).powf(-alpha) * ws[i].powf(beta));
        if !rounded_ok || next_k <= ks[j] {
            ws[j] = 0.0;
            break;
        }
        let room = (0..=j)
            .map(|i| c * (next_k - ks[i]).powf(-alpha) * ws[i].powf(beta))
            .fold(wj, f64::min);
        let w = rng.gen_range(0.5..1.0) * room;
        ks.push(next_k);
        if w < 1e-12 * omega_k0 || ks.len() > 10_000 {
            ws.push(0.0);
            break;
        }
        ws.push(w);
    }
    LevelProfile { ks, omegas: ws, k0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPrincipleReport {
    pub sup_u: f64,
    pub boundary_sup_plus: f64,
    pub fphi_norm: f64,
    pub f_norm: f64,
    pub omega_measure: f64,
    pub q: f64,
    pub q_star: f64,
    /// `(‖F_φ‖_q + ‖f‖_{q*})|Ω|^{1/n−1/q}`, the data factor of the bound.
    pub bound_rhs: f64,
    /// `(sup u − sup_∂ u⁺)/bound_rhs`; zero when the data vanish.
    pub constant_needed: f64,
}

impl MaxPrincipleReport {
    pub fn summary(&self) -> String {
        format!(
            "sup_u = {:e}\nboundary_sup_plus = {:e}\nfphi_norm = {:e}\nf_norm = {:e}\nomega_measure = {:e}\nq = {}\nq_star = {}\nbound_rhs = {:e}\nconstant_needed = {:e}\n",
            self.sup_u,
            self.boundary_sup_plus,
            self.fphi_norm,
            self.f_norm,
            self.omega_measure,
            self.q,
            self.q_star,
            self.bound_rhs,
            self.constant_needed
        )
    }
}

/// Every term of the weak maximum principle for a solved problem. With
/// `F = 0` and `f = 0` the discrete maximum principle is checked directly.
pub fn weak_max_check(
    p: &ConvexPotential,
    problem: &EllipticProblem,
    forcing: &Forcing,
    result: &SolveResult,
    q: f64,
) -> Result<MaxPrincipleReport> {
    if !(q > DIM) {
        return Err(LmaError::InvalidArgument(format!("q = {q} must exceed n = 2")));
    }
    let u = &result.u;
    let region = &u.mask;
    let mut sup_u = f64::NEG_INFINITY;
    let mut bsup = 0.0f64;
    for k in 0..u.values.len() {
        if !region[k] {
            continue;
        }
        sup_u = sup_u.max(u.values[k]);
        if !problem.unknown[k] {
            bsup = bsup.max(u.values[k]);
        }
    }
    let qs = q_star(DIM, q);
    let fphi = weighted_field(p, &forcing.flux)?;
    let fphi_norm = magnitude(&fphi, region).lp_norm(q);
    let f_norm = restrict(&forcing.source, region).lp_norm(qs);
    let omega = u.measure();
    let bound_rhs = (fphi_norm + f_norm) * omega.powf(1.0 / DIM - 1.0 / q);
    let constant_needed = if bound_rhs > 0.0 {
        (sup_u - bsup) / bound_rhs
    } else {
        let excess = sup_u - bsup;
        if excess > 1e-8 {
            return Err(LmaError::DegenerateDenominator { excess });
        }
        0.0
    };
    Ok(MaxPrincipleReport {
        sup_u,
        boundary_sup_plus: bsup,
        fphi_norm,
        f_norm,
        omega_measure: omega,
        q,
        q_star: qs,
        bound_rhs,
        constant_needed,
    })
}

/// One level of the energy inequality for `v = (u − k)⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainLevel {
    pub k: f64,
    /// `|A(k)| = |{u > k}|`.
    pub area: f64,
    /// Discrete `∫Φ^{ij}D_ivD_jv`.
    pub lhs: f64,
    pub rhs: f64,
}

impl ChainLevel {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// `‖Dv‖²_Φ ≤ (λ^{−1/2}‖F_φ‖_q|A|^{1/2−1/q} + C_Sob‖f‖_{q*}|A|^{1/s−1/q*})²`
/// on a ladder of levels, `s` the dual exponent of `two_star`. For n ≥ 3
/// both powers of `|A|` equal `1/2 − 1/q`; in the plane `2*` is a free
/// choice and the `f` term carries its own power.
pub fn energy_chain(
    p: &ConvexPotential,
    forcing: &Forcing,
    result: &SolveResult,
    q: f64,
    two_star: f64,
    c_sob: f64,
    levels: &[f64],
) -> Result<Vec<ChainLevel>> {
    if !(q > DIM && two_star > 2.0) {
        return Err(LmaError::InvalidArgument(format!("need q > 2 and 2* > 2, got q = {q}, 2* = {two_star}")));
    }
    let qs = q_star(DIM, q);
    let s = two_star / (two_star - 1.0);
    let f_power = 1.0 / s - 1.0 / qs;
    if f_power < 0.0 {
        return Err(LmaError::InvalidArgument(format!(
            "Hölder step needs q* ≥ (2*)' but q* = {qs}, (2*)' = {s}"
        )));
    }
    let u = &result.u;
    let region = &u.mask;
    let fphi = weighted_field(p, &forcing.flux)?;
    let fphi_norm = magnitude(&fphi, region).lp_norm(q);
    let f_norm = restrict(&forcing.source, region).lp_norm(qs);
    let c = p.cofactor();
    let lam = p.lambda_lo;
    levels
        .iter()
        .map(|&k| {
            let v = u.map(|x| (x - k).max(0.0));
            let area = u.masked_values().filter(|&x| x > k).count() as f64 * u.grid.cell_area();
            let lhs = cell_energy(&c.values, &v);
            let root = fphi_norm * area.powf(0.5 - 1.0 / q) / lam.sqrt() + c_sob * f_norm * area.powf(f_power);
            Ok(ChainLevel {
                k,
                area,
                lhs,
                rhs: root * root,
            })
        })
        .collect()
}

/// `sup|u|` of zero-data Dirichlet solves on a ladder of sections, and the
/// fitted power of `sup|u|/(‖F_φ‖_q + ‖f‖_{q*})` in `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionRateReport {
    pub center: [f64; 2],
    pub heights: Vec<f64>,
    pub sups: Vec<f64>,
    pub data_norms: Vec<f64>,
    pub q: f64,
    /// `1/2 − n/(2q)`.
    pub expected: f64,
    /// `None` when every solution vanishes.
    pub exponent: Option<f64>,
    pub prefactor: Option<f64>,
}

pub fn dirichlet_section_bound(
    p: &ConvexPotential,
    x0: [f64; 2],
    heights: &[f64],
    forcing: &Forcing,
    q: f64,
    opts: SolveOptions,
) -> Result<SectionRateReport> {
    if !(q > DIM) {
        return Err(LmaError::InvalidArgument(format!("q = {q} must exceed n = 2")));
    }
    let g = *p.grid();
    let c = p.cofactor();
    let zero = GridFunction2D::zeros(g, GridFunction2D::full_mask(&g));
    let fphi = weighted_field(p, &forcing.flux)?;
    let qs = q_star(DIM, q);
    let mut sups = Vec::with_capacity(heights.len());
    let mut norms = Vec::with_capacity(heights.len());
    for &h in heights {
        let s = section(p, x0, h)?;
        if s.touches_boundary {
            return Err(LmaError::SectionNotInterior { h });
        }
        let prob = EllipticProblem::on_domain(g, &s.mask, c.values.clone(), forcing, &zero)?;
        let r = solve(&prob, opts)?;
        sups.push(r.u.lp_norm(f64::INFINITY));
        norms.push(magnitude(&fphi, &s.mask).lp_norm(q) + restrict(&forcing.source, &s.mask).lp_norm(qs));
    }
    let (exponent, prefactor) = if sups.iter().all(|&v| v == 0.0) {
        (None, None)
    } else {
        let ratio: Vec<f64> = sups.iter().zip(&norms).map(|(s, n)| s / n).collect();
        let f = loglog(heights, &ratio)?;
        (Some(f.slope), Some(f.intercept.exp()))
    };
    Ok(SectionRateReport {
        center: x0,
        heights: heights.to_vec(),
        sups,
        data_norms: norms,
        q,
        expected: 0.5 - DIM / (2.0 * q),
        exponent,
        prefactor,
    })
}

/// The flux `F = (1, 0)` on `x₁ > c₁`, zero on `x₁ < c₁` and `½` on the
/// line: bounded, homogeneous of degree zero about the section centre.
pub fn step_flux(p: &ConvexPotential, center: [f64; 2]) -> Forcing {
    let g = *p.grid();
    let mask = GridFunction2D::full_mask(&g);
    Forcing::from_fns(
        g,
        mask,
        move |x, _| {
            let d = x - center[0];
            if d.abs() < 1e-12 {
                0.5
            } else if d > 0.0 {
                1.0
            } else {
                0.0
            }
        },
        |_, _| 0.0,
        |_, _| 0.0,
    )
}
