//! validate → transform → solve both ways → pull back → estimates, with
//! CSV tables, a summary and a plot script under the output directory.

use std::path::Path;

use super::config::{ExperimentConfig, PotentialSource};
use super::harnack::harnack_ratio;
use super::holder::holder_scan;
use super::report::{f, plot_script, write_csv, Summary};
use crate::convex::{build_potential, ConvexPotential};
use crate::degiorgi::{energy_chain, level_profile, weak_max_check};
use crate::error::{LmaError, Result};
use crate::grid::GridFunction2D;
use crate::inequalities::{estimate_eps0, moser_bump, moser_threshold, moser_trudinger_check, sobolev_family};
use crate::plegendre::{dual_equation_residual, forward_map, transform_potential, transform_problem, Forcing};
use crate::solver::{direct_vs_transformed, solve, EllipticProblem, SolveOptions};

pub fn load_potential(cfg: &ExperimentConfig) -> Result<ConvexPotential> {
    let (lo, hi) = cfg.bounds();
    match &cfg.potential {
        PotentialSource::Family(fam) => {
            let g = cfg.grid()?;
            build_potential(fam.sample(g, GridFunction2D::full_mask(&g)), lo, hi)
        }
        PotentialSource::File(path) => {
            let phi = GridFunction2D::load(path, None)?;
            build_potential(phi, lo, hi)
        }
    }
}

/// `F` and `f` on the potential's grid. In weighted mode the configured flux
/// is `F_φ` and `F = (D²φ)^{−1/2}F_φ`, with the Hessian of the nearest
/// interior node on the edge.
pub fn forcing(cfg: &ExperimentConfig, p: &ConvexPotential) -> Result<Forcing> {
    let g = *p.grid();
    let mask = p.phi.mask.clone();
    let mut flux = [
        cfg.flux[0].sample(g, mask.clone()),
        cfg.flux[1].sample(g, mask.clone()),
    ];
    if cfg.weighted {
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                let (ci, cj) = (i.clamp(1, g.nx - 2), j.clamp(1, g.ny - 2));
                let kc = g.idx(ci, cj);
                if !p.hessian_mask[kc] {
                    continue;
                }
                let s = p.hessian[kc]
                    .sqrt_spd(1e-14)
                    .and_then(|s| s.inverse())
                    .ok_or_else(|| LmaError::NotSpd {
                        nodes: vec![(ci, cj)],
                    })?;
                let v = s.apply([flux[0].values[k], flux[1].values[k]]);
                flux[0].values[k] = v[0];
                flux[1].values[k] = v[1];
            }
        }
    }
    Ok(Forcing {
        flux,
        source: cfg.source.sample(g, mask),
    })
}

pub fn boundary(cfg: &ExperimentConfig, p: &ConvexPotential) -> GridFunction2D {
    cfg.boundary.sample(*p.grid(), p.phi.mask.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stages: Vec<StageOutcome>,
    pub tables: Vec<String>,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.passed)
    }
}

struct Run<'a> {
    out: &'a Path,
    summary: Summary,
    stages: Vec<StageOutcome>,
    tables: Vec<&'static str>,
}

impl Run<'_> {
    fn stage(&mut self, name: &'static str, passed: bool, block: String) {
        let detail = block.clone();
        self.summary
            .push(name, format!("{block}passed = {passed}\n"));
        self.stages.push(StageOutcome { name, passed, detail });
    }

    fn table<I: IntoIterator<Item = Vec<String>>>(&mut self, name: &'static str, header: &[&str], rows: I) -> Result<()> {
        write_csv(&self.out.join(name), header, rows)?;
        self.tables.push(name);
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        let mut overall = Summary::default();
        let passed = self.stages.iter().all(|s| s.passed);
        overall.push("pipeline", format!("passed = {passed}\nstages = {}\n", self.stages.len()));
        let text = format!("{}\n{}", overall.to_text(), self.summary.to_text());
        std::fs::write(self.out.join("summary.txt"), text).map_err(|e| LmaError::io(self.out.join("summary.txt"), e))?;
        std::fs::write(self.out.join("plot.gp"), plot_script(&self.tables))
            .map_err(|e| LmaError::io(self.out.join("plot.gp"), e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Validate,
    Transform,
    Solve,
    ComparePaths,
    MaxPrinciple,
    Sobolev,
    DeGiorgi,
    Moser,
    Holder,
    Harnack,
}

impl Stage {
    /// Stages of a full run; `Solve` is covered by `ComparePaths`.
    pub const PIPELINE: [Stage; 9] = [
        Stage::Validate,
        Stage::Transform,
        Stage::ComparePaths,
        Stage::MaxPrinciple,
        Stage::Sobolev,
        Stage::DeGiorgi,
        Stage::Moser,
        Stage::Holder,
        Stage::Harnack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Transform => "transform",
            Stage::Solve => "solve",
            Stage::ComparePaths => "compare-paths",
            Stage::MaxPrinciple => "maxprinciple",
            Stage::Sobolev => "sobolev",
            Stage::DeGiorgi => "degiorgi",
            Stage::Moser => "moser",
            Stage::Holder => "holder",
            Stage::Harnack => "harnack",
        }
    }
}

/// Runs every stage.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    run_selected(cfg, &Stage::PIPELINE)
}

/// Runs the selected stages in order, computing whatever they depend on
/// without reporting it. A failing assertion marks its stage and the run
/// continues; an error stops the run, keeps what was written and returns
/// the error tagged with its stage.
pub fn run_selected(cfg: &ExperimentConfig, selected: &[Stage]) -> Result<PipelineReport> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| LmaError::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| run_stages(cfg, selected)),
        None => run_stages(cfg, selected),
    }
}

fn run_stages(cfg: &ExperimentConfig, selected: &[Stage]) -> Result<PipelineReport> {
    let out = cfg.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| LmaError::io(out, e))?;
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| LmaError::io(out.join("config.txt"), e))?;
    let mut run = Run {
        out,
        summary: Summary::default(),
        stages: Vec::new(),
        tables: Vec::new(),
    };
    let res = stages(cfg, selected, &mut run);
    if let Err(e) = &res {
        run.summary.push("error", format!("message = {e}\n"));
    }
    run.finish()?;
    res?;
    Ok(PipelineReport {
        stages: run.stages,
        tables: run.tables.iter().map(|s| s.to_string()).collect(),
    })
}

fn levels_between(k0: f64, top: f64) -> Vec<f64> {
    if top > k0 {
        (0..16).map(|i| k0 + (top - k0) * i as f64 / 16.0).collect()
    } else {
        vec![k0]
    }
}

fn stages(cfg: &ExperimentConfig, selected: &[Stage], run: &mut Run) -> Result<()> {
    let want = |s: Stage| selected.contains(&s);
    let opts = SolveOptions::default();

    let p = load_potential(cfg).map_err(|e| e.in_stage("validate"))?;
    let g = *p.grid();
    if want(Stage::Validate) {
        let (dlo, dhi) = p.det_range();
        let r = &p.report;
        run.stage(
            "validate",
            r.accepted(),
            format!(
                "grid = {}x{}\ninterior_nodes = {}\ndet_min = {}\ndet_max = {}\nlambda = {}\nLambda = {}\n",
                g.nx, g.ny, r.interior_nodes, dlo, dhi, p.lambda_lo, p.lambda_hi
            ),
        );
    }

    let forcing = forcing(cfg, &p).map_err(|e| e.in_stage("transform"))?;
    if want(Stage::Transform) {
        let map = forward_map(&p).map_err(|e| e.in_stage("transform"))?;
        let t = transform_potential(&p, &map).map_err(|e| e.in_stage("transform"))?;
        let prob = transform_problem(&p, &forcing, &t, &map).map_err(|e| e.in_stage("transform"))?;
        let disc = t.discrepancy.max();
        let dual = dual_equation_residual(&t);
        t.phistar
            .save(&run.out.join("phi_star.gridtxt"), Some(&run.out.join("phi_star.mask")))
            .map_err(|e| e.in_stage("transform"))?;
        run.stage(
            "transform",
            disc.is_finite() && dual.is_finite(),
            format!(
                "target = {}x{}\nroundtrip_error = {}\nidentity_discrepancy = {}\ndual_residual = {}\nellipticity_checked = {}\n",
                map.target.nx,
                map.target.ny,
                map.roundtrip_error(),
                disc,
                dual,
                prob.checked
            ),
        );
    }

    let bdata = boundary(cfg, &p);
    let c = p.cofactor();
    let direct_prob = EllipticProblem::from_cofactor(&c, &forcing, &bdata).map_err(|e| e.in_stage("solve"))?;
    let needs_u = [Stage::Solve, Stage::ComparePaths, Stage::MaxPrinciple, Stage::DeGiorgi, Stage::Holder]
        .iter()
        .any(|&s| want(s));
    let direct = if want(Stage::ComparePaths) {
        let cmp = direct_vs_transformed(&p, &forcing, &bdata, None, opts).map_err(|e| e.in_stage("compare-paths"))?;
        let rows: Vec<Vec<String>> = (0..g.len())
            .filter(|&k| cmp.pulled_back.mask[k] && cmp.direct.u.mask[k])
            .map(|k| {
                let (i, j) = g.node_of(k);
                let (a, b) = (cmp.direct.u.values[k], cmp.pulled_back.values[k]);
                vec![i.to_string(), j.to_string(), f(g.x(i)), f(g.y(j)), f(a), f(b), f(a - b)]
            })
            .collect();
        run.table("paths.csv", &["i", "j", "x1", "x2", "direct", "pulled_back", "diff"], rows)?;
        run.stage(
            "compare-paths",
            cmp.max_diff <= cfg.path_tol,
            format!(
                "compared_nodes = {}\nmax_diff = {:e}\nl2_diff = {:e}\npath_tol = {}\ndirect_iterations = {}\ndirect_residual = {:e}\ntransformed_iterations = {}\ntransformed_residual = {:e}\nnonmonotone_cells = {}\n",
                cmp.compared_nodes,
                cmp.max_diff,
                cmp.l2_diff,
                cfg.path_tol,
                cmp.direct.iterations,
                cmp.direct.residual,
                cmp.transformed.iterations,
                cmp.transformed.residual,
                cmp.direct.nonmonotone_cells + cmp.transformed.nonmonotone_cells
            ),
        );
        Some(cmp.direct)
    } else if needs_u {
        Some(solve(&direct_prob, opts).map_err(|e| e.in_stage("solve"))?)
    } else {
        None
    };
    if want(Stage::Solve) {
        let r = direct.as_ref().expect("solved above");
        r.u.save(&run.out.join("u.gridtxt"), Some(&run.out.join("u.mask")))
            .map_err(|e| e.in_stage("solve"))?;
        run.stage("solve", r.residual.is_finite(), r.stats_block());
    }

    let mp = match &direct {
        Some(r) if want(Stage::MaxPrinciple) || want(Stage::DeGiorgi) => {
            Some(weak_max_check(&p, &direct_prob, &forcing, r, cfg.q).map_err(|e| e.in_stage("maxprinciple"))?)
        }
        _ => None,
    };
    if want(Stage::MaxPrinciple) {
        let mp = mp.as_ref().expect("checked above");
        run.stage("maxprinciple", mp.constant_needed.is_finite(), mp.summary());
    }

    let c_sob = if want(Stage::Sobolev) || want(Stage::DeGiorgi) {
        let fam = sobolev_family(&c, &p.phi.mask, cfg.sobolev_trials, cfg.two_star, cfg.seed)
            .map_err(|e| e.in_stage("sobolev"))?;
        if want(Stage::Sobolev) {
            run.table(
                "sobolev.csv",
                &["trial", "ratio"],
                fam.ratios.iter().enumerate().map(|(t, r)| vec![t.to_string(), f(*r)]),
            )?;
            run.stage(
                "sobolev",
                fam.ratios.iter().all(|r| r.is_finite()),
                format!("trials = {}\ntwo_star = {}\nmax_ratio = {}\n", fam.ratios.len(), cfg.two_star, fam.max_ratio),
            );
        }
        fam.max_ratio
    } else {
        0.0
    };

    if want(Stage::DeGiorgi) {
        let r = direct.as_ref().expect("solved above");
        let mp = mp.as_ref().expect("checked above");
        let levels = levels_between(mp.boundary_sup_plus, mp.sup_u);
        let prof = level_profile(&r.u, &levels);
        run.table(
            "levels.csv",
            &["k", "omega"],
            prof.ks.iter().zip(&prof.omegas).map(|(k, w)| vec![f(*k), f(*w)]),
        )?;
        let chain = energy_chain(&p, &forcing, r, cfg.q, cfg.two_star, c_sob, &levels)
            .map_err(|e| e.in_stage("degiorgi"))?;
        run.table(
            "chain.csv",
            &["k", "area", "lhs", "rhs"],
            chain.iter().map(|c| vec![f(c.k), f(c.area), f(c.lhs), f(c.rhs)]),
        )?;
        let held = chain.iter().filter(|c| c.holds()).count();
        run.stage(
            "degiorgi",
            held == chain.len(),
            format!(
                "levels = {}\nheld = {}\nc_sob = {}\ntwo_star = {}\nvanishing_level = {}\n",
                chain.len(),
                held,
                c_sob,
                cfg.two_star,
                prof.vanishing_level().map_or("none".to_string(), f)
            ),
        );
    }

    if want(Stage::Moser) {
        let eps = estimate_eps0(&p, &cfg.eps_ladder).map_err(|e| e.in_stage("moser"))?;
        let beta = cfg.beta.unwrap_or_else(|| moser_threshold(eps.eps0, p.lambda_lo));
        let half = 0.5 * (cfg.domain[1] - cfg.domain[0]);
        let cell = g.spacing[0].max(g.spacing[1]);
        let big_r = 0.5 * half;
        let small_r = (big_r / 8.0).max(3.0 * cell);
        if small_r < big_r {
            let b = moser_bump(g, p.phi.mask.clone(), cfg.centers[0], big_r, small_r).map_err(|e| e.in_stage("moser"))?;
            let m = moser_trudinger_check(&b, &p, &c, beta, eps.eps0).map_err(|e| e.in_stage("moser"))?;
            run.stage(
                "moser",
                m.lhs.is_finite() && !m.saturated,
                format!("{}eps0_estimate = {}\n", m.summary(), eps.eps0),
            );
        } else {
            run.stage("moser", true, "skipped = grid too coarse for a bump of three cells\n".into());
        }
    }

    if want(Stage::Holder) {
        let u = &direct.as_ref().expect("solved above").u;
        let mut rows = Vec::new();
        let mut ok = true;
        let mut block = String::new();
        for (ci, &x0) in cfg.centers.iter().enumerate() {
            let h = holder_scan(u, &p, x0, &cfg.heights, cfg.q).map_err(|e| e.in_stage("holder"))?;
            ok &= h.gamma0 > 0.0 && h.gamma0 <= 1.0 + 1e-9 && h.two_scale_holds();
            block += &format!(
                "center_{ci} = {}, {}\ngamma0_{ci} = {}\nprefactor_{ci} = {}\ntheta_{ci} = {}\nK_{ci} = {}\n",
                x0[0], x0[1], h.gamma0, h.prefactor, h.theta, h.k_const
            );
            for (hh, (o, n)) in h.heights.iter().zip(h.oscillations.iter().zip(&h.node_counts)) {
                rows.push(vec![ci.to_string(), f(x0[0]), f(x0[1]), f(*hh), f(*o), n.to_string()]);
            }
        }
        run.table("holder.csv", &["center", "x1", "x2", "h", "osc", "nodes"], rows)?;
        run.stage("holder", ok, block);
    }

    if want(Stage::Harnack) {
        if let Some(hh) = cfg.harnack_height {
            let data = cfg.harnack_data.sample(g, p.phi.mask.clone());
            let mut rows = Vec::new();
            let mut ok = true;
            let mut max = 0.0f64;
            for (ci, &x0) in cfg.centers.iter().enumerate() {
                let r = harnack_ratio(&p, x0, hh, &data, opts).map_err(|e| e.in_stage("harnack"))?;
                ok &= r.ratio >= 1.0;
                max = max.max(r.ratio);
                rows.push(vec![ci.to_string(), f(x0[0]), f(x0[1]), f(hh), f(r.sup), f(r.inf), f(r.ratio)]);
            }
            run.table("harnack.csv", &["center", "x1", "x2", "h", "sup", "inf", "ratio"], rows)?;
            run.stage("harnack", ok, format!("height = {hh}\nmax_ratio = {max}\n"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PotentialFamily;

    #[test]
    fn identity_pipeline_passes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            grid: 65,
            sobolev_trials: 20,
            harnack_height: Some(0.1),
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let rep = run_pipeline(&cfg).unwrap();
        assert!(rep.passed(), "{:?}", rep.stages);
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        let g0 = text
            .lines()
            .find_map(|l| l.strip_prefix("gamma0_0 = "))
            .unwrap()
            .parse::<f64>()
            .unwrap();
        assert!((g0 - 0.5).abs() < 0.05, "{g0}");
        for t in ["paths.csv", "holder.csv", "levels.csv", "chain.csv", "sobolev.csv", "harnack.csv"] {
            assert!(dir.path().join(t).is_file(), "{t}");
        }
    }

    #[test]
    fn weighted_mode_recovers_target_field() {
        let mut cfg = ExperimentConfig {
            potential: PotentialSource::Family(PotentialFamily::Diagonal { a: 4.0, b: 1.0 }),
            weighted: true,
            ..Default::default()
        };
        cfg.flux[0] = super::super::config::ScalarSpec::Const(2.0);
        cfg.grid = 17;
        let p = load_potential(&cfg).unwrap();
        let fo = forcing(&cfg, &p).unwrap();
        // F = diag(1/2, 1)·(2, 0)
        assert!(fo.flux[0].values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
