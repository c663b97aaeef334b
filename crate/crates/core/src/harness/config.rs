//! Flat `key = value` experiment configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{LmaError, Result};
use crate::families::PotentialFamily;
use crate::grid::{Grid, GridFunction2D};

/// Analytic scalar field.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarSpec {
    Zero,
    Const(f64),
    /// `a + b x₁ + c x₂`
    Linear(f64, f64, f64),
    /// `a sin(k₁x₁ + k₂x₂)`
    Sin(f64, f64, f64),
    /// `c |x − x₀|^p`, evaluated at distance `h/2` on the node at `x₀`.
    Radial { c: f64, p: f64, x0: [f64; 2] },
    /// `1` on `x₁ > s`, `0` below, `½` on the line.
    Step(f64),
}

fn numbers(spec: &str, args: &str) -> Result<Vec<f64>> {
    if args.is_empty() {
        return Ok(Vec::new());
    }
    args.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| LmaError::Config(format!("field `{spec}`: {e}")))
        })
        .collect()
}

impl ScalarSpec {
    /// `zero`, `const:c`, `linear:a,b,c`, `sin:a,k1,k2`, `radial:c,p[,x0,y0]`, `step:s`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (spec.trim(), ""),
        };
        let v = numbers(spec, args)?;
        let bad = || LmaError::Config(format!("field `{spec}`: wrong number of parameters"));
        Ok(match (name, v.len()) {
            ("zero", 0) => ScalarSpec::Zero,
            ("const", 1) => ScalarSpec::Const(v[0]),
            ("linear", 3) => ScalarSpec::Linear(v[0], v[1], v[2]),
            ("sin", 3) => ScalarSpec::Sin(v[0], v[1], v[2]),
            ("radial", 2) => ScalarSpec::Radial {
                c: v[0],
                p: v[1],
                x0: [0.0, 0.0],
            },
            ("radial", 4) => ScalarSpec::Radial {
                c: v[0],
                p: v[1],
                x0: [v[2], v[3]],
            },
            ("step", 1) => ScalarSpec::Step(v[0]),
            ("zero" | "const" | "linear" | "sin" | "radial" | "step", _) => return Err(bad()),
            _ => return Err(LmaError::Config(format!("unknown field kind `{name}`"))),
        })
    }

    pub fn eval(&self, x: f64, y: f64, h: f64) -> f64 {
        match *self {
            ScalarSpec::Zero => 0.0,
            ScalarSpec::Const(c) => c,
            ScalarSpec::Linear(a, b, c) => a + b * x + c * y,
            ScalarSpec::Sin(a, k1, k2) => a * (k1 * x + k2 * y).sin(),
            ScalarSpec::Radial { c, p, x0 } => {
                let r = (x - x0[0]).hypot(y - x0[1]).max(0.5 * h);
                c * r.powf(p)
            }
            ScalarSpec::Step(s) => {
                let d = x - s;
                if d.abs() < 1e-12 {
                    0.5
                } else if d > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(&self, grid: Grid, mask: Vec<bool>) -> GridFunction2D {
        let h = grid.spacing[0].min(grid.spacing[1]);
        GridFunction2D::from_fn(grid, mask, |x, y| self.eval(x, y, h))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarSpec::Zero) || matches!(self, ScalarSpec::Const(c) if *c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSource {
    Family(PotentialFamily),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub potential: PotentialSource,
    /// Determinant bounds; default to the family's own.
    pub lambda: Option<f64>,
    pub big_lambda: Option<f64>,
    pub flux: [ScalarSpec; 2],
    /// Read `flux` as a target `F_φ` and solve with `F = (D²φ)^{−1/2}F_φ`.
    pub weighted: bool,
    pub source: ScalarSpec,
    pub boundary: ScalarSpec,
    pub grid: usize,
    pub domain: [f64; 2],
    pub heights: Vec<f64>,
    pub centers: Vec<[f64; 2]>,
    pub q: f64,
    pub two_star: f64,
    pub beta: Option<f64>,
    pub eps_ladder: Vec<f64>,
    /// Max-norm tolerance of the direct/transformed comparison.
    pub path_tol: f64,
    pub harnack_height: Option<f64>,
    pub harnack_data: ScalarSpec,
    pub sobolev_trials: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            potential: PotentialSource::Family(PotentialFamily::Identity),
            lambda: None,
            big_lambda: None,
            flux: [ScalarSpec::Zero, ScalarSpec::Zero],
            weighted: false,
            source: ScalarSpec::Zero,
            boundary: ScalarSpec::Linear(0.0, 1.0, 0.0),
            grid: 65,
            domain: [-1.0, 1.0],
            heights: vec![0.32, 0.16, 0.08, 0.04, 0.02],
            centers: vec![[0.0, 0.0]],
            q: 4.0,
            two_star: 4.0,
            beta: None,
            eps_ladder: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            path_tol: 1e-3,
            harnack_height: None,
            harnack_data: ScalarSpec::Const(1.0),
            sobolev_trials: 100,
            out: PathBuf::from("lma-out"),
            seed: 0,
            threads: None,
        }
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| LmaError::Config(format!("`{key}`: {e}")))
        })
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| LmaError::Config(format!("`{key}`: {e}")))
}

impl ExperimentConfig {
    /// Parses the text of a config file; relative file paths resolve
    /// against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LmaError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(LmaError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        let mut c = ExperimentConfig::default();
        for (k, v) in &kv {
            let v = v.as_str();
            match k.as_str() {
                "potential" => {
                    c.potential = match v.strip_prefix("file:") {
                        Some(p) => {
                            let p = PathBuf::from(p.trim());
                            PotentialSource::File(match base {
                                Some(b) if p.is_relative() => b.join(p),
                                _ => p,
                            })
                        }
                        None => PotentialSource::Family(PotentialFamily::parse(v)?),
                    }
                }
                "lambda" => c.lambda = Some(num(k, v)?),
                "Lambda" => c.big_lambda = Some(num(k, v)?),
                "flux1" => c.flux[0] = ScalarSpec::parse(v)?,
                "flux2" => c.flux[1] = ScalarSpec::parse(v)?,
                "weighted" => c.weighted = num(k, v)?,
                "source" => c.source = ScalarSpec::parse(v)?,
                "boundary" => c.boundary = ScalarSpec::parse(v)?,
                "grid" => c.grid = num(k, v)?,
                "domain" => {
                    let d = list(k, v)?;
                    if d.len() != 2 {
                        return Err(LmaError::Config("`domain` takes `lo, hi`".into()));
                    }
                    c.domain = [d[0], d[1]];
                }
                "heights" => c.heights = list(k, v)?,
                "centers" => {
                    c.centers = v
                        .split(';')
                        .map(|p| {
                            let xy = list(k, p)?;
                            if xy.len() != 2 {
                                return Err(LmaError::Config("`centers` takes `x, y; x, y; ...`".into()));
                            }
                            Ok([xy[0], xy[1]])
                        })
                        .collect::<Result<_>>()?
                }
                "q" => c.q = num(k, v)?,
                "two_star" => c.two_star = num(k, v)?,
                "beta" => c.beta = Some(num(k, v)?),
                "eps_ladder" => c.eps_ladder = list(k, v)?,
                "path_tol" => c.path_tol = num(k, v)?,
                "harnack_height" => c.harnack_height = Some(num(k, v)?),
                "harnack_data" => c.harnack_data = ScalarSpec::parse(v)?,
                "sobolev_trials" => c.sobolev_trials = num(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "seed" => c.seed = num(k, v)?,
                "threads" => c.threads = Some(num(k, v)?),
                other => return Err(LmaError::Config(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LmaError::io(path, e))?;
        ExperimentConfig::parse(&text, path.parent())
    }

    /// Range checks, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LmaError::Config(m));
        let (lo, hi) = self.bounds();
        if !(lo > 0.0) || !(hi.is_finite()) {
            return err(format!("determinant bounds must be positive and finite, got [{lo}, {hi}]"));
        }
        if lo > hi {
            return err(format!("lambda = {lo} exceeds Lambda = {hi}"));
        }
        if !(9..=2049).contains(&self.grid) {
            return err(format!("grid = {} outside 9..=2049", self.grid));
        }
        if !(self.domain[1] > self.domain[0]) {
            return err("domain must have lo < hi".into());
        }
        if self.heights.len() < 4 || self.heights.iter().any(|&h| !(h > 0.0)) {
            return err("heights needs at least four positive entries".into());
        }
        if self.centers.is_empty() {
            return err("at least one section centre is required".into());
        }
        if !(self.q > 2.0) {
            return err(format!("q = {} must exceed 2", self.q));
        }
        if !(self.two_star > 2.0) {
            return err(format!("two_star = {} must exceed 2", self.two_star));
        }
        if self.eps_ladder.iter().any(|&e| !(e > 0.0 && e <= 4.0)) {
            return err("eps_ladder entries must lie in (0, 4]".into());
        }
        if let Some(h) = self.harnack_height {
            if !(h > 0.0) {
                return err("harnack_height must be positive".into());
            }
        }
        if self.threads == Some(0) {
            return err("threads must be at least 1".into());
        }
        if let PotentialSource::File(p) = &self.potential {
            if !p.is_file() {
                return err(format!("potential file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// `(λ, Λ)`: explicit values, else the family's.
    pub fn bounds(&self) -> (f64, f64) {
        let fam = match &self.potential {
            PotentialSource::Family(f) => Some(f.det_bounds()),
            PotentialSource::File(_) => None,
        };
        let lo = self.lambda.or(fam.map(|b| b.0)).unwrap_or(f64::NAN);
        let hi = self.big_lambda.or(fam.map(|b| b.1)).unwrap_or(f64::NAN);
        (lo, hi)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::square(self.grid, self.domain[0], self.domain[1])
    }

    /// Canonical `key = value` text; parses back to the same config.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let pot = match &self.potential {
            PotentialSource::Family(f) => family_spec(f),
            PotentialSource::File(p) => format!("file:{}", p.display()),
        };
        s += &format!("potential = {pot}\n");
        if let Some(l) = self.lambda {
            s += &format!("lambda = {l}\n");
        }
        if let Some(l) = self.big_lambda {
            s += &format!("Lambda = {l}\n");
        }
        s += &format!("flux1 = {}\n", scalar_spec(&self.flux[0]));
        s += &format!("flux2 = {}\n", scalar_spec(&self.flux[1]));
        s += &format!("weighted = {}\n", self.weighted);
        s += &format!("source = {}\n", scalar_spec(&self.source));
        s += &format!("boundary = {}\n", scalar_spec(&self.boundary));
        s += &format!("grid = {}\n", self.grid);
        s += &format!("domain = {}\n", join(&self.domain));
        s += &format!("heights = {}\n", join(&self.heights));
        let centers: Vec<String> = self.centers.iter().map(|c| join(c)).collect();
        s += &format!("centers = {}\n", centers.join("; "));
        s += &format!("q = {}\n", self.q);
        s += &format!("two_star = {}\n", self.two_star);
        if let Some(b) = self.beta {
            s += &format!("beta = {b}\n");
        }
        s += &format!("eps_ladder = {}\n", join(&self.eps_ladder));
        s += &format!("path_tol = {}\n", self.path_tol);
        if let Some(h) = self.harnack_height {
            s += &format!("harnack_height = {h}\n");
        }
        s += &format!("harnack_data = {}\n", scalar_spec(&self.harnack_data));
        s += &format!("sobolev_trials = {}\n", self.sobolev_trials);
        s += &format!("out = {}\n", self.out.display());
        s += &format!("seed = {}\n", self.seed);
        if let Some(t) = self.threads {
            s += &format!("threads = {t}\n");
        }
        s
    }
}

pub fn family_spec(f: &PotentialFamily) -> String {
    match *f {
        PotentialFamily::Identity => "identity".into(),
        PotentialFamily::Diagonal { a, b } => format!("diagonal:{a},{b}"),
        PotentialFamily::Skew { eps } => format!("skew:{eps}"),
        PotentialFamily::Perturbed { amp } => format!("perturbed:{amp}"),
        PotentialFamily::Pinched { ratio } => format!("pinched:{ratio}"),
        PotentialFamily::Random {
            seed,
            lambda,
            big_lambda,
        } => format!("random:{seed},{lambda},{big_lambda}"),
    }
}

pub fn scalar_spec(s: &ScalarSpec) -> String {
    match *s {
        ScalarSpec::Zero => "zero".into(),
        ScalarSpec::Const(c) => format!("const:{c}"),
        ScalarSpec::Linear(a, b, c) => format!("linear:{a},{b},{c}"),
        ScalarSpec::Sin(a, k1, k2) => format!("sin:{a},{k1},{k2}"),
        ScalarSpec::Radial { c, p, x0 } => format!("radial:{c},{p},{},{}", x0[0], x0[1]),
        ScalarSpec::Step(s) => format!("step:{s}"),
    }
}
