//! Built-in analytic potential families used by tests, the CLI and configs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convex::{build_potential, ConvexPotential};
use crate::error::{LmaError, Result};
use crate::grid::{Grid, GridFunction2D};

/// Analytic convex potential with known determinant bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialFamily {
    /// `|x|²/2`
    Identity,
    /// `(a x₁² + b x₂²)/2`
    Diagonal { a: f64, b: f64 },
    /// `(x₁² + x₂²)/2 + ε x₁x₂`
    Skew { eps: f64 },
    /// `|x|²/2 + amp·cos x₁ cos x₂`
    Perturbed { amp: f64 },
    /// `ψ(x₁) + x₂²/(2ρ)` with `ψ'' = 1 + (ρ-1)(1 + cos πx₁)/2`, so
    /// `det ∈ [1/ρ, 1]` on `|x₁| ≤ 1`.
    Pinched { ratio: f64 },
    /// Rotated anisotropic quadratic plus a plane-wave ripple, drawn from a
    /// seed and rejected until `det` sits inside `[lambda, big_lambda]`.
    Random {
        seed: u64,
        lambda: f64,
        big_lambda: f64,
    },
}

/// Concrete parameters of a [`PotentialFamily::Random`] draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDraw {
    pub hessian: [f64; 3],
    pub amp: f64,
    pub k: [f64; 2],
    pub phase: f64,
}

impl RandomDraw {
    fn value(&self, x: f64, y: f64) -> f64 {
        let [hxx, hxy, hyy] = self.hessian;
        0.5 * (hxx * x * x + 2.0 * hxy * x * y + hyy * y * y)
            + self.amp * (self.k[0] * x + self.k[1] * y + self.phase).cos()
    }

    fn det_at(&self, x: f64, y: f64) -> f64 {
        let [hxx, hxy, hyy] = self.hessian;
        let c = -self.amp * (self.k[0] * x + self.k[1] * y + self.phase).cos();
        let (a, b, d) = (
            hxx + c * self.k[0] * self.k[0],
            hxy + c * self.k[0] * self.k[1],
            hyy + c * self.k[1] * self.k[1],
        );
        a * d - b * b
    }
}

impl PotentialFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialFamily::Identity => "identity",
            PotentialFamily::Diagonal { .. } => "diagonal",
            PotentialFamily::Skew { .. } => "skew",
            PotentialFamily::Perturbed { .. } => "perturbed",
            PotentialFamily::Pinched { .. } => "pinched",
            PotentialFamily::Random { .. } => "random",
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(
            self,
            PotentialFamily::Identity | PotentialFamily::Diagonal { .. } | PotentialFamily::Skew { .. }
        )
    }

    /// Closed-form Hessian for the quadratic families.
    pub fn quadratic_hessian(&self) -> Option<crate::sym2::Sym2> {
        use crate::sym2::Sym2;
        match *self {
            PotentialFamily::Identity => Some(Sym2::IDENTITY),
            PotentialFamily::Diagonal { a, b } => Some(Sym2::diag(a, b)),
            PotentialFamily::Skew { eps } => Some(Sym2::new(1.0, eps, 1.0)),
            _ => None,
        }
    }

    /// Draws the random member; `None` for deterministic families.
    pub fn random_draw(&self) -> Option<RandomDraw> {
        let PotentialFamily::Random {
            seed,
            lambda,
            big_lambda,
        } = *self
        else {
            return None;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = lambda.max(1e-6);
        let hi = big_lambda.max(lo);
        loop {
            // target det strictly inside the bounds, with room for the ripple
            let mid_lo = lo + 0.25 * (hi - lo);
            let mid_hi = hi - 0.25 * (hi - lo);
            let d: f64 = if mid_hi > mid_lo {
                rng.gen_range(mid_lo..mid_hi)
            } else {
                0.5 * (lo + hi)
            };
            let s: f64 = rng.gen_range(0.7..1.5);
            let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (c, sn) = (th.cos(), th.sin());
            let (e1, e2) = (s * d.sqrt(), d.sqrt() / s);
            let hessian = [
                c * c * e1 + sn * sn * e2,
                c * sn * (e1 - e2),
                sn * sn * e1 + c * c * e2,
            ];
            let kmag: f64 = rng.gen_range(1.0..3.0);
            let kth: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = [kmag * kth.cos(), kmag * kth.sin()];
            let amp = rng.gen_range(0.0..0.08) / (kmag * kmag);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let draw = RandomDraw {
                hessian,
                amp,
                k,
                phase,
            };
            // ripple Hessian is rank one along k; check det over a phase sweep
            let margin = 0.02 * (hi - lo);
            let ok = (0..64).all(|m| {
                let t = m as f64 / 64.0 * std::f64::consts::TAU;
                let x = (t - phase) * k[0] / (kmag * kmag);
                let y = (t - phase) * k[1] / (kmag * kmag);
                let det = draw.det_at(x, y);
                det > lo + margin && det < hi - margin
            });
            if ok {
                return Some(draw);
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            PotentialFamily::Identity => 0.5 * (x * x + y * y),
            PotentialFamily::Diagonal { a, b } => 0.5 * (a * x * x + b * y * y),
            PotentialFamily::Skew { eps } => 0.5 * (x * x + y * y) + eps * x * y,
            PotentialFamily::Perturbed { amp } => 0.5 * (x * x + y * y) + amp * x.cos() * y.cos(),
            PotentialFamily::Pinched { ratio } => {
                let pi2 = std::f64::consts::PI.powi(2);
                let psi = 0.5 * x * x
                    + 0.5 * (ratio - 1.0) * (0.5 * x * x - (std::f64::consts::PI * x).cos() / pi2);
                psi + 0.5 * y * y / ratio
            }
            PotentialFamily::Random { .. } => {
                // callers sampling many nodes should use `sample`, which draws once
                self.random_draw().expect("random family").value(x, y)
            }
        }
    }

    /// Suggested determinant bounds `(λ, Λ)` for this family.
    pub fn det_bounds(&self) -> (f64, f64) {
        match *self {
            PotentialFamily::Identity => (1.0, 1.0),
            PotentialFamily::Diagonal { a, b } => (a * b, a * b),
            PotentialFamily::Skew { eps } => (1.0 - eps * eps, 1.0 - eps * eps),
            PotentialFamily::Perturbed { amp } => {
                // D²φ = I - amp·[[c c', -s s'], [-s s', c c']] with |·| ≤ amp
                let lo = (1.0 - amp).powi(2) - amp * amp;
                let hi = (1.0 + amp).powi(2);
                (lo, hi)
            }
            PotentialFamily::Pinched { ratio } => (1.0 / ratio, 1.0),
            PotentialFamily::Random {
                lambda, big_lambda, ..
            } => (lambda, big_lambda),
        }
    }

    pub fn sample(&self, grid: Grid, mask: Vec<bool>) -> GridFunction2D {
        match self.random_draw() {
            Some(d) => GridFunction2D::from_fn(grid, mask, |x, y| d.value(x, y)),
            None => GridFunction2D::from_fn(grid, mask, |x, y| self.eval(x, y)),
        }
    }

    /// Samples on `grid` (full mask) and validates with [`Self::det_bounds`].
    pub fn build(&self, grid: Grid) -> Result<ConvexPotential> {
        let mask = GridFunction2D::full_mask(&grid);
        self.build_masked(grid, mask)
    }

    pub fn build_masked(&self, grid: Grid, mask: Vec<bool>) -> Result<ConvexPotential> {
        let (lo, hi) = self.det_bounds();
        build_potential(self.sample(grid, mask), lo, hi)
    }

    /// Parses `identity`, `diagonal:a,b`, `skew:eps`, `perturbed:amp`,
    /// `pinched:ratio`, `random:seed,lambda,Lambda`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (spec.trim(), ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| LmaError::Config(format!("potential `{spec}`: {e}")))
                })
                .collect::<Result<_>>()?
        };
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(LmaError::Config(format!(
                    "potential `{name}` takes {n} parameters, got {}",
                    nums.len()
                )))
            }
        };
        Ok(match name {
            "identity" => {
                want(0)?;
                PotentialFamily::Identity
            }
            "diagonal" => {
                want(2)?;
                PotentialFamily::Diagonal {
                    a: nums[0],
                    b: nums[1],
                }
            }
            "skew" => {
                want(1)?;
                PotentialFamily::Skew { eps: nums[0] }
            }
            "perturbed" => {
                want(1)?;
                PotentialFamily::Perturbed { amp: nums[0] }
            }
            "pinched" => {
                want(1)?;
                PotentialFamily::Pinched { ratio: nums[0] }
            }
            "random" => {
                want(3)?;
                PotentialFamily::Random {
                    seed: nums[0] as u64,
                    lambda: nums[1],
                    big_lambda: nums[2],
                }
            }
            other => return Err(LmaError::Config(format!("unknown potential family `{other}`"))),
        })
    }
}

/// `count` random members with shared determinant bounds.
pub fn random_family(seed: u64, count: usize, lambda: f64, big_lambda: f64) -> Vec<PotentialFamily> {
    (0..count as u64)
        .map(|m| PotentialFamily::Random {
            seed: seed.wrapping_mul(1_000_003).wrapping_add(m),
            lambda,
            big_lambda,
        })
        .collect()
}
