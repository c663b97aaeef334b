use lma_core::convex::{divergence_free_residual, modulus_of_convexity, section};
use lma_core::degiorgi::{level_profile, q_star};
use lma_core::families::{random_family, PotentialFamily};
use lma_core::grid::{Grid, GridFunction2D};
use lma_core::harness::{harnack_ratio, holder_scan, oscillation};
use lma_core::inequalities::{moser_exponent, sobolev_check};
use lma_core::plegendre::{energy, energy_star, forward_map, transform_potential, transform_problem, Forcing};
use lma_core::solver::{discrete_energy, solve, EllipticProblem, SolveOptions};
use lma_core::sym2::Sym2;
use proptest::prelude::*;

fn square(n: usize) -> Grid {
    Grid::square(n, -1.0, 1.0).unwrap()
}

fn spd() -> impl Strategy<Value = Sym2> {
    (0.2f64..3.0, 0.2f64..3.0, -1.0f64..1.0).prop_map(|(a, b, t)| {
        let xy = t * (a * b).sqrt() * 0.9;
        Sym2 { xx: a, xy, yy: b }
    })
}

fn field(g: Grid, mask: Vec<bool>, c: [f64; 4]) -> GridFunction2D {
    GridFunction2D::from_fn(g, mask, move |x, y| {
        c[0] * (1.7 * x + c[1]).sin() + c[2] * (1.3 * y - c[3]).cos() + 0.2 * c[0] * x * y
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cofactor_is_det_inverse(m in spd()) {
        let inv = m.inverse().unwrap();
        let c = m.cofactor();
        let d = m.det();
        for (a, b) in [(c.xx, d * inv.xx), (c.xy, d * inv.xy), (c.yy, d * inv.yy)] {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn sections_nest_and_scale(eps in -0.6f64..0.6, cx in -0.2f64..0.2, cy in -0.2f64..0.2, h in 0.02f64..0.12) {
        let p = PotentialFamily::Skew { eps }.build(square(97)).unwrap();
        let (small, big) = (section(&p, [cx, cy], h).unwrap(), section(&p, [cx, cy], 2.0 * h).unwrap());
        prop_assert!(small.mask.iter().zip(&big.mask).all(|(&s, &b)| !s || b));
        // |S(x₀, h)| = 2πh/√det for quadratics
        let exact = 2.0 * std::f64::consts::PI / (1.0 - eps * eps).sqrt();
        let r = big.volume / (2.0 * h);
        prop_assert!(r > 0.7 * exact && r < 1.3 * exact, "{r} vs {exact}");
    }

    #[test]
    fn modulus_nondecreasing(seed in 0u64..1000) {
        let fam = &random_family(seed, 1, 0.5, 2.0)[0];
        let p = fam.build(square(33)).unwrap();
        let m = modulus_of_convexity(&p, &[0.1, 0.2, 0.3, 0.5, 0.8], seed).unwrap();
        prop_assert!(m.ms.windows(2).all(|w| w[0] <= w[1]), "{:?}", m.ms);
    }

    #[test]
    fn transformed_coefficient_elliptic(seed in 0u64..1000) {
        let fam = &random_family(seed, 1, 0.5, 2.0)[0];
        let g = square(49);
        let p = fam.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let prob = transform_problem(&p, &Forcing::zero(g, p.phi.mask.clone()), &t, &m).unwrap();
        for (v, k) in prob.a.values.iter().zip(&prob.a.mask) {
            if *k {
                prop_assert!(*v >= 0.5 - 1e-6 && *v <= 2.0 + 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn integrability_and_area_transfer(amp in 0.0f64..0.2, e in 0.1f64..1.0) {
        let g = square(65);
        let p = PotentialFamily::Perturbed { amp }.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let xixi = &t.composed.xixi;
        let lhs = xixi.integrate_with(|_, _, v| v.powf(2.0 + e));
        let phi22 = p.hessian_component(1, 1);
        let rhs = p.lambda_lo.powf(-(1.0 + e)) * phi22.integrate_with(|_, _, v| v.max(0.0).powf(1.0 + e));
        prop_assert!(lhs <= rhs * 1.02, "{lhs} {rhs}");
        // dx₁dx₂ = φ*_ξξ dξdη over the preimage of the target rectangle
        let area = xixi.integral();
        let [[a, b], [c, d]] = [[t.grid.x(0), t.grid.x_max()], [t.grid.y(0), t.grid.y_max()]];
        let mut pre = GridFunction2D::zeros(g, vec![false; g.len()]);
        for k in 0..g.len() {
            let (_, j) = g.node_of(k);
            let xi = m.xi_field.values[k];
            if m.xi_field.mask[k] && xi >= a && xi <= b && g.y(j) >= c && g.y(j) <= d {
                pre.mask[k] = true;
                pre.values[k] = 1.0;
            }
        }
        let want = pre.integral();
        prop_assert!((area - want).abs() <= 0.05 * want, "{area} {want}");
    }

    #[test]
    fn energy_bounds_transformed_dirichlet(eps in -0.5f64..0.5, r in 0.25f64..0.35, amp in 0.3f64..2.0) {
        let g = square(65);
        let p = PotentialFamily::Skew { eps }.build(g).unwrap();
        let m = forward_map(&p).unwrap();
        let t = transform_potential(&p, &m).unwrap();
        let zero = Forcing::zero(g, p.phi.mask.clone());
        let prob = transform_problem(&p, &zero, &t, &m).unwrap();
        let u = GridFunction2D::from_fn(g, p.phi.mask.clone(), |x, y| {
            let s = (x * x + y * y) / (r * r);
            if s < 1.0 { amp * (1.0 - s).powi(4) } else { 0.0 }
        });
        let ut = m.push_forward(&u).unwrap();
        let mut flat = prob.clone();
        flat.a = ut.with_values(vec![1.0; ut.values.len()]);
        let dirichlet = 2.0 * energy_star(&ut, &flat);
        let phi = 2.0 * energy(&u, &zero, &p.cofactor());
        prop_assert!(p.lambda_lo.min(1.0) * dirichlet <= phi * (1.0 + 1e-3), "{dirichlet} {phi}");
    }

    #[test]
    fn divergence_free_second_order(amp in 0.05f64..0.2) {
        let r: Vec<f64> = [33, 65]
            .iter()
            .map(|&n| divergence_free_residual(&PotentialFamily::Perturbed { amp }.build(square(n)).unwrap().cofactor()))
            .collect();
        prop_assert!(r[0] / r[1] >= 3.5, "{:?}", r);
    }

    #[test]
    fn discrete_maximum_principle(c in prop::array::uniform4(-1.0f64..1.0), seed in 0u64..500, s in 0.0f64..2.0) {
        let g = square(33);
        let p = random_family(seed, 1, 0.5, 2.0)[0].build(g).unwrap();
        let b = field(g, p.phi.mask.clone(), c);
        let f = Forcing::from_fns(g, p.phi.mask.clone(), |_, _| 0.0, |_, _| 0.0, move |x, _| s * (1.0 + x * x));
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &f, &b).unwrap();
        let r = solve(&prob, SolveOptions::default()).unwrap();
        let edge = (0..g.len()).filter(|&k| !prob.unknown[k] && r.u.mask[k]).map(|k| r.u.values[k]).fold(f64::NEG_INFINITY, f64::max);
        let inner = (0..g.len()).filter(|&k| prob.unknown[k]).map(|k| r.u.values[k]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(inner <= edge + 1e-10, "{inner} {edge}");
    }

    #[test]
    fn solution_minimizes_energy(c in prop::array::uniform4(-1.0f64..1.0), seed in 0u64..500) {
        let g = square(25);
        let p = random_family(seed, 1, 0.5, 2.0)[0].build(g).unwrap();
        let b = field(g, p.phi.mask.clone(), c);
        let f = Forcing::from_fns(g, p.phi.mask.clone(), |x, _| x, |_, y| y.sin(), |x, y| x - y);
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &f, &b).unwrap();
        let r = solve(&prob, SolveOptions::default()).unwrap();
        let e0 = discrete_energy(&prob, &r.u.values);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        for _ in 0..20 {
            let mut v = r.u.values.clone();
            for k in 0..g.len() {
                if prob.unknown[k] {
                    v[k] += 1e-3 * rand::Rng::gen_range(&mut rng, -1.0..1.0);
                }
            }
            prop_assert!(discrete_energy(&prob, &v) >= e0 - 1e-10);
        }
    }

    #[test]
    fn level_profile_monotone(c in prop::array::uniform4(-1.0f64..1.0), ks in prop::collection::vec(-2.0f64..2.0, 2..12)) {
        let g = square(33);
        let u = field(g, GridFunction2D::full_mask(&g), c);
        let prof = level_profile(&u, &ks);
        prop_assert!(prof.omegas.windows(2).all(|w| w[1] <= w[0]));
        let top = level_profile(&u, &[u.max_masked()]);
        prop_assert_eq!(top.omegas[0], 0.0);
    }

    #[test]
    fn q_star_ordering(q in 2.01f64..1e4) {
        let qs = q_star(2.0, q);
        prop_assert!(qs < 2.0 && 2.0 < q);
        prop_assert!((qs - 2.0 * q / (2.0 + q)).abs() < 1e-12);
    }

    #[test]
    fn inequality_scale_invariance(c in prop::array::uniform4(0.1f64..1.0), t in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], eps in -0.5f64..0.5) {
        let g = square(33);
        let p = PotentialFamily::Skew { eps }.build(g).unwrap();
        let cf = p.cofactor();
        let u = GridFunction2D::from_fn(g, p.phi.mask.clone(), move |x, y| {
            (1.0 - x * x) * (1.0 - y * y) * (1.0 + c[0] * (c[1] * x + c[2] * y).sin() * c[3])
        });
        let ut = u.map(|v| t * v);
        let (a, b) = (sobolev_check(&u, &cf, 4.0).unwrap(), sobolev_check(&ut, &cf, 4.0).unwrap());
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio);
        let (ea, eb) = (moser_exponent(&u, &cf, 7.0).unwrap(), moser_exponent(&ut, &cf, 7.0).unwrap());
        for k in 0..g.len() {
            prop_assert!((ea.values[k] - eb.values[k]).abs() <= 1e-12 * ea.values[k].abs().max(1.0));
        }
    }

    #[test]
    fn harnack_ratio_at_least_one(c in prop::array::uniform4(-0.5f64..0.5), seed in 0u64..500) {
        let g = square(49);
        let p = random_family(seed, 1, 0.5, 2.0)[0].build(g).unwrap();
        let d = field(g, p.phi.mask.clone(), c).map(|v| 2.5 + v);
        let r = harnack_ratio(&p, [0.0, 0.0], 0.1, &d, SolveOptions::default()).unwrap();
        prop_assert!(r.ratio >= 1.0 && r.ratio.is_finite());
    }

    #[test]
    fn homogeneous_oscillation_nested(c in prop::array::uniform4(-1.0f64..1.0), eps in -0.5f64..0.5) {
        let g = square(65);
        let p = PotentialFamily::Skew { eps }.build(g).unwrap();
        let b = field(g, p.phi.mask.clone(), c);
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &Forcing::zero(g, p.phi.mask.clone()), &b).unwrap();
        let u = solve(&prob, SolveOptions::default()).unwrap().u;
        let mut prev = f64::INFINITY;
        for h in [0.3, 0.15, 0.075, 0.0375] {
            let o = oscillation(&u, &section(&p, [0.0, 0.0], h).unwrap().mask).unwrap();
            prop_assert!(o <= prev);
            prev = o;
        }
    }

    #[test]
    fn holder_fit_affine_invariant(c in prop::array::uniform4(-1.0f64..1.0), a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -10.0f64..10.0) {
        let g = square(65);
        let p = PotentialFamily::Identity.build(g).unwrap();
        let u = field(g, p.phi.mask.clone(), c);
        let hs = [0.3, 0.2, 0.12, 0.08, 0.05];
        let r1 = holder_scan(&u, &p, [0.0, 0.0], &hs, 4.0).unwrap();
        let r2 = holder_scan(&u.map(|v| a * v + b), &p, [0.0, 0.0], &hs, 4.0).unwrap();
        prop_assert!((r1.gamma0 - r2.gamma0).abs() <= 1e-10, "{} {}", r1.gamma0, r2.gamma0);
    }
}
