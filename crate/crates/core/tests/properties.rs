use num_complex::Complex64;
use proptest::prelude::*;

use ulam_lab::config::ExperimentConfig;
use ulam_lab::fixedpoint::{apply_t, generalized_metric, Scaled};
use ulam_lab::maps::{Perturbation, Term};
use ulam_lab::{delta_m, AlgebraMap, Base, ControlFunction, Element, EvalGrid, MapSpec, ScaleDirection};

const EPS: f64 = f64::EPSILON;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn scale() -> impl Strategy<Value = i64> {
    prop::sample::select(vec![-5i64, -3, -2, 2, 3, 5])
}

fn polynomial() -> impl Strategy<Value = MapSpec> {
    prop::collection::vec(complex(), 4).prop_map(|cs| {
        let terms = cs
            .into_iter()
            .enumerate()
            .map(|(i, c)| Term {
                coeff: Element::scalar(c),
                degree: i as u32 + 1,
            })
            .collect();
        MapSpec::exact(Base::Polynomial { terms })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn monomials_solve_the_equation(c in complex(), m in 1u32..=4, a in scale(), x in complex(), y in complex()) {
        let f = MapSpec::monomial(Element::scalar(c), m);
        let r = delta_m(&f, &Element::scalar(x), &Element::scalar(y), a, m).unwrap();
        prop_assert!(r.norm() <= 64.0 * EPS * r.scale, "{} vs scale {}", r.norm(), r.scale);
    }

    #[test]
    fn residual_is_linear_in_the_map(f in polynomial(), g in polynomial(), m in 1u32..=4, a in scale(), x in complex(), y in complex()) {
        let (x, y) = (Element::scalar(x), Element::scalar(y));
        let sum = ulam_lab::maps::FnMap(|z: &Element| Ok(&f.eval(z)? + &g.eval(z)?));
        let lhs = delta_m(&sum, &x, &y, a, m).unwrap();
        let rf = delta_m(&f, &x, &y, a, m).unwrap();
        let rg = delta_m(&g, &x, &y, a, m).unwrap();
        let diff = (&lhs.value - &(&rf.value + &rg.value)).norm();
        prop_assert!(diff <= 64.0 * EPS * (rf.scale + rg.scale + lhs.scale));
    }

    /// `Delta_m (T g)(x, y) = a^m Delta_m g(x/a, y/a)` for the shrinking
    /// corrector, so exact solutions stay exact.
    #[test]
    fn corrector_rescales_the_residual(f in polynomial(), eps in 1e-4f64..1e-2, r in 1.0f64..7.0, seed in 0u64..1000,
                                       m in 1u32..=4, a in scale(), x in complex(), y in complex()) {
        let f = f.with_perturbation(Perturbation::radial(eps, r, seed));
        let t = apply_t(&f, a, m, ScaleDirection::Shrink).unwrap();
        let (x, y) = (Element::scalar(x), Element::scalar(y));
        let lhs = delta_m(&t, &x, &y, a, m).unwrap();
        let inv = 1.0 / a as f64;
        let rhs = delta_m(&f, &x.scale_real(inv), &y.scale_real(inv), a, m).unwrap();
        let am = (a as f64).powi(m as i32);
        let diff = (&lhs.value - &rhs.value.scale_real(am)).norm();
        prop_assert!(diff <= 64.0 * EPS * (lhs.scale + am.abs() * rhs.scale));
    }

    /// `|a|^(w n) phi(x / a^n, ...) <= L^n phi(x, ...)` with weight `w = m`
    /// for binary controls and `3m` for ternary ones.
    #[test]
    fn controls_telescope(theta in 0.01f64..10.0, r in 4.5f64..9.0, p in 4.5f64..9.0, a in scale(),
                          n in 0u32..12, norms in prop::collection::vec(0.0f64..3.0, 3)) {
        let m = 4u32;
        for phi in [ControlFunction::power_sum(theta, r), ControlFunction::power_product(theta, p)] {
            let l = phi.contraction_factor(a, m, ScaleDirection::Shrink);
            prop_assert!(l > 0.0 && l < 1.0);
            let k = phi.arity();
            let w = if k == 2 { m } else { 3 * m };
            let s = (a as f64).abs().powi(-(n as i32));
            let scaled: Vec<f64> = norms[..k].iter().map(|v| v * s).collect();
            let lhs = (a as f64).abs().powi((w * n) as i32) * phi.eval_norms(&scaled).unwrap();
            let rhs = l.powi(n as i32) * phi.eval_norms(&norms[..k]).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE, "{lhs} > {rhs}");
        }
    }

    /// `d(T g, T h) <= L d(g, h)` in the generalized metric.
    #[test]
    fn corrector_contracts(e1 in 1e-4f64..1.0, e2 in 1e-4f64..1.0, extra in 0.0f64..2.0, s1 in 0u64..100, s2 in 100u64..200) {
        let (a, m, r) = (2i64, 3u32, 5.0);
        let phi = ControlFunction::power_sum(1.0, r);
        let l = phi.contraction_factor(a, m, ScaleDirection::Shrink);
        let grid = EvalGrid::new(1, 1.0, 8, a, 4, 3).unwrap();
        let g = MapSpec::zero().with_perturbation(Perturbation::radial(e1, r + extra, s1));
        let h = MapSpec::zero().with_perturbation(Perturbation::radial(e2, r + extra, s2));
        let d0 = generalized_metric(&g, &h, &phi, &grid).unwrap().value().unwrap();
        let tg = apply_t(&g, a, m, ScaleDirection::Shrink).unwrap();
        let th = apply_t(&h, a, m, ScaleDirection::Shrink).unwrap();
        let d1 = generalized_metric(&tg, &th, &phi, &grid).unwrap().value().unwrap();
        prop_assert!(d1 <= l * d0 * (1.0 + 1e-9), "{d1} > {l} * {d0}");
    }

    /// The residual of `T^N f` shrinks as `N` grows.
    #[test]
    fn residual_decreases_with_depth(eps in 1e-4f64..1e-2, seed in 0u64..1000, x in complex(), y in complex()) {
        let f = MapSpec::monomial(Element::real(2.0), 4).with_perturbation(Perturbation::radial(eps, 6.0, seed));
        let (x, y) = (Element::scalar(x), Element::scalar(y));
        let mut prev = f64::INFINITY;
        for n in 0..15 {
            let view = Scaled { map: &f, a: 2, m: 4, n, direction: ScaleDirection::Shrink };
            let r = delta_m(&view, &x, &y, 2, 4).unwrap();
            let noise = 64.0 * EPS * r.scale;
            prop_assert!(r.norm() <= prev + noise, "n = {n}: {} > {prev}", r.norm());
            prev = r.norm();
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), depth in 1u32..=40, shells in 1usize..20, which in 0usize..6) {
        let mut cfg = match which {
            0 => ExperimentConfig::reference_derivation(),
            1 => ExperimentConfig::reference_sigma_hom(),
            2 => ExperimentConfig::reference_expand(),
            3 => ExperimentConfig::reference_superstability(1e-3),
            4 => ExperimentConfig::reference_funceq(),
            _ => ExperimentConfig::reference_axioms(2),
        };
        cfg.seed = seed;
        cfg.depth = depth;
        cfg.grid.shells = shells;
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}
