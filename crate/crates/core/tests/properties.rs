use std::sync::Arc;

use proptest::prelude::*;

use marginflow::data::{encode_idx, parse_idx_bytes, Dataset};
use marginflow::ema::{adam_ratio_bound, EmaState};
use marginflow::losses::LossSpec;
use marginflow::metrics::{self, project_simplex};
use marginflow::optim::{OptimizerSpec, OptimizerState, Schedule};
use marginflow::{Layout, ModelSpec, NormSpec, ParamVector, Shape};

fn vec_strategy(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|x| x.abs() > 1e-6)
}

fn mixed(data: Vec<f64>) -> ParamVector {
    let layout = Arc::new(
        Layout::new([("W", Shape::Matrix { rows: 3, cols: 2 }), ("b", Shape::Vector { len: 2 })]).unwrap(),
    );
    ParamVector::from_vec(layout, data).unwrap()
}

proptest! {
    #[test]
    fn steepest_direction_attains_dual(g in vec_strategy(16)) {
        prop_assume!(nonzero(&g));
        let g = ParamVector::flat(g);
        for norm in [NormSpec::L1, NormSpec::L2, NormSpec::Linf] {
            let u = norm.steepest_direction(&g).unwrap();
            let dual = norm.dual_norm(&g).unwrap();
            prop_assert!((u.dot(&g) + dual).abs() <= 1e-9 * dual);
            prop_assert!((norm.norm(&u).unwrap() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectral_direction_attains_dual(g in prop::collection::vec(-5.0f64..5.0, 8)) {
        prop_assume!(nonzero(&g));
        let g = mixed(g);
        let norm = NormSpec::SpectralPerMatrix;
        let u = norm.steepest_direction(&g).unwrap();
        let dual = norm.dual_norm(&g).unwrap();
        prop_assert!((u.dot(&g) + dual).abs() <= 1e-6 * dual);
    }

    #[test]
    fn holder_inequality(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..16)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (a, b) = (ParamVector::flat(a), ParamVector::flat(b));
        for norm in [NormSpec::L1, NormSpec::L2, NormSpec::Linf] {
            let bound = norm.norm(&a).unwrap() * norm.dual_norm(&b).unwrap();
            prop_assert!(a.dot(&b) <= bound * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn norms_are_absolutely_homogeneous(v in vec_strategy(12), s in -100.0f64..100.0) {
        let p = ParamVector::flat(v);
        for norm in [NormSpec::L1, NormSpec::L2, NormSpec::Linf] {
            let lhs = norm.norm(&p.scaled(s)).unwrap();
            let rhs = s.abs() * norm.norm(&p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn simplex_projection_lands_on_simplex(v in vec_strategy(10)) {
        let w = project_simplex(&v);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Order is preserved: larger inputs never get smaller weights.
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] > v[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn ema_stays_in_input_hull(inputs in prop::collection::vec(-3.0f64..3.0, 1..60), rate in 0.01f64..5.0, dt in 0.01f64..3.0) {
        let mut e = EmaState::scalar(rate);
        let lo = inputs.iter().copied().fold(0.0f64, f64::min);
        let hi = inputs.iter().copied().fold(0.0f64, f64::max);
        for g in &inputs {
            e.update_scalar(*g, dt).unwrap();
            let v = e.value()[0];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn momentum_ratio_bound(inputs in prop::collection::vec(-100.0f64..100.0, 1..80), c1 in 0.01f64..2.0, frac in 0.05f64..1.0) {
        let c2 = c1 * frac;
        let mut m = EmaState::scalar(c1);
        let mut v = EmaState::scalar(c2);
        for g in &inputs {
            m.update_scalar(*g, 1.0).unwrap();
            v.update_scalar(g * g, 1.0).unwrap();
            if v.value()[0] > 0.0 {
                prop_assert!(m.value()[0].abs() / v.value()[0].sqrt() <= adam_ratio_bound(c1, c2) + 1e-9);
            }
        }
    }

    #[test]
    fn two_layer_is_homogeneous(theta in prop::collection::vec(-2.0f64..2.0, 12), x in prop::collection::vec(-2.0f64..2.0, 3), alpha in 0.1f64..10.0) {
        let model = ModelSpec::TwoLayer { dim: 3, hidden: 3, power: 2.0, output_as_row_matrix: false };
        let theta = ParamVector::from_vec(model.layout().unwrap(), theta).unwrap();
        let f = model.forward(&theta, &x).unwrap();
        let fa = model.forward(&theta.scaled(alpha), &x).unwrap();
        prop_assert!((fa - alpha.powi(3) * f).abs() <= 1e-9 * fa.abs().max(1e-9));
    }

    #[test]
    fn hard_margin_is_scale_invariant(w in prop::collection::vec(-2.0f64..2.0, 2), alpha in 0.1f64..50.0) {
        prop_assume!(nonzero(&w));
        let model = ModelSpec::Linear { dim: 2 };
        let data = Dataset::new(vec![1.0, 0.3, -0.4, -1.0, 0.2, 0.9], vec![1.0, -1.0, 1.0], 2, "t", 0).unwrap();
        let theta = ParamVector::from_vec(model.layout().unwrap(), w).unwrap();
        for norm in [NormSpec::L2, NormSpec::Linf] {
            let a = metrics::margins(&model, LossSpec::Exponential, &norm, &theta, &data).unwrap();
            let b = metrics::margins(&model, LossSpec::Exponential, &norm, &theta.scaled(alpha), &data).unwrap();
            prop_assert!((a.hard_margin - b.hard_margin).abs() <= 1e-12 * a.hard_margin.abs().max(1e-12));
        }
    }

    #[test]
    fn normalized_step_has_length_eta_dt(g in vec_strategy(10), eta0 in 0.001f64..2.0, dt in 0.1f64..2.0) {
        prop_assume!(nonzero(&g));
        let n = g.len();
        let g = ParamVector::flat(g);
        let schedule = Schedule::PowerDecay { eta0, exponent: 0.8, t_init: 1.0 };
        for norm in [NormSpec::L1, NormSpec::L2, NormSpec::Linf] {
            let spec = OptimizerSpec::Sd { norm: norm.clone(), normalized: true };
            let mut state = OptimizerState::new(&spec, ParamVector::flat(vec![0.0; n])).unwrap();
            let report = state.step(&g, &schedule, dt).unwrap();
            let len = norm.norm(&report.delta).unwrap();
            prop_assert!((len - report.eta * dt).abs() <= 1e-12 * report.eta * dt);
            prop_assert!(report.delta.dot(&g) < 0.0);
        }
    }

    #[test]
    fn power_decay_is_nonincreasing(eta0 in 1e-4f64..10.0, a in 0.0f64..0.99, t in 0.0f64..1e6, dt in 0.0f64..100.0) {
        let s = Schedule::PowerDecay { eta0, exponent: a, t_init: 1.0 };
        prop_assert!(s.eta(t + dt) <= s.eta(t));
        prop_assert!(s.eta(0.0) <= eta0);
    }

    #[test]
    fn idx_round_trip(rows in 1usize..6, cols in 1usize..6, digits in prop::collection::vec(0u8..10, 1..5), seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..rows * cols * digits.len()).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let (img, lbl) = encode_idx(rows, cols, &pixels, &digits);
        let raw = parse_idx_bytes(&img, &lbl, "img", "lbl").unwrap();
        prop_assert_eq!(raw.digits, digits);
        prop_assert_eq!((raw.rows, raw.cols), (rows, cols));
        let back: Vec<u8> = raw.pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
        prop_assert_eq!(back, pixels);
    }
}
