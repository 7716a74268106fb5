mod common;

use counterattack::network::{classify_logits, softmax, MlpModel};
use proptest::prelude::*;

fn finite_difference(m: &MlpModel, x: &[f64], seed: &[f64], h: f64) -> Vec<f64> {
    let f = |x: &[f64]| -> f64 { m.forward_logits(x).unwrap().iter().zip(seed).map(|(z, s)| z * s).sum() };
    (0..x.len())
        .map(|i| {
            let (mut p, mut q) = (x.to_vec(), x.to_vec());
            p[i] += h;
            q[i] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

fn near_kink(m: &MlpModel, x: &[f64], margin: f64) -> bool {
    m.hidden_preactivations(x).unwrap().iter().flatten().any(|z| z.abs() < margin)
}

#[test]
fn gradients_match_finite_differences_on_moons() {
    let m = &common::moons().model;
    let pts = &common::moons().test;
    let mut checked = 0;
    for x in pts.points() {
        if near_kink(m, x, 1e-4) {
            continue;
        }
        for seed in [[1.0, -1.0], [0.0, 1.0]] {
            let g = m.input_gradient(x, &seed).unwrap();
            let fd = finite_difference(m, x, &seed, 1e-7);
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(err / scale <= 1e-5, "rel err {} at {x:?}", err / scale);
        }
        checked += 1;
        if checked == 100 {
            break;
        }
    }
    assert_eq!(checked, 100);
}

proptest! {
    #[test]
    fn gradients_match_on_random_deep_nets(seed in 0u64..1000, xs in prop::collection::vec(0.0f64..1.0, 3)) {
        let m = MlpModel::init(&[3, 6, 5, 4], seed).unwrap();
        prop_assume!(!near_kink(&m, &xs, 1e-4));
        let s = [1.0, -2.0, 0.5, 0.0];
        let g = m.input_gradient(&xs, &s).unwrap();
        let fd = finite_difference(&m, &xs, &s, 1e-7);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 2..6)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.0).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_picks_strict_maximum(z in prop::collection::vec(-5.0f64..5.0, 2..6)) {
        let k = classify_logits(&z);
        if k == 0 {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(z.iter().filter(|v| **v == max).count() > 1);
        } else {
            prop_assert!(z.iter().enumerate().all(|(i, v)| i == k - 1 || *v < z[k - 1]));
        }
    }
}
