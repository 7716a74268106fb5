mod common;

use counterattack::attack::{
    binary_search_penalty, cw_attack, lr_schedule, penalty_f, penalty_lower_bound, project_box, run_attack, AttackConfig,
    Goal, Norm, Penalty, StopMode,
};
use counterattack::counter::{counter_attack, detection_run, CounterConfig};
use counterattack::datagen::{blobs, LabeledDataset};
use counterattack::eval::auroc;
use counterattack::network::{train, MlpModel, TrainConfig};
use proptest::prelude::*;

#[test]
fn schedule_reaches_the_box_diameter() {
    let total: f64 = (1..=2048).map(|i| lr_schedule(0.01, 100.0, i)).sum();
    assert!((total - 3.062363359503434).abs() < 1e-9);
    assert!(total > 2f64.sqrt());
    assert!((penalty_lower_bound(2, 0.5) - 4.0 * 2f64.sqrt()).abs() < 1e-15);
}

/// Smallest succeeding penalty for `Z1 − Z2 = w·x + b` is `2s/‖w‖²` with
/// `s = w·x₀ + b`; below it the iterates approach `x₀ − a w/2` monotonically
/// and never cross.
#[test]
fn binary_search_matches_linear_oracle_and_sweep() {
    let w = [0.8, 0.6];
    let m = common::linear(w, -0.7);
    let x0 = [0.6, 0.7];
    let s = w[0] * x0[0] + w[1] * x0[1] - 0.7;
    let a_star = 2.0 * s;
    let cfg = AttackConfig { max_iters: 1024, ..Default::default() };
    let (a, trace) = binary_search_penalty(&m, &x0, &cfg, 1e-3, 1e10).unwrap();
    assert!(trace.success);
    assert!(a >= a_star, "{a} < {a_star}");
    assert!(a <= a_star * 1.05, "{a} vs {a_star}");

    // sweep oracle on a 0.1% grid
    let sweep = (0..2000)
        .map(|i| a_star * (0.9 + 1e-3 * i as f64))
        .find(|&a| run_attack(&m, &x0, a, &cfg).unwrap().success)
        .unwrap();
    assert!((a - sweep).abs() <= 2e-3 * a_star, "search {a} sweep {sweep}");
}

#[test]
fn fixed_penalty_attack_lands_on_boundary_projection() {
    let m = common::linear([1.0, 1.0], -1.0);
    let x0 = [0.3, 0.4];
    let cfg = AttackConfig { max_iters: 2048, penalty: Penalty::Fixed(10.0), ..Default::default() };
    let t = cw_attack(&m, &x0, &cfg).unwrap();
    assert!(t.success);
    // projection onto x + y = 1 is (0.45, 0.55)
    assert!(Norm::L2.distance(&t.final_point, &[0.45, 0.55]) < 1e-2);
}

#[test]
fn moons_attack_outputs_change_class() {
    let s = common::moons();
    let cfg = AttackConfig { max_iters: 256, ..Default::default() };
    for x in s.attacked.points().iter().take(20) {
        let t = cw_attack(&s.model, x, &cfg).unwrap();
        assert!(t.success);
        assert_ne!(t.adversarial_class(), t.original_class);
        assert!(t.adversarial().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn traces_record_every_iterate() {
    let m = common::linear([1.0, 1.0], -1.0);
    let cfg = AttackConfig { max_iters: 50, penalty: Penalty::Fixed(1.0), trace_iterates: true, ..Default::default() };
    let t = cw_attack(&m, &[0.2, 0.2], &cfg).unwrap();
    assert_eq!(t.records.len(), 51);
    assert_eq!(t.iterates.len(), 51);
    for (r, x) in t.records.iter().zip(&t.iterates) {
        assert!((r.dist - Norm::L2.distance(x, &[0.2, 0.2])).abs() < 1e-15);
        assert!((r.penalty - penalty_f(&m, x, Goal::Leave(2), 0.0).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn practical_stop_halts_at_first_feasible() {
    let m = common::linear([1.0, 1.0], -1.0);
    let cfg = AttackConfig {
        max_iters: 2048,
        penalty: Penalty::Fixed(5.0),
        stop: StopMode::Practical,
        ..Default::default()
    };
    let t = cw_attack(&m, &[0.45, 0.45], &cfg).unwrap();
    assert_eq!(t.first_feasible, Some(t.iterations));
}

#[test]
fn targeted_attack_on_blobs() {
    let data = blobs(300, 3, 2, 0.05, 3).unwrap();
    let m = train(&MlpModel::init(&[2, 16, 3], 1).unwrap(), &data, &TrainConfig { epochs: 100, ..Default::default() }).unwrap();
    let mut hits = 0;
    for x in data.points().iter().take(15) {
        let t0 = m.classify(x).unwrap();
        let target = t0 % 3 + 1;
        let cfg = AttackConfig { max_iters: 512, target: Some(target), ..Default::default() };
        let tr = cw_attack(&m, x, &cfg).unwrap();
        if tr.success {
            assert_eq!(tr.adversarial_class(), target);
            hits += 1;
        }
    }
    assert_eq!(hits, 15);
}

#[test]
fn counter_statistic_near_linear_boundary() {
    // ℓ₂ distance 1e-3 from x + y = 1
    let m = common::linear([1.0, 1.0], -1.0);
    let off = 1e-3 / 2f64.sqrt();
    let r = counter_attack(&m, &[0.3 - off, 0.7 - off], None, &CounterConfig::default()).unwrap();
    assert!(r.stopped && r.statistic <= 1e-2);
}

#[test]
fn detection_run_swap_identity() {
    let s = common::moons();
    let cfg = AttackConfig { max_iters: 256, ..Default::default() };
    let sub = s.attacked.select(&(0..20).collect::<Vec<_>>());
    let traces: Vec<_> = sub.points().iter().map(|x| cw_attack(&s.model, x, &cfg).unwrap()).collect();
    let clean = s.clean.select(&(0..20).collect::<Vec<_>>());
    let run = detection_run(&s.model, &clean, &traces, &CounterConfig::default()).unwrap();
    assert_eq!(run.failed_primary, 0);
    let a = auroc(&run.d_attacked, &run.d_clean).unwrap();
    let b = auroc(&run.d_clean, &run.d_attacked).unwrap();
    assert_eq!(a + b, 1.0);
    assert!(run.clean.iter().chain(run.attacked.iter().flatten()).all(|r| r.statistic >= 0.0));
    assert!(run.clean.iter().filter(|r| r.stopped).all(|r| r.class_stop != r.class_start));

    let empty = LabeledDataset::new(vec![], vec![], 2, 2).unwrap();
    let none = detection_run(&s.model, &empty, &[], &CounterConfig::default()).unwrap();
    assert!(none.d_attacked.is_empty() && none.d_clean.is_empty());
}

proptest! {
    #[test]
    fn projection_is_idempotent(x in prop::collection::vec(-2.0f64..3.0, 1..6)) {
        let p = project_box(&x);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(project_box(&p), p.clone());
        for (a, b) in x.iter().zip(&p) {
            if (0.0..=1.0).contains(a) {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn penalty_nonnegative_and_zero_when_feasible(x in prop::collection::vec(0.0f64..1.0, 2), eta in 0.0f64..0.5) {
        let m = common::linear([1.0, -2.0], 0.3);
        let k = m.classify(&x).unwrap();
        prop_assume!(k != 0);
        let other = 3 - k;
        prop_assert!(penalty_f(&m, &x, Goal::Leave(k), eta).unwrap() >= 0.0);
        prop_assert_eq!(penalty_f(&m, &x, Goal::Leave(other), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn schedule_is_decreasing(a0 in 1e-4f64..1.0, n0 in 1.0f64..1000.0, i in 0usize..10000) {
        prop_assert!(lr_schedule(a0, n0, i + 1) < lr_schedule(a0, n0, i));
        prop_assert!((lr_schedule(a0, n0, 0) - a0).abs() <= 1e-15 * a0);
    }

    #[test]
    fn iterates_stay_in_box(x in prop::collection::vec(0.01f64..0.99, 2), a in 0.1f64..50.0) {
        let m = common::linear([3.0, -1.0], -0.5);
        prop_assume!(m.classify(&x).unwrap() != 0);
        let cfg = AttackConfig { max_iters: 64, penalty: Penalty::Fixed(a), trace_iterates: true, ..Default::default() };
        let t = cw_attack(&m, &x, &cfg).unwrap();
        prop_assert!(t.iterates.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}
