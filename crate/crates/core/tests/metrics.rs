//! Evaluation protocols, trade-off, calibration and recency metrics.

mod common;

use std::path::PathBuf;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use trire::eval::{
    ece, recency_share, reliability_table, stability_plasticity, task_confusion, tradeoff, Protocol, TaskAccuracyMatrix,
    TaskPredictions, ECE_BINS,
};
use trire::model::task_logit_mask;
use trire::numeric::{argmax, Rng};
use trire::trainer::{run_method, Method};

/// Predictions of a model emitting i.i.d. standard-normal logits on a task
/// owning `classes`.
fn random_logit_predictions(classes: &[usize], total: usize, n: usize, rng: &mut Rng) -> TaskPredictions {
    let mask = task_logit_mask(classes, total);
    let mut p = TaskPredictions::default();
    for i in 0..n {
        let logits: Vec<f64> = (0..total).map(|_| rng.normal()).collect();
        p.labels.push(classes[i % classes.len()]);
        p.class_il.push(argmax(&logits, None));
        p.task_il.push(argmax(&logits, Some(&mask)));
        p.confidence.push(0.5);
    }
    p
}

#[test]
fn uniform_logits_hit_chance_under_both_protocols() {
    let mut rng = Rng::new(2024);
    for t in 0..5 {
        let p = random_logit_predictions(&[2 * t, 2 * t + 1], 10, 2000, &mut rng);
        let cil = p.accuracy(Protocol::ClassIl);
        let til = p.accuracy(Protocol::TaskIl);
        assert!((cil - 0.10).abs() <= 0.03, "task {t} class-il {cil}");
        assert!((til - 0.50).abs() <= 0.03, "task {t} task-il {til}");
    }
}

#[test]
fn perfect_classifier() {
    let p = TaskPredictions {
        labels: vec![0, 1, 1],
        class_il: vec![0, 1, 1],
        task_il: vec![0, 1, 1],
        confidence: vec![1.0; 3],
    };
    let q = TaskPredictions {
        labels: vec![2, 3],
        class_il: vec![2, 3],
        task_il: vec![2, 3],
        confidence: vec![1.0; 2],
    };
    assert_eq!(p.accuracy(Protocol::ClassIl), 1.0);
    assert_eq!(p.accuracy(Protocol::TaskIl), 1.0);
    let map = vec![Some(0), Some(0), Some(1), Some(1)];
    let m = task_confusion(&[p.clone(), q.clone()], &map, 2);
    assert_eq!(m, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert_eq!(recency_share(&m), 0.0);
    let conf: Vec<f64> = p.confidence.iter().chain(&q.confidence).copied().collect();
    let correct: Vec<bool> = p.correct().into_iter().chain(q.correct()).collect();
    assert_eq!(ece(&conf, &correct, ECE_BINS).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn task_il_never_below_class_il(seed in any::<u64>(), t in 0usize..5, n in 1usize..200) {
        let mut rng = Rng::new(seed);
        let p = random_logit_predictions(&[2 * t, 2 * t + 1], 10, n, &mut rng);
        prop_assert!(p.accuracy(Protocol::TaskIl) >= p.accuracy(Protocol::ClassIl));
    }

    #[test]
    fn harmonic_mean_bounds(s in 0.0f64..=1.0, p in 0.0f64..=1.0) {
        let h = tradeoff(s, p);
        prop_assert!(h <= s.max(p) + 1e-15);
        prop_assert!(h <= (s + p) / 2.0 + 1e-15);
        prop_assert!(h >= s.min(p) - 1e-15);
    }

    #[test]
    fn ece_is_permutation_invariant_and_bounded(seed in any::<u64>(), n in 1usize..300, bins in 1usize..20) {
        let mut rng = Rng::new(seed);
        let conf: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let ok: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.6)).collect();
        let e = ece(&conf, &ok, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let perm = rng.permutation(n);
        let pc: Vec<f64> = perm.iter().map(|&i| conf[i]).collect();
        let po: Vec<bool> = perm.iter().map(|&i| ok[i]).collect();
        prop_assert!((ece(&pc, &po, bins).unwrap() - e).abs() < 1e-12);

        let acc = ok.iter().filter(|&&b| b).count() as f64 / n as f64;
        let mean_conf = conf.iter().sum::<f64>() / n as f64;
        prop_assert!((ece(&conf, &ok, 1).unwrap() - (acc - mean_conf).abs()).abs() < 1e-12);

        let table = reliability_table(&conf, &ok, bins).unwrap();
        prop_assert_eq!(table.iter().map(|b| b.count).sum::<usize>(), n);
    }
}

#[test]
fn tradeoff_arithmetic() {
    assert_abs_diff_eq!(tradeoff(0.40, 0.60), 0.48, epsilon = 1e-12);
    assert_eq!(tradeoff(0.5, 0.5), 0.5);
    assert_eq!(tradeoff(0.0, 0.7), 0.0);
    assert_eq!(tradeoff(0.0, 0.0), 0.0);
}

#[test]
fn ece_boundaries() {
    assert_eq!(ece(&[1.0; 50], &[true; 50], ECE_BINS).unwrap(), 0.0);
    assert_eq!(ece(&[1.0; 50], &[false; 50], ECE_BINS).unwrap(), 1.0);
    assert_abs_diff_eq!(ece(&[0.8, 0.6], &[true, false], 1).unwrap(), 0.2, epsilon = 1e-12);
    assert_eq!(ece(&[], &[], ECE_BINS).unwrap(), 0.0);
    assert!(ece(&[0.5], &[true], 0).is_err());
}

#[test]
fn stability_and_plasticity_from_matrix() {
    let a = TaskAccuracyMatrix {
        rows: vec![vec![0.9], vec![0.5, 0.8], vec![0.3, 0.5, 0.7]],
    };
    let sp = stability_plasticity(&a).unwrap();
    assert_abs_diff_eq!(sp.stability, 0.4, epsilon = 1e-12);
    assert_abs_diff_eq!(sp.plasticity, 0.8, epsilon = 1e-12);
    assert_abs_diff_eq!(sp.tradeoff, 2.0 * 0.4 * 0.8 / 1.2, epsilon = 1e-12);
    let one = TaskAccuracyMatrix { rows: vec![vec![0.9]] };
    assert!(matches!(stability_plasticity(&one), Err(trire::Error::Degenerate(_))));
}

#[test]
fn trained_runs_keep_task_il_above_class_il_on_every_pass() {
    let s = common::blobs(3, 40, 4);
    for method in [Method::Trire, Method::Er, Method::Sgd] {
        let out = run_method(method, &s, &[12], &common::small_config(4)).unwrap();
        let (c, t) = (&out.record.class_il, &out.record.task_il);
        assert!(c.is_square_lower() && t.is_square_lower());
        for (rc, rt) in c.rows.iter().zip(&t.rows) {
            for (a, b) in rc.iter().zip(rt) {
                assert!(b >= a, "{method:?}: task-il {b} < class-il {a}");
            }
        }
        for row in &out.metrics.task_confusion {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        assert!(out.metrics.is_finite());
    }
}

fn schema(name: &str) -> serde_json::Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reports_validate_against_published_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = trire::experiment::parse_config(&format!(
        "seeds=1,2 out=\"{}\"\n[data]\nsource=blobs blob_dim=8 blob_samples=30 tasks=2\n[model]\nhidden=8\n[train]\nepochs=5 lr=0.01 lr_revise=0.001 buffer=10",
        tmp.path().display()
    ))
    .unwrap();
    let out = trire::experiment::run_experiment(&cfg).unwrap();
    let metrics = jsonschema::validator_for(&schema("metrics-report.schema.json")).unwrap();
    for seed in [1, 2] {
        let text = std::fs::read_to_string(out.dir.join(format!("seed-{seed}/metrics.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let errors: Vec<String> = metrics.iter_errors(&v).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let agg = jsonschema::validator_for(&schema("aggregate.schema.json")).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.dir.join("aggregate.json")).unwrap()).unwrap();
    assert!(agg.is_valid(&v));
    // A report with an accuracy above one must be rejected.
    let mut bad: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.dir.join("seed-1/metrics.json")).unwrap()).unwrap();
    bad["class_il"] = serde_json::json!(1.5);
    assert!(!metrics.is_valid(&bad));
}
