use std::collections::BTreeSet;

use facemap_core::attrmaps::MapKind;
use facemap_core::eval::*;
use facemap_core::expression::Expression;
use facemap_core::scan::{DatasetManifest, ManifestRow};
use facemap_core::svm::{ScoreMatrix, SvmParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn manifest(subjects: usize) -> DatasetManifest {
    let mut rows = Vec::new();
    for s in 0..subjects {
        for e in Expression::ALL {
            for level in [3u8, 4] {
                rows.push(ManifestRow {
                    scan_id: format!("S{s:03}_{}{level:02}", e.code()),
                    subject_id: format!("S{s:03}"),
                    expression: e,
                    intensity: level,
                    path: "unused.scan".into(),
                });
            }
        }
        // a weak-intensity scan that must never be sampled
        rows.push(ManifestRow {
            scan_id: format!("S{s:03}_AN01"),
            subject_id: format!("S{s:03}"),
            expression: Expression::Anger,
            intensity: 1,
            path: "unused.scan".into(),
        });
    }
    DatasetManifest::new(rows).unwrap()
}

fn count_samples(m: &DatasetManifest, subjects: &[String]) -> usize {
    m.rows.iter().filter(|r| eligible(r) && subjects.contains(&r.subject_id)).count()
}

fn check_plan(plan: &FoldPlan, n_subjects: usize) {
    for round in &plan.rounds {
        assert_eq!(round.subjects.len(), n_subjects);
        let mut union = BTreeSet::new();
        for f in &round.folds {
            let train: BTreeSet<_> = f.train.iter().collect();
            assert!(f.test.iter().all(|s| !train.contains(s)));
            assert_eq!(f.train.len() + f.test.len(), n_subjects);
            for s in &f.test {
                assert!(union.insert(s.clone()), "test sets overlap");
            }
        }
        assert_eq!(union, round.subjects.iter().cloned().collect());
    }
}

#[test]
fn sixty_subjects_give_648_72_splits() {
    let m = manifest(60);
    for protocol in [Protocol::I, Protocol::II] {
        let plan = make_folds(&m, &PlanParams { protocol, rounds: 3, seed: 5, ..PlanParams::default() }).unwrap();
        check_plan(&plan, 60);
        for f in plan.rounds.iter().flat_map(|r| &r.folds) {
            assert_eq!((f.train.len(), f.test.len()), (54, 6));
            assert_eq!((count_samples(&m, &f.train), count_samples(&m, &f.test)), (648, 72));
        }
    }
}

#[test]
fn plans_are_deterministic_under_seed() {
    let m = manifest(80);
    let p = PlanParams { rounds: 4, seed: 17, ..PlanParams::default() };
    assert_eq!(make_folds(&m, &p).unwrap(), make_folds(&m, &p).unwrap());
    assert_ne!(make_folds(&m, &p).unwrap(), make_folds(&m, &PlanParams { seed: 18, ..p }).unwrap());
}

#[test]
fn protocol_two_fixes_subjects_and_protocol_one_redraws() {
    let m = manifest(100);
    let two = make_folds(&m, &PlanParams { protocol: Protocol::II, rounds: 2, seed: 1, ..PlanParams::default() }).unwrap();
    assert_eq!(two.rounds[0].subjects, two.rounds[1].subjects);
    assert_ne!(two.rounds[0].folds, two.rounds[1].folds);
    let one = make_folds(&m, &PlanParams { protocol: Protocol::I, rounds: 2, seed: 1, ..PlanParams::default() }).unwrap();
    assert_ne!(one.rounds[0].subjects, one.rounds[1].subjects);
    check_plan(&one, 60);
    let fixed = make_folds(
        &m,
        &PlanParams { protocol: Protocol::I, rounds: 2, seed: 1, pool: SubjectPool::Fixed, ..PlanParams::default() },
    )
    .unwrap();
    assert_eq!(fixed.rounds[0].subjects, fixed.rounds[1].subjects);
}

#[test]
fn too_few_subjects_is_an_error() {
    assert!(matches!(
        make_folds(&manifest(59), &PlanParams::default()),
        Err(EvalError::InsufficientSubjects { available: 59, needed: 60 })
    ));
}

/// Features: one-hot class signature per map plus Gaussian-ish noise, unit norm.
fn features(m: &DatasetManifest, noise: f64, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FeatureTable::new();
    for r in &m.rows {
        for map in MapKind::ALL {
            let mut v: Vec<f64> = (0..12).map(|_| rng.random_range(-noise..noise)).collect();
            v[r.expression.index() * 2] += 1.0;
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            t.insert(&r.scan_id, map, v.into_iter().map(|a| a / n).collect());
        }
    }
    t
}

fn small_plan(m: &DatasetManifest, rounds: usize) -> FoldPlan {
    make_folds(m, &PlanParams { protocol: Protocol::II, rounds, subjects: 12, seed: 3, ..PlanParams::default() }).unwrap()
}

#[test]
fn orthogonal_signatures_are_classified_perfectly() {
    let m = manifest(12);
    let r = evaluate(&features(&m, 0.1, 0), &m, &small_plan(&m, 1), &MapKind::ALL, &SvmParams::default()).unwrap();
    assert_eq!(r.labels.len(), 10);
    assert!(r.mean.iter().all(|&a| a == 100.0));
    for (i, row) in r.confusion.iter().enumerate() {
        assert_eq!(row[i], 100.0);
    }
}

#[test]
fn permuted_labels_fall_to_chance() {
    let m = manifest(60);
    let feats = features(&m, 0.3, 1);
    let shuffled = permute_labels(&m, 99);
    let plan = make_folds(&shuffled, &PlanParams { protocol: Protocol::II, rounds: 2, seed: 4, ..PlanParams::default() }).unwrap();
    assert_eq!(plan.rounds.iter().map(|r| r.folds.len()).sum::<usize>(), 20);
    let r = evaluate(&feats, &shuffled, &plan, &MapKind::ALL, &SvmParams::default()).unwrap();
    let fused = r.mean_of("I_g+I_n+I_c+I_t").unwrap();
    assert!((10.0..=24.0).contains(&fused), "{fused}");
}

#[test]
fn report_is_deterministic_and_well_formed() {
    let m = manifest(12);
    let feats = features(&m, 0.9, 2);
    let plan = small_plan(&m, 2);
    let a = evaluate(&feats, &m, &plan, &MapKind::ALL, &SvmParams::default()).unwrap();
    let b = evaluate(&feats, &m, &plan, &MapKind::ALL, &SvmParams::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.report_csv(), b.report_csv());
    for row in &a.confusion {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.01);
    }
    assert!(a.mean.iter().all(|v| (0.0..=100.0).contains(v)));
    assert!(a.report_csv().starts_with("round,fold,map_or_fusion,accuracy\n1,1,I_g,"));
    assert_eq!(a.report_csv().lines().count(), 1 + 20 * 10);
    assert_eq!(a.per_round.len(), 2);
}

#[test]
fn missing_feature_names_scan_and_map() {
    let m = manifest(12);
    let mut feats = FeatureTable::new();
    for r in &m.rows {
        feats.insert(&r.scan_id, MapKind::Geometry, vec![1.0]);
    }
    match evaluate(&feats, &m, &small_plan(&m, 1), &[MapKind::Geometry, MapKind::Texture], &SvmParams::default()) {
        Err(EvalError::MissingFeature { map, .. }) => assert_eq!(map, MapKind::Texture),
        other => panic!("{other:?}"),
    }
}

#[test]
fn leaking_plan_is_rejected() {
    let m = manifest(12);
    let mut plan = small_plan(&m, 1);
    let s = plan.rounds[0].folds[0].test[0].clone();
    plan.rounds[0].folds[0].train.push(s);
    assert!(matches!(
        evaluate(&features(&m, 0.1, 0), &m, &plan, &MapKind::ALL, &SvmParams::default()),
        Err(EvalError::Leakage { .. })
    ));
}

#[test]
fn features_round_trip_through_directory() {
    let m = manifest(2);
    let feats = features(&m, 0.1, 0);
    let dir = tempfile::tempdir().unwrap();
    for r in &m.rows {
        feats.save(dir.path(), &r.scan_id, MapKind::NormalZ, &[3, 4]).unwrap();
    }
    let back = FeatureTable::load_dir(dir.path(), &m, &MapKind::ALL).unwrap();
    assert_eq!(back.len(), m.rows.len());
    let id = &m.rows[3].scan_id;
    assert_eq!(back.get(id, MapKind::NormalZ).unwrap(), feats.get(id, MapKind::NormalZ).unwrap());
}

proptest! {
    #[test]
    fn fusion_argmax_invariant_under_positive_scaling(
        vals in prop::collection::vec(-5.0f64..5.0, 36), k in 0.01f64..100.0
    ) {
        let a = ScoreMatrix::new(3, 6, vals[..18].to_vec());
        let b = ScoreMatrix::new(3, 6, vals[18..].to_vec());
        let f = fuse_scores(&[&a, &b]).unwrap();
        let g = fuse_scores(&[&a.scale(k), &b.scale(k)]).unwrap();
        prop_assert_eq!(f.predictions(), g.predictions());
        let triple = fuse_scores(&[&a, &a, &a]).unwrap();
        prop_assert_eq!(triple.predictions(), a.predictions());
    }
}
