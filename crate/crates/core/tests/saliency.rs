mod common;

use common::random_model;
use facemap_core::attrmaps::{AttributeMapSet, MapKind, NormalMaps};
use facemap_core::cnn::{ArchSpec, LayerRegistry, NetModel};
use facemap_core::eval::fuse_scores;
use facemap_core::expression::Expression;
use facemap_core::saliency::*;
use facemap_core::svm::{score, LinearModel};
use facemap_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NET: &str = "input 12 12 3\nconv name=c1 out=4 k=3x3 stride=1 pad=1\nrelu name=r1\nmaxpool name=p1 k=2 stride=2\nconv name=c2 out=3 k=3x3\nrelu name=r2\n";

fn random_maps(m: usize, seed: u64) -> AttributeMapSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |k: usize| {
        let dims: Vec<usize> = if k == 1 { vec![m, m] } else { vec![m, m, k] };
        let len = dims.iter().product();
        Tensor::new(dims, (0..len).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    };
    let (g, tex, si, nx, ny, nz) = (t(3), t(3), t(1), t(1), t(1), t(1));
    let mut mask = Tensor::filled(&[m, m], 1.0);
    mask.set(&[0, 0], 0.0);
    let normals = NormalMaps { nx, ny, nz, mask: mask.clone() };
    AttributeMapSet::assemble(g, tex, si, normals, mask)
}

fn random_linear(dim: usize, seed: u64) -> LinearModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LinearModel {
        w: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: rng.random_range(-0.5..0.5),
        positive_label: None,
        map_kind: None,
    }
}

fn net() -> NetModel {
    NetModel::random(ArchSpec::parse(NET).unwrap(), 21).unwrap()
}

#[test]
fn zero_weights_give_bias_sum_and_zero_saliency() {
    let net = net();
    let maps = random_maps(20, 0);
    let zero: Vec<LinearModel> = (0..6)
        .map(|i| LinearModel { bias: 0.25 * i as f64, ..LinearModel::zero(net.feature_dim()) })
        .collect();
    let pairs: Vec<(MapKind, &LinearModel)> = MapKind::ALL.iter().copied().zip(&zero).collect();
    let s = expression_score(&maps, &pairs, &net).unwrap();
    assert!((s - 0.25 * 15.0).abs() < 1e-12);
    let sal = saliency(&maps, &pairs, &net, Expression::Fear, "x").unwrap();
    assert_eq!(sal.values.max_abs(), 0.0);
}

#[test]
fn self_inner_product_scores_one_plus_bias() {
    let net = net();
    let maps = random_maps(20, 1);
    let f = net.extract_feature(&maps.network_input(MapKind::Curvature)).unwrap();
    let m = LinearModel { w: f, bias: 0.125, positive_label: None, map_kind: None };
    let s = expression_score(&maps, &[(MapKind::Curvature, &m)], &net).unwrap();
    assert!((s - 1.125).abs() < 1e-12);
}

#[test]
fn score_matches_fused_evaluation_score() {
    let net = net();
    let maps = random_maps(24, 2);
    let per_map: Vec<Vec<LinearModel>> =
        (0..6).map(|m| (0..6).map(|e| random_linear(net.feature_dim(), 10 * m + e)).collect()).collect();
    let mats: Vec<_> = MapKind::ALL
        .iter()
        .zip(&per_map)
        .map(|(&k, models)| {
            let f = net.extract_feature(&maps.network_input(k)).unwrap();
            score(models, &[f.as_slice()]).unwrap()
        })
        .collect();
    let fused = fuse_scores(&mats.iter().collect::<Vec<_>>()).unwrap();
    for e in 0..6 {
        let pairs: Vec<(MapKind, &LinearModel)> =
            MapKind::ALL.iter().zip(&per_map).map(|(&k, models)| (k, &models[e])).collect();
        let s = expression_score(&maps, &pairs, &net).unwrap();
        assert!((s - fused.get(0, e)).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let net = random_model(NET, 4);
    let maps = random_maps(16, 3);
    let models: Vec<LinearModel> = (0..3).map(|i| random_linear(net.feature_dim(), i)).collect();
    let kinds = [MapKind::NormalX, MapKind::Curvature, MapKind::Texture];
    let pairs: Vec<(MapKind, &LinearModel)> = kinds.iter().copied().zip(&models).collect();
    let base = terms(&maps, &pairs);
    let g = score_gradient(&base, &net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 50 {
        let (i, j) = (rng.random_range(0..16), rng.random_range(0..16));
        // extremes of a map set its normalization range; skip those pixels
        let interior = base.iter().all(|t| {
            let v = t.input.get(&[i, j]);
            v > 2.0 * h && v < 1.0 - 2.0 * h
        });
        if !interior {
            continue;
        }
        let bumped = |d: f64| {
            let ts: Vec<Term> = base
                .iter()
                .map(|t| {
                    let mut input = t.input.clone();
                    input.set(&[i, j], input.get(&[i, j]) + d);
                    Term { map: t.map, input, model: t.model }
                })
                .collect();
            score_terms(&ts, &net).unwrap()
        };
        let fd = (bumped(h) - bumped(-h)) / (2.0 * h);
        let an = g.get(&[i, j]);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        assert!(rel < 1e-4, "pixel ({i},{j}): fd {fd} vs {an}");
        checked += 1;
    }
}

fn pairs(ms: &[LinearModel]) -> Vec<(MapKind, &LinearModel)> {
    MapKind::ALL.iter().copied().zip(ms).collect()
}

#[test]
fn saliency_is_scale_free_and_gradient_is_linear() {
    let net = net();
    let maps = random_maps(20, 6);
    let a: Vec<LinearModel> = (0..6).map(|i| random_linear(net.feature_dim(), 30 + i)).collect();
    let b: Vec<LinearModel> = (0..6).map(|i| random_linear(net.feature_dim(), 40 + i)).collect();
    let scaled: Vec<LinearModel> =
        a.iter().map(|m| LinearModel { w: m.w.iter().map(|v| v * 3.7).collect(), ..m.clone() }).collect();
    let summed: Vec<LinearModel> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| LinearModel { w: x.w.iter().zip(&y.w).map(|(u, v)| u + v).collect(), ..x.clone() })
        .collect();
    let s1 = saliency(&maps, &pairs(&a), &net, Expression::Happiness, "x").unwrap();
    let s2 = saliency(&maps, &pairs(&scaled), &net, Expression::Happiness, "x").unwrap();
    let diff = s1.values.zip_map(&s2.values, |x, y| (x - y).abs()).unwrap().max_abs();
    assert!(diff < 1e-9);
    assert!(s1.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(s1.values.get(&[0, 0]), 0.0);
    let ga = score_gradient(&terms(&maps, &pairs(&a)), &net).unwrap();
    let gb = score_gradient(&terms(&maps, &pairs(&b)), &net).unwrap();
    let gs = score_gradient(&terms(&maps, &pairs(&summed)), &net).unwrap();
    let lin = gs.zip_map(&ga.add(&gb).unwrap(), |x, y| (x - y).abs()).unwrap().max_abs();
    assert!(lin < 1e-10);
}

#[test]
fn identity_net_delta_weight_peaks_at_its_pixel() {
    let arch = ArchSpec::parse("input 8 8 3\nconv name=id out=1 k=1x1\n").unwrap();
    let net = NetModel::build(arch, &LayerRegistry::builtin(), |_, s, dims| {
        Ok(Tensor::filled(dims, if s == "w" { 1.0 / 3.0 } else { 0.0 }))
    })
    .unwrap();
    let mut maps = random_maps(8, 7);
    maps.mask = Tensor::filled(&[8, 8], 1.0);
    for k in [0usize, 9, 37, 63] {
        let mut w = vec![0.0; 64];
        w[k] = 1.0;
        let m = LinearModel { w, bias: 0.0, positive_label: None, map_kind: None };
        let s = saliency(&maps, &[(MapKind::NormalZ, &m)], &net, Expression::Sadness, "x").unwrap();
        let peak = (0..64).max_by(|&a, &b| s.values.data()[a].total_cmp(&s.values.data()[b])).unwrap();
        assert_eq!(peak, k);
        assert_eq!(s.values.data()[k], 1.0);
    }
}

#[test]
fn mismatched_model_dimension_is_rejected() {
    let net = net();
    let maps = random_maps(12, 8);
    let m = LinearModel::zero(5);
    assert!(matches!(
        expression_score(&maps, &[(MapKind::Geometry, &m)], &net),
        Err(SaliencyError::DimMismatch { .. })
    ));
}
