use std::time::Instant;

use facemap_core::attrmaps::{estimate_curvature, estimate_normals, FitParams};
use facemap_core::scan::{project, FaceScan};
use facemap_core::synth::{sample_field, sample_range_image, Axis, Surface};
use facemap_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pixels at least `band` pixels away from any invalid or out-of-image pixel.
fn interior(mask: &Tensor, band: usize) -> Vec<usize> {
    let (m, n) = (mask.dims()[0], mask.dims()[1]);
    let mut out = Vec::new();
    for i in band..m.saturating_sub(band) {
        for j in band..n.saturating_sub(band) {
            let ok = (i - band..=i + band).all(|a| (j - band..=j + band).all(|b| mask.get(&[a, b]) == 1.0));
            if ok {
                out.push(i * n + j);
            }
        }
    }
    out
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (d / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn normal_at(nm: &facemap_core::attrmaps::NormalMaps, p: usize) -> [f64; 3] {
    [nm.nx.data()[p], nm.ny.data()[p], nm.nz.data()[p]]
}

fn shape_index_at(surface: Surface, extent_px: usize, band: usize) -> Vec<f64> {
    let (g, mask, _) = sample_range_image(&surface, 1.0, extent_px);
    let nm = estimate_normals(&g, &mask, FitParams::default());
    let c = estimate_curvature(&g, &nm, FitParams::default());
    interior(&c.mask, band).into_iter().map(|p| c.shape_index.data()[p]).collect()
}

#[test]
fn hemisphere_normals_match_analytic() {
    let (g, mask, oracle) = sample_range_image(&Surface::Sphere { r: 50.0 }, 1.0, 101);
    let start = Instant::now();
    let nm = estimate_normals(&g, &mask, FitParams::default());
    let elapsed = start.elapsed().as_secs_f64();
    let mut errs: Vec<f64> = interior(&mask, 3).into_iter().map(|p| angle_deg(oracle.normals[p], normal_at(&nm, p))).collect();
    assert!(errs.len() > 5000);
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    let max = *errs.last().unwrap();
    assert!(median < 0.5, "median {median}");
    assert!(max < 2.0, "max {max}");
    assert!(elapsed < 5.0, "{elapsed} s");
}

#[test]
fn cylinder_shape_index_is_quarter() {
    let si = shape_index_at(Surface::Cylinder { r: 40.0, axis: Axis::Y }, 61, 4);
    assert!(!si.is_empty());
    assert!(si.iter().all(|v| (v - 0.25).abs() <= 0.02), "{:?}", si.iter().map(|v| (v - 0.25).abs()).fold(0.0, f64::max));
}

#[test]
fn saddle_apex_shape_index_is_half() {
    let (g, mask, _) = sample_range_image(&Surface::Saddle { r: 40.0 }, 1.0, 41);
    let nm = estimate_normals(&g, &mask, FitParams::default());
    let c = estimate_curvature(&g, &nm, FitParams::default());
    let apex = c.shape_index.get(&[20, 20]);
    assert!((apex - 0.5).abs() <= 0.02, "{apex}");
}

#[test]
fn plane_shape_index_is_exactly_half() {
    let si = shape_index_at(Surface::Plane, 31, 4);
    assert!(!si.is_empty());
    assert!(si.iter().all(|&v| v == 0.5));
}

#[test]
fn sphere_shape_index_is_umbilic_limit() {
    let si = shape_index_at(Surface::Sphere { r: 50.0 }, 101, 4);
    assert!(si.len() > 5000);
    assert!(si.iter().all(|v| (v - 1.0).abs() <= 0.02));
}

#[test]
fn shape_index_is_scale_invariant() {
    let (g, mask, _) = sample_range_image(&Surface::Ellipsoid { a: 60.0, b: 45.0, c: 35.0 }, 1.0, 81);
    let nm = estimate_normals(&g, &mask, FitParams::default());
    let base = estimate_curvature(&g, &nm, FitParams::default());
    for s in [0.1, 3.0] {
        let gs = g.map(|v| v * s);
        let nms = estimate_normals(&gs, &mask, FitParams::default());
        let scaled = estimate_curvature(&gs, &nms, FitParams::default());
        for p in interior(&base.mask, 4) {
            assert!((base.shape_index.data()[p] - scaled.shape_index.data()[p]).abs() < 0.01);
        }
    }
}

#[test]
fn estimators_are_deterministic() {
    let (g, mask, _) = sample_range_image(&Surface::Ellipsoid { a: 60.0, b: 45.0, c: 35.0 }, 1.0, 61);
    let a = estimate_normals(&g, &mask, FitParams::default());
    let b = estimate_normals(&g, &mask, FitParams::default());
    assert_eq!(a.nx, b.nx);
    assert_eq!(a.nz, b.nz);
    let ca = estimate_curvature(&g, &a, FitParams::default());
    let cb = estimate_curvature(&g, &b, FitParams::default());
    assert_eq!(ca.shape_index, cb.shape_index);
}

fn hemisphere_scan() -> FaceScan {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    sample_field(&Surface::Sphere { r: 50.0 }, 0.25, 100.0, 0.0, [0.5; 3], &mut rng).0
}

#[test]
fn hemisphere_projection_depth_within_half_mm() {
    let proj = project(&hemisphere_scan(), 64, 64).unwrap();
    let mut checked = 0;
    for i in 0..64 {
        for j in 0..64 {
            if proj.mask.get(&[i, j]) == 0.0 {
                continue;
            }
            let (x, y, z) = (proj.geometry.get(&[i, j, 0]), proj.geometry.get(&[i, j, 1]), proj.geometry.get(&[i, j, 2]));
            let truth = (2500.0 - x * x - y * y).max(0.0).sqrt();
            assert!((z - truth).abs() < 0.5, "pixel ({i}, {j}): {z} vs {truth}");
            checked += 1;
        }
    }
    assert!(checked > 2500);
}

#[test]
fn projection_commutes_with_quarter_turn() {
    let scan = hemisphere_scan();
    let rotated = FaceScan::new(scan.points.iter().map(|p| [-p[1], p[0], p[2]]).collect(), scan.texture.clone());
    let m = 48;
    let a = project(&scan, m, m).unwrap();
    let b = project(&rotated, m, m).unwrap();
    for i in 0..m {
        for j in 0..m {
            let (ri, rj) = (m - 1 - j, i);
            assert_eq!(a.mask.get(&[i, j]), b.mask.get(&[ri, rj]));
            assert!((a.geometry.get(&[i, j, 2]) - b.geometry.get(&[ri, rj, 2])).abs() < 0.5);
        }
    }
}

#[test]
fn normals_rotate_with_the_scan() {
    let surface = Surface::Ellipsoid { a: 60.0, b: 45.0, c: 40.0 };
    let (ea, eb, ec) = (60.0f64, 45.0f64, 40.0f64);
    let analytic = |p: [f64; 3]| [p[0] / (ea * ea), p[1] / (eb * eb), p[2] / (ec * ec)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scan = sample_field(&surface, 1.0, 110.0, 0.0, [0.5; 3], &mut rng).0;
    let theta = 30f64.to_radians();
    let (s, c) = theta.sin_cos();
    let rot = |p: [f64; 3]| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
    let unrot = |p: [f64; 3]| [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]];
    let rotated = FaceScan::new(scan.points.iter().map(|&p| rot(p)).collect(), scan.texture.clone());
    for (input, turned) in [(&scan, false), (&rotated, true)] {
        let proj = project(input, 96, 96).unwrap();
        let nm = estimate_normals(&proj.geometry, &proj.mask, FitParams::default());
        let pixels = interior(&nm.mask, 3);
        assert!(pixels.len() > 3000);
        let mut errs: Vec<f64> = pixels
            .into_iter()
            .map(|p| {
                let q = [proj.geometry.data()[3 * p], proj.geometry.data()[3 * p + 1], proj.geometry.data()[3 * p + 2]];
                let expected = if turned { rot(analytic(unrot(q))) } else { analytic(q) };
                angle_deg(expected, normal_at(&nm, p))
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 0.5, "turned={turned}: median {median}");
    }
}

#[test]
fn normals_follow_a_quarter_turn_pixelwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scan = sample_field(&Surface::Ellipsoid { a: 60.0, b: 45.0, c: 40.0 }, 1.0, 110.0, 0.0, [0.5; 3], &mut rng).0;
    let rotated = FaceScan::new(scan.points.iter().map(|p| [-p[1], p[0], p[2]]).collect(), scan.texture.clone());
    let m = 80;
    let a = project(&scan, m, m).unwrap();
    let b = project(&rotated, m, m).unwrap();
    let na = estimate_normals(&a.geometry, &a.mask, FitParams::default());
    let nb = estimate_normals(&b.geometry, &b.mask, FitParams::default());
    let pixels = interior(&na.mask, 3);
    assert!(pixels.len() > 2000);
    for p in pixels {
        let (i, j) = (p / m, p % m);
        let q = (m - 1 - j) * m + i;
        let n = normal_at(&na, p);
        let turned = [-n[1], n[0], n[2]];
        assert!(angle_deg(turned, normal_at(&nb, q)) < 1.0, "pixel ({i}, {j})");
    }
}
