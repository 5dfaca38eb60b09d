//! Synthetic scans with closed-form differential geometry, and a separable
//! six-class "expression" benchmark built from deformed ellipsoid faces.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attrmaps::shape_index;
use crate::expression::{Expression, NUM_CLASSES};
use crate::scan::{save_scan, DatasetManifest, FaceScan, ManifestRow, ScanError};
use crate::tensor::Tensor;

/// Height `z = h(x, y)` with analytic first and second derivatives.
pub trait HeightField {
    /// `None` outside the surface's domain.
    fn height(&self, x: f64, y: f64) -> Option<f64>;
    fn gradient(&self, x: f64, y: f64) -> [f64; 2];
    /// `[h_xx, h_xy, h_yy]`.
    fn hessian(&self, x: f64, y: f64) -> [f64; 3];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Plane,
    /// `z = slope · x`.
    TiltedPlane { slope: f64 },
    /// Upper hemisphere, convex toward the viewer.
    Sphere { r: f64 },
    /// Half-pipe trough (concave toward the viewer) running along `axis`.
    Cylinder { r: f64, axis: Axis },
    /// `z = (x² − y²) / (2r)`.
    Saddle { r: f64 },
    /// Upper half of the ellipsoid with semi-axes `a, b, c`.
    Ellipsoid { a: f64, b: f64, c: f64 },
}

impl HeightField for Surface {
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Surface::Plane => Some(0.0),
            Surface::TiltedPlane { slope } => Some(slope * x),
            Surface::Sphere { r } => {
                let s = r * r - x * x - y * y;
                (s > 0.0).then(|| s.sqrt())
            }
            Surface::Cylinder { r, axis } => {
                let u = if axis == Axis::Y { x } else { y };
                let s = r * r - u * u;
                (s > 0.0).then(|| r - s.sqrt())
            }
            Surface::Saddle { r } => Some((x * x - y * y) / (2.0 * r)),
            Surface::Ellipsoid { a, b, c } => {
                let s = 1.0 - (x / a).powi(2) - (y / b).powi(2);
                (s > 0.0).then(|| c * s.sqrt())
            }
        }
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            Surface::Plane => [0.0, 0.0],
            Surface::TiltedPlane { slope } => [slope, 0.0],
            Surface::Sphere { r } => {
                let z = (r * r - x * x - y * y).sqrt();
                [-x / z, -y / z]
            }
            Surface::Cylinder { r, axis } => {
                let u = if axis == Axis::Y { x } else { y };
                let d = u / (r * r - u * u).sqrt();
                if axis == Axis::Y {
                    [d, 0.0]
                } else {
                    [0.0, d]
                }
            }
            Surface::Saddle { r } => [x / r, -y / r],
            Surface::Ellipsoid { a, b, c } => {
                let s = (1.0 - (x / a).powi(2) - (y / b).powi(2)).sqrt();
                [-c * x / (a * a * s), -c * y / (b * b * s)]
            }
        }
    }

    fn hessian(&self, x: f64, y: f64) -> [f64; 3] {
        match *self {
            Surface::Plane | Surface::TiltedPlane { .. } => [0.0; 3],
            Surface::Sphere { r } => {
                let z2 = r * r - x * x - y * y;
                let z3 = z2 * z2.sqrt();
                [-(r * r - y * y) / z3, -x * y / z3, -(r * r - x * x) / z3]
            }
            Surface::Cylinder { r, axis } => {
                let u = if axis == Axis::Y { x } else { y };
                let s2 = r * r - u * u;
                let d2 = r * r / (s2 * s2.sqrt());
                if axis == Axis::Y {
                    [d2, 0.0, 0.0]
                } else {
                    [0.0, 0.0, d2]
                }
            }
            Surface::Saddle { r } => [1.0 / r, 0.0, -1.0 / r],
            Surface::Ellipsoid { a, b, c } => {
                let s2 = 1.0 - (x / a).powi(2) - (y / b).powi(2);
                let s = s2.sqrt();
                let s3 = s2 * s;
                let (a2, b2) = (a * a, b * b);
                [
                    -c / (a2 * s) - c * x * x / (a2 * a2 * s3),
                    -c * x * y / (a2 * b2 * s3),
                    -c / (b2 * s) - c * y * y / (b2 * b2 * s3),
                ]
            }
        }
    }
}

/// Unit normal of a height field, oriented toward +z.
pub fn field_normal(hf: &dyn HeightField, x: f64, y: f64) -> [f64; 3] {
    let [hx, hy] = hf.gradient(x, y);
    let n = (hx * hx + hy * hy + 1.0).sqrt();
    [-hx / n, -hy / n, 1.0 / n]
}

/// Principal curvatures `κ1 ≥ κ2` of a height field with +z normals; positive
/// where the surface bends toward the normal (the Monge-patch sign).
pub fn field_curvatures(hf: &dyn HeightField, x: f64, y: f64) -> (f64, f64) {
    let [hx, hy] = hf.gradient(x, y);
    let [hxx, hxy, hyy] = hf.hessian(x, y);
    let w = (1.0 + hx * hx + hy * hy).sqrt();
    // shape operator I⁻¹ II
    let (e, f, g) = (1.0 + hx * hx, hx * hy, 1.0 + hy * hy);
    let (l, m, n) = (hxx / w, hxy / w, hyy / w);
    let det_i = e * g - f * f;
    let mean = (e * n - 2.0 * f * m + g * l) / (2.0 * det_i);
    let gauss = (l * n - m * m) / det_i;
    let disc = (mean * mean - gauss).max(0.0).sqrt();
    (mean + disc, mean - disc)
}

/// Smooth bump with compact support: `amp · (1 − (d/R)²)³` for `d < R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r2 = self.radius * self.radius;
        let t = 1.0 - (dx * dx + dy * dy) / r2;
        if t <= 0.0 {
            return (0.0, [0.0; 2], [0.0; 3]);
        }
        let a = self.amplitude;
        let h = a * t * t * t;
        // ∂t/∂x = −2dx/R²
        let g = -6.0 * a * t * t / r2;
        let grad = [g * dx, g * dy];
        let c1 = 24.0 * a * t / (r2 * r2);
        let hxx = c1 * dx * dx + g;
        let hxy = c1 * dx * dy;
        let hyy = c1 * dy * dy + g;
        (h, grad, [hxx, hxy, hyy])
    }

    pub fn contains(&self, x: f64, y: f64, dilation: f64) -> bool {
        (x - self.cx).hypot(y - self.cy) <= self.radius + dilation
    }
}

/// Isotropic Gaussian bump (used for the nose).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub sigma: f64,
    pub amplitude: f64,
}

impl Gaussian {
    fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
        let s2 = self.sigma * self.sigma;
        let h = self.amplitude * (-(x * x + y * y) / (2.0 * s2)).exp();
        let grad = [-x / s2 * h, -y / s2 * h];
        let hxx = (x * x / (s2 * s2) - 1.0 / s2) * h;
        let hxy = x * y / (s2 * s2) * h;
        let hyy = (y * y / (s2 * s2) - 1.0 / s2) * h;
        (h, grad, [hxx, hxy, hyy])
    }
}

/// A base surface plus additive bumps; derivatives stay analytic.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub base: Surface,
    pub offset: f64,
    pub nose: Option<Gaussian>,
    pub bumps: Vec<Bump>,
}

impl Composite {
    fn extras(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
        let mut h = 0.0;
        let mut g = [0.0; 2];
        let mut hh = [0.0; 3];
        let parts = self
            .nose
            .iter()
            .map(|n| n.eval(x, y))
            .chain(self.bumps.iter().map(|b| b.eval(x, y)));
        for (ph, pg, phh) in parts {
            h += ph;
            g[0] += pg[0];
            g[1] += pg[1];
            for k in 0..3 {
                hh[k] += phh[k];
            }
        }
        (h, g, hh)
    }
}

impl HeightField for Composite {
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.base.height(x, y).map(|z| z + self.offset + self.extras(x, y).0)
    }
    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let b = self.base.gradient(x, y);
        let e = self.extras(x, y).1;
        [b[0] + e[0], b[1] + e[1]]
    }
    fn hessian(&self, x: f64, y: f64) -> [f64; 3] {
        let b = self.base.hessian(x, y);
        let e = self.extras(x, y).2;
        [b[0] + e[0], b[1] + e[1], b[2] + e[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub surface: Surface,
    pub sample_pitch: f64,
    /// Side of the square sampling domain centered on the origin.
    pub extent: f64,
    pub noise_sigma: f64,
    pub class_id: Option<usize>,
    pub deform_amplitude: f64,
}

impl SyntheticSpec {
    pub fn new(surface: Surface, sample_pitch: f64, extent: f64) -> Self {
        SyntheticSpec {
            surface,
            sample_pitch,
            extent,
            noise_sigma: 0.0,
            class_id: None,
            deform_amplitude: 0.0,
        }
    }

    fn validate(&self) {
        assert!(self.sample_pitch > 0.0 && self.extent > 0.0 && self.noise_sigma >= 0.0, "invalid synthetic spec");
        if let Surface::Sphere { r } | Surface::Cylinder { r, .. } | Surface::Saddle { r } = self.surface {
            assert!(r > 0.0, "radius must be positive");
        }
    }
}

/// Closed-form ground truth per generated point (before noise).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Oracle {
    pub normals: Vec<[f64; 3]>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub shape_index: Vec<f64>,
}

const LIGHT: [f64; 3] = [0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_2];

fn shade(albedo: [f64; 3], n: [f64; 3]) -> [f64; 3] {
    let lambert = (n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]).max(0.0);
    let s = 0.3 + 0.7 * lambert;
    [albedo[0] * s, albedo[1] * s, albedo[2] * s]
}

/// Samples a height field on a square lattice, recording the analytic oracle.
pub fn sample_field(hf: &dyn HeightField, pitch: f64, extent: f64, noise_sigma: f64, albedo: [f64; 3], rng: &mut ChaCha8Rng) -> (FaceScan, Oracle) {
    let half = (0.5 * extent / pitch).floor() as i64;
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut points = Vec::new();
    let mut texture = Vec::new();
    let mut oracle = Oracle::default();
    for iy in -half..=half {
        for ix in -half..=half {
            let (x, y) = (ix as f64 * pitch, iy as f64 * pitch);
            let Some(mut z) = hf.height(x, y) else { continue };
            let n = field_normal(hf, x, y);
            let (k1, k2) = field_curvatures(hf, x, y);
            if noise_sigma > 0.0 {
                z += noise.sample(rng);
            }
            points.push([x, y, z]);
            texture.push(shade(albedo, n));
            oracle.normals.push(n);
            oracle.k1.push(k1);
            oracle.k2.push(k2);
            oracle.shape_index.push(shape_index(k1, k2));
        }
    }
    (FaceScan::new(points, texture), oracle)
}

/// Range image sampled directly at pixel centres: an `m×m×3` geometry map,
/// its mask, and per-pixel oracle values (zero where masked).
pub fn sample_range_image(hf: &dyn HeightField, pitch: f64, m: usize) -> (Tensor, Tensor, Oracle) {
    let mut g = Tensor::zeros(&[m, m, 3]);
    let mut mask = Tensor::zeros(&[m, m]);
    let mut oracle = Oracle {
        normals: vec![[0.0; 3]; m * m],
        k1: vec![0.0; m * m],
        k2: vec![0.0; m * m],
        shape_index: vec![0.0; m * m],
    };
    let c = (m as f64 - 1.0) / 2.0;
    for i in 0..m {
        for j in 0..m {
            let (x, y) = ((j as f64 - c) * pitch, (c - i as f64) * pitch);
            let Some(z) = hf.height(x, y) else { continue };
            let p = i * m + j;
            g.data_mut()[3 * p..3 * p + 3].copy_from_slice(&[x, y, z]);
            mask.data_mut()[p] = 1.0;
            let (k1, k2) = field_curvatures(hf, x, y);
            oracle.normals[p] = field_normal(hf, x, y);
            oracle.k1[p] = k1;
            oracle.k2[p] = k2;
            oracle.shape_index[p] = shape_index(k1, k2);
        }
    }
    (g, mask, oracle)
}

/// Generates a synthetic scan and its analytic oracle. Deterministic in `seed`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> (FaceScan, Oracle) {
    spec.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = Composite {
        base: spec.surface,
        offset: 0.0,
        nose: None,
        bumps: Vec::new(),
    };
    if let Some(c) = spec.class_id {
        let mut b = class_region(c);
        b.amplitude = spec.deform_amplitude * class_sign(c);
        field.bumps.push(b);
    }
    let (mut scan, oracle) = sample_field(&field, spec.sample_pitch, spec.extent, spec.noise_sigma, [0.8, 0.6, 0.5], &mut rng);
    if let Some(c) = spec.class_id {
        scan.expression = Expression::from_index(c);
    }
    let apex = scan
        .points
        .iter()
        .copied()
        .fold(None::<[f64; 3]>, |best, p| match best {
            Some(b) if b[2] >= p[2] => Some(b),
            _ => Some(p),
        });
    scan.nose_tip = apex;
    (scan, oracle)
}

/// Support of class `c`'s deformation on the face, in nose-centred millimetres.
pub fn class_region(c: usize) -> Bump {
    const CENTERS: [(f64, f64); NUM_CLASSES] = [
        (0.0, 50.0),
        (-38.0, 25.0),
        (38.0, 25.0),
        (0.0, -50.0),
        (-38.0, -25.0),
        (38.0, -25.0),
    ];
    let (cx, cy) = CENTERS[c];
    Bump {
        cx,
        cy,
        radius: CLASS_RADIUS_MM,
        amplitude: 0.0,
    }
}

pub const CLASS_RADIUS_MM: f64 = 18.0;

fn class_sign(c: usize) -> f64 {
    if c % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Deformation amplitudes (mm) for the two intensity levels (3 and 4).
pub const BENCHMARK_AMPLITUDES: [f64; 2] = [5.0, 7.0];
pub const BENCHMARK_PITCH_MM: f64 = 1.25;

/// Subject-specific face shape and skin tone.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub nose: Gaussian,
    pub albedo: [f64; 3],
}

impl SubjectParams {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        SubjectParams {
            a: rng.random_range(62.0..74.0),
            b: rng.random_range(82.0..94.0),
            c: rng.random_range(45.0..60.0),
            nose: Gaussian {
                sigma: rng.random_range(8.0..11.0),
                amplitude: rng.random_range(14.0..20.0),
            },
            albedo: [
                rng.random_range(0.6..0.9),
                rng.random_range(0.45..0.7),
                rng.random_range(0.35..0.6),
            ],
        }
    }

    /// Face surface with the nose tip at the origin.
    pub fn face(&self, class: Option<(usize, f64)>) -> Composite {
        let bumps = class
            .map(|(c, amp)| {
                let mut b = class_region(c);
                b.amplitude = amp * class_sign(c);
                vec![b]
            })
            .unwrap_or_default();
        Composite {
            base: Surface::Ellipsoid { a: self.a, b: self.b, c: self.c },
            offset: -(self.c + self.nose.amplitude),
            nose: Some(self.nose),
            bumps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub manifest: DatasetManifest,
    pub scans: Vec<(String, FaceScan)>,
    pub subjects: Vec<SubjectParams>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

pub const MIN_BENCHMARK_SUBJECTS: usize = 12;

/// Builds the separable benchmark: per subject, six classes at two intensities.
/// Scans are slightly rotated and translated so pose normalization has work to do.
pub fn generate_benchmark(n_subjects: usize, seed: u64) -> Benchmark {
    assert!(n_subjects >= MIN_BENCHMARK_SUBJECTS, "benchmark needs at least {MIN_BENCHMARK_SUBJECTS} subjects");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut scans = Vec::new();
    let mut subjects = Vec::new();
    for s in 0..n_subjects {
        let params = SubjectParams::sample(&mut rng);
        let subject_id = format!("S{:03}", s + 1);
        for class in 0..NUM_CLASSES {
            for (level, &amp) in BENCHMARK_AMPLITUDES.iter().enumerate() {
                let intensity = 3 + level as u8;
                let field = params.face(Some((class, amp)));
                let extent = 2.0 * params.b;
                let (mut scan, _) = sample_field(&field, BENCHMARK_PITCH_MM, extent, 0.0, params.albedo, &mut rng);
                let yaw = rng.random_range(-2.0..2.0) * PI / 180.0;
                let pitch = rng.random_range(-2.0..2.0) * PI / 180.0;
                let shift = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let pose = |p: [f64; 3]| -> [f64; 3] {
                    let (cy, sy) = (yaw.cos(), yaw.sin());
                    let (cp, sp) = (pitch.cos(), pitch.sin());
                    let (x, z) = (cy * p[0] + sy * p[2], -sy * p[0] + cy * p[2]);
                    let (y, z) = (cp * p[1] - sp * z, sp * p[1] + cp * z);
                    [round4(x + shift[0]), round4(y + shift[1]), round4(z + shift[2])]
                };
                for p in scan.points.iter_mut() {
                    *p = pose(*p);
                }
                for t in scan.texture.iter_mut() {
                    *t = [round4(t[0]), round4(t[1]), round4(t[2])];
                }
                scan.nose_tip = Some(pose([0.0, 0.0, 0.0]));
                let expression = Expression::from_index(class).unwrap();
                scan.subject_id = subject_id.clone();
                scan.expression = Some(expression);
                scan.intensity = Some(intensity);
                let scan_id = format!("{subject_id}_{}{:02}", expression.code(), intensity);
                rows.push(ManifestRow {
                    scan_id: scan_id.clone(),
                    subject_id: subject_id.clone(),
                    expression,
                    intensity,
                    path: PathBuf::from(format!("{scan_id}.txt")),
                });
                scans.push((scan_id, scan));
            }
        }
        subjects.push(params);
    }
    Benchmark {
        manifest: DatasetManifest::new(rows).expect("unique ids"),
        scans,
        subjects,
    }
}

/// Writes scans and `manifest.csv` into `dir`.
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<PathBuf, ScanError> {
    std::fs::create_dir_all(dir).map_err(|source| ScanError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (id, scan) in &bench.scans {
        save_scan(dir.join(format!("{id}.txt")), scan)?;
    }
    let mut manifest = bench.manifest.clone();
    for r in manifest.rows.iter_mut() {
        r.path = dir.join(&r.path);
    }
    let path = dir.join("manifest.csv");
    manifest.save(&path)?;
    Ok(path)
}
