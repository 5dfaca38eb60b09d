//! Normal-component and shape-index maps computed from a geometry map, and
//! the six-map attribute set fed to the network.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::linalg::{eigen_sym2, solve_least_squares};
use crate::scan::Projection;
use crate::tensor::Tensor;

/// Side of the square fitting window for both normals and curvature.
pub const DEFAULT_WINDOW: usize = 5;
/// Neighbours whose rotated normal has a smaller z component are dropped from the cubic fit.
pub const MIN_ROTATED_NZ: f64 = 0.1;
pub const MIN_PLANE_NEIGHBOURS: usize = 3;
pub const MIN_CUBIC_NEIGHBOURS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub window: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams { window: DEFAULT_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMaps {
    pub nx: Tensor,
    pub ny: Tensor,
    pub nz: Tensor,
    /// Input mask with pixels lacking enough neighbours cleared.
    pub mask: Tensor,
}

fn valid(mask: &Tensor, idx: usize) -> bool {
    mask.data()[idx] != 0.0
}

fn point(g: &Tensor, idx: usize) -> [f64; 3] {
    let d = g.data();
    [d[3 * idx], d[3 * idx + 1], d[3 * idx + 2]]
}

fn window_indices(m: usize, n: usize, i: usize, j: usize, half: usize) -> impl Iterator<Item = usize> {
    let (i0, i1) = (i.saturating_sub(half), (i + half).min(m - 1));
    let (j0, j1) = (j.saturating_sub(half), (j + half).min(n - 1));
    (i0..=i1).flat_map(move |a| (j0..=j1).map(move |b| a * n + b)).filter(move |&k| k != i * n + j)
}

fn map_dims(geometry: &Tensor, mask: &Tensor) -> (usize, usize) {
    let d = geometry.dims();
    assert!(d.len() == 3 && d[2] == 3, "geometry map must be m×n×3, got {d:?}");
    assert_eq!(mask.dims(), &d[..2], "mask must be m×n");
    (d[0], d[1])
}

/// Per-pixel normal of the least-squares plane through the pixel's point and
/// its valid window neighbours, oriented toward +z.
pub fn estimate_normals(geometry: &Tensor, mask: &Tensor, params: FitParams) -> NormalMaps {
    let (m, n) = map_dims(geometry, mask);
    let half = params.window / 2;
    let mut nx = Tensor::zeros(&[m, n]);
    let mut ny = Tensor::zeros(&[m, n]);
    let mut nz = Tensor::zeros(&[m, n]);
    let mut out_mask = Tensor::zeros(&[m, n]);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let idx = i * n + j;
            if !valid(mask, idx) {
                continue;
            }
            let p = point(geometry, idx);
            rows.clear();
            rhs.clear();
            for k in window_indices(m, n, i, j, half).filter(|&k| valid(mask, k)) {
                let q = point(geometry, k);
                // plane through p: dz = α dx + β dy
                rows.push(q[0] - p[0]);
                rows.push(q[1] - p[1]);
                rhs.push(q[2] - p[2]);
            }
            if rhs.len() < MIN_PLANE_NEIGHBOURS {
                continue;
            }
            let Ok(sol) = solve_least_squares(&rows, rhs.len(), 2, &rhs) else {
                continue;
            };
            let norm = (sol[0] * sol[0] + sol[1] * sol[1] + 1.0).sqrt();
            nx.data_mut()[idx] = -sol[0] / norm;
            ny.data_mut()[idx] = -sol[1] / norm;
            nz.data_mut()[idx] = 1.0 / norm;
            out_mask.data_mut()[idx] = 1.0;
        }
    }
    NormalMaps { nx, ny, nz, mask: out_mask }
}

/// Rotation (row-major 3×3) taking unit vector `n` (with `n_z > -1`) to +z along the shortest arc.
pub fn align_to_z(n: [f64; 3]) -> [[f64; 3]; 3] {
    // v = n × ez, c = n · ez; R = I + [v]× + [v]×² / (1 + c)
    let v = [n[1], -n[0], 0.0];
    let c = n[2];
    let k = 1.0 / (1.0 + c);
    let vx = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
    let mut r = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let sq: f64 = (0..3).map(|t| vx[a][t] * vx[t][b]).sum();
            r[a][b] = if a == b { 1.0 } else { 0.0 } + vx[a][b] + k * sq;
        }
    }
    r
}

fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Shape index in `[0, 1]` from principal curvatures `κ1 ≥ κ2`.
///
/// Near umbilics the ratio is replaced by its limit: 0.5 when flat, 0 for a
/// positive curvature sum, 1 for a negative one.
pub fn shape_index(k1: f64, k2: f64) -> f64 {
    let sum = k1 + k2;
    let diff = k1 - k2;
    if diff.abs() < 1e-8 * (k1.abs() + k2.abs()).max(1.0) {
        return if sum.abs() < 1e-8 {
            0.5
        } else if sum > 0.0 {
            0.0
        } else {
            1.0
        };
    }
    (0.5 - (sum / diff).atan() / PI).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMaps {
    pub shape_index: Tensor,
    pub k1: Tensor,
    pub k2: Tensor,
    pub mask: Tensor,
}

/// Local cubic (Monge patch) fit using neighbour positions and normals.
///
/// Each neighbour contributes the height equation and the two slope
/// equations in the pixel's tangent frame; the quadratic coefficients give
/// the shape operator whose eigenvalues are the principal curvatures.
pub fn estimate_curvature(geometry: &Tensor, normals: &NormalMaps, params: FitParams) -> CurvatureMaps {
    let mask = &normals.mask;
    let (m, n) = map_dims(geometry, mask);
    let half = params.window / 2;
    let mut si = Tensor::zeros(&[m, n]);
    let mut k1m = Tensor::zeros(&[m, n]);
    let mut k2m = Tensor::zeros(&[m, n]);
    let mut out_mask = Tensor::zeros(&[m, n]);
    let normal = |k: usize| [normals.nx.data()[k], normals.ny.data()[k], normals.nz.data()[k]];
    let mut local = Vec::new();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let idx = i * n + j;
            if !valid(mask, idx) {
                continue;
            }
            let p = point(geometry, idx);
            let rot = align_to_z(normal(idx));
            local.clear();
            for k in window_indices(m, n, i, j, half).filter(|&k| valid(mask, k)) {
                let q = point(geometry, k);
                let u = rotate(&rot, [q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
                let nq = rotate(&rot, normal(k));
                if nq[2] < MIN_ROTATED_NZ {
                    continue;
                }
                local.push((u, [-nq[0] / nq[2], -nq[1] / nq[2]]));
            }
            if local.len() < MIN_CUBIC_NEIGHBOURS {
                continue;
            }
            // work in units of the mean planar neighbour distance so the fit is scale-covariant
            let h = local.iter().map(|(u, _)| u[0].hypot(u[1])).sum::<f64>() / local.len() as f64;
            if h <= 0.0 {
                continue;
            }
            rows.clear();
            rhs.clear();
            for &(u, slope) in &local {
                let (x, y, z) = (u[0] / h, u[1] / h, u[2] / h);
                rows.extend_from_slice(&[0.5 * x * x, x * y, 0.5 * y * y, x * x * x, x * x * y, x * y * y, y * y * y]);
                rhs.push(z);
                rows.extend_from_slice(&[x, y, 0.0, 3.0 * x * x, 2.0 * x * y, y * y, 0.0]);
                rhs.push(slope[0]);
                rows.extend_from_slice(&[0.0, x, y, 0.0, x * x, 2.0 * x * y, 3.0 * y * y]);
                rhs.push(slope[1]);
            }
            let Ok(coef) = solve_least_squares(&rows, rhs.len(), 7, &rhs) else {
                continue;
            };
            let (k1, k2) = eigen_sym2(coef[0] / h, coef[1] / h, coef[2] / h);
            si.data_mut()[idx] = shape_index(k1, k2);
            k1m.data_mut()[idx] = k1;
            k2m.data_mut()[idx] = k2;
            out_mask.data_mut()[idx] = 1.0;
        }
    }
    CurvatureMaps {
        shape_index: si,
        k1: k1m,
        k2: k2m,
        mask: out_mask,
    }
}

/// Shape-index map alone; pixels without a stable fit are 0 and masked out.
pub fn estimate_shape_index(geometry: &Tensor, normals: &NormalMaps, params: FitParams) -> (Tensor, Tensor) {
    let c = estimate_curvature(geometry, normals, params);
    (c.shape_index, c.mask)
}

/// Min-max rescales each channel of an `m×n` or `m×n×k` map to `[0, 1]` over
/// valid pixels. Invalid pixels become 0; a constant channel becomes 0.5.
pub fn normalize_map(map: &Tensor, mask: &Tensor) -> Tensor {
    let d = map.dims();
    assert!(d.len() == 2 || d.len() == 3, "map must be m×n or m×n×k");
    assert_eq!(mask.dims(), &d[..2]);
    let k = if d.len() == 3 { d[2] } else { 1 };
    let pixels = d[0] * d[1];
    let mut out = Tensor::zeros(d);
    for c in 0..k {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in (0..pixels).filter(|&p| valid(mask, p)) {
            let v = map.data()[p * k + c];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        for p in (0..pixels).filter(|&p| valid(mask, p)) {
            let v = map.data()[p * k + c];
            out.data_mut()[p * k + c] = if span > 0.0 { (v - lo) / span } else { 0.5 };
        }
    }
    out
}

/// The six attribute maps of one scan on a common `m×n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMapSet {
    pub geometry: Tensor,
    pub texture: Tensor,
    pub shape_index: Tensor,
    pub nx: Tensor,
    pub ny: Tensor,
    pub nz: Tensor,
    pub mask: Tensor,
}

impl AttributeMapSet {
    /// Computes normals and shape index from a projection. The resulting mask is
    /// the set of pixels valid for every map; all maps are zero elsewhere.
    pub fn compute(proj: &Projection, params: FitParams) -> Self {
        let normals = estimate_normals(&proj.geometry, &proj.mask, params);
        let (si, mask) = estimate_shape_index(&proj.geometry, &normals, params);
        Self::assemble(proj.geometry.clone(), proj.texture.clone(), si, normals, mask)
    }

    pub fn assemble(geometry: Tensor, texture: Tensor, shape_index: Tensor, normals: NormalMaps, mask: Tensor) -> Self {
        let keep = |t: Tensor| -> Tensor {
            let k = t.len() / mask.len();
            let mut t = t;
            for (p, &v) in mask.data().iter().enumerate() {
                if v == 0.0 {
                    t.data_mut()[p * k..(p + 1) * k].iter_mut().for_each(|x| *x = 0.0);
                }
            }
            t
        };
        AttributeMapSet {
            geometry: keep(geometry),
            texture: keep(texture),
            shape_index: keep(shape_index),
            nx: keep(normals.nx),
            ny: keep(normals.ny),
            nz: keep(normals.nz),
            mask,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mask.dims()[0], self.mask.dims()[1])
    }

    /// Single-channel, `[0, 1]`-normalized view of one map as fed to the network.
    pub fn network_input(&self, kind: MapKind) -> Tensor {
        let raw = match kind {
            MapKind::Geometry => self.geometry.channel(2),
            MapKind::Texture => {
                let t = &self.texture;
                let (m, n) = self.dims();
                Tensor::from_fn(&[m, n], |ix| {
                    let p = ix[0] * n + ix[1];
                    let d = &t.data()[3 * p..3 * p + 3];
                    0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]
                })
            }
            MapKind::Curvature => self.shape_index.clone(),
            MapKind::NormalX => self.nx.clone(),
            MapKind::NormalY => self.ny.clone(),
            MapKind::NormalZ => self.nz.clone(),
        };
        normalize_map(&raw, &self.mask)
    }
}

/// One of the six attribute maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapKind {
    Geometry,
    NormalX,
    NormalY,
    NormalZ,
    Curvature,
    Texture,
}

impl MapKind {
    /// Report order: I_g, I_n^x, I_n^y, I_n^z, I_c, I_t.
    pub const ALL: [MapKind; 6] = [
        MapKind::Geometry,
        MapKind::NormalX,
        MapKind::NormalY,
        MapKind::NormalZ,
        MapKind::Curvature,
        MapKind::Texture,
    ];

    /// File-name token.
    pub fn token(self) -> &'static str {
        match self {
            MapKind::Geometry => "geom",
            MapKind::Texture => "tex",
            MapKind::Curvature => "si",
            MapKind::NormalX => "nx",
            MapKind::NormalY => "ny",
            MapKind::NormalZ => "nz",
        }
    }

    /// Label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            MapKind::Geometry => "I_g",
            MapKind::Texture => "I_t",
            MapKind::Curvature => "I_c",
            MapKind::NormalX => "I_nx",
            MapKind::NormalY => "I_ny",
            MapKind::NormalZ => "I_nz",
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MapKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MapKind::ALL
            .iter()
            .copied()
            .find(|k| k.token() == s || k.label() == s)
            .ok_or_else(|| format!("unknown map {s:?}"))
    }
}
