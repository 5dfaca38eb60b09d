//! Textured point-cloud scans: file IO, the dataset manifest, pose
//! normalization and raster projection to geometry/texture maps.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::expression::Expression;
use crate::linalg::eigen_sym3;
use crate::tensor::Tensor;

pub const MIN_SCAN_POINTS: usize = 1000;
pub const DEFAULT_CROP_RADIUS_MM: f64 = 90.0;
pub const DEFAULT_MAP_SIZE: usize = 128;
/// Nearest neighbours blended per pixel.
pub const IDW_NEIGHBOURS: usize = 8;
/// Interpolation radius in grid pitches.
pub const IDW_RADIUS_PITCHES: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("rejected scan: {0} points (need at least {MIN_SCAN_POINTS})")]
    RejectedScan(usize),
    #[error("no nose tip available")]
    NoNoseTip,
    #[error("projection is empty")]
    EmptyProjection,
    #[error("map size {0}x{1} is below the 16x16 minimum")]
    MapTooSmall(usize, usize),
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct FaceScan {
    pub points: Vec<Point3>,
    /// Per-point RGB in `[0, 1]`.
    pub texture: Vec<[f64; 3]>,
    pub nose_tip: Option<Point3>,
    pub subject_id: String,
    pub expression: Option<Expression>,
    pub intensity: Option<u8>,
}

impl FaceScan {
    pub fn new(points: Vec<Point3>, texture: Vec<[f64; 3]>) -> Self {
        assert_eq!(points.len(), texture.len(), "texture must match points");
        FaceScan {
            points,
            texture,
            nose_tip: None,
            subject_id: String::new(),
            expression: None,
            intensity: None,
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.points.len() < MIN_SCAN_POINTS {
            return Err(ScanError::RejectedScan(self.points.len()));
        }
        Ok(())
    }
}

pub fn parse_scan(text: &str) -> Result<FaceScan, ScanError> {
    let mut points = Vec::new();
    let mut texture = Vec::new();
    let mut nose_tip = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace().peekable();
        let is_header = tokens.peek() == Some(&"nose_tip");
        if is_header {
            tokens.next();
        }
        let values = tokens
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ScanError::Parse {
                        line: line_no,
                        msg: format!("bad number {t:?}"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if is_header {
            if values.len() != 3 {
                return Err(ScanError::Parse {
                    line: line_no,
                    msg: "nose_tip needs 3 coordinates".into(),
                });
            }
            nose_tip = Some([values[0], values[1], values[2]]);
        } else {
            if values.len() != 6 {
                return Err(ScanError::Parse {
                    line: line_no,
                    msg: format!("expected `x y z r g b`, found {} fields", values.len()),
                });
            }
            points.push([values[0], values[1], values[2]]);
            texture.push([
                values[3].clamp(0.0, 1.0),
                values[4].clamp(0.0, 1.0),
                values[5].clamp(0.0, 1.0),
            ]);
        }
    }
    let mut scan = FaceScan::new(points, texture);
    scan.nose_tip = nose_tip;
    Ok(scan)
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<FaceScan, ScanError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scan(&text)
}

/// Text form of a scan; `f64` display is shortest round-trip, so parsing it back is bit-exact.
pub fn format_scan(scan: &FaceScan) -> String {
    let mut out = String::with_capacity(scan.points.len() * 48);
    if let Some([x, y, z]) = scan.nose_tip {
        writeln!(out, "nose_tip {x} {y} {z}").unwrap();
    }
    for (p, t) in scan.points.iter().zip(&scan.texture) {
        writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], t[0], t[1], t[2]).unwrap();
    }
    out
}

pub fn save_scan(path: impl AsRef<Path>, scan: &FaceScan) -> Result<(), ScanError> {
    let path = path.as_ref();
    fs::write(path, format_scan(scan)).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub scan_id: String,
    pub subject_id: String,
    pub expression: Expression,
    pub intensity: u8,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_HEADER: [&str; 5] = ["scan_id", "subject_id", "expression", "intensity", "path"];

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self, ScanError> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.scan_id.as_str()) {
                return Err(ScanError::Manifest(format!("duplicate scan_id {:?}", r.scan_id)));
            }
        }
        Ok(DatasetManifest { rows })
    }

    /// Reads a manifest; relative scan paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScanError> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path).map_err(|e| ScanError::Manifest(format!("{}: {e}", path.display())))?;
        let header = reader.headers().map_err(|e| ScanError::Manifest(e.to_string()))?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names != MANIFEST_HEADER {
            return Err(ScanError::Manifest(format!("bad header {names:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ScanError::Manifest(e.to_string()))?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let line = i + 2;
            let expression = field(2)
                .parse::<Expression>()
                .map_err(|e| ScanError::Manifest(format!("line {line}: {e}")))?;
            let intensity: u8 = field(3)
                .parse()
                .ok()
                .filter(|v| (1..=4).contains(v))
                .ok_or_else(|| ScanError::Manifest(format!("line {line}: intensity must be 1..4")))?;
            let p = PathBuf::from(field(4));
            rows.push(ManifestRow {
                scan_id: field(0).to_string(),
                subject_id: field(1).to_string(),
                expression,
                intensity,
                path: if p.is_absolute() { p } else { base.join(p) },
            });
        }
        DatasetManifest::new(rows)
    }

    /// Writes the manifest with paths relative to `dir` when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScanError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = MANIFEST_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            writeln!(
                out,
                "{},{},{},{},{}",
                r.scan_id,
                r.subject_id,
                r.expression,
                r.intensity,
                p.display()
            )
            .unwrap();
        }
        fs::write(path, out).map_err(|source| ScanError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn row(&self, scan_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.scan_id == scan_id)
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize3(v: Point3) -> Point3 {
    let n = dot3(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Orthonormal pose frame `[x_axis, y_axis, z_axis]` for points given relative to `origin`.
///
/// Largest variance maps to +y, the next to +x and the smallest (depth) to +z.
/// In-plane axes keep the sign closest to the input axes; +z is chosen so the
/// cloud lies behind the origin on average (the nose tip protrudes toward the
/// viewer). When the two in-plane variances are nearly equal only the depth
/// axis is aligned and the in-plane orientation is kept.
fn pose_frame(points: &[Point3], origin: Point3) -> [Point3; 3] {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        let d = sub(*p, origin);
        for k in 0..3 {
            mean[k] += d[k] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = sub(sub(*p, origin), mean);
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += d[a] * d[b] / n;
            }
        }
    }
    let (vals, vecs) = eigen_sym3(cov);
    let col = |k: usize| [vecs[0][k], vecs[1][k], vecs[2][k]];

    let mut z = col(2);
    let side = dot3(mean, z);
    if side > 0.0 || (side == 0.0 && z[2] < 0.0) {
        z = [-z[0], -z[1], -z[2]];
    }
    let in_plane_degenerate = vals[0] - vals[1] <= 1e-6 * vals[0].abs().max(f64::MIN_POSITIVE);
    let (x, y) = if in_plane_degenerate {
        let ex = [1.0, 0.0, 0.0];
        let mut x = sub(ex, scale3(z, dot3(ex, z)));
        if dot3(x, x) < 1e-12 {
            let ey = [0.0, 1.0, 0.0];
            x = sub(ey, scale3(z, dot3(ey, z)));
        }
        let x = normalize3(x);
        (x, cross(z, x))
    } else {
        let mut y = col(0);
        if y[1] < 0.0 {
            y = scale3(y, -1.0);
        }
        let mut x = col(1);
        if x[0] < 0.0 {
            x = scale3(x, -1.0);
        }
        if dot3(cross(x, y), z) < 0.0 {
            x = scale3(x, -1.0);
        }
        (x, y)
    };
    [x, y, z]
}

fn scale3(v: Point3, s: f64) -> Point3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn to_frame(p: Point3, origin: Point3, frame: &[Point3; 3]) -> Point3 {
    let d = sub(p, origin);
    [dot3(d, frame[0]), dot3(d, frame[1]), dot3(d, frame[2])]
}

/// Fallback nose tip: the point of maximal depth after pose normalization
/// of the whole cloud (first such point on ties).
pub fn detect_nose_tip(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for k in 0..3 {
            centroid[k] += p[k] / n;
        }
    }
    let frame = pose_frame(points, centroid);
    let mut best = 0;
    let mut best_z = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let z = to_frame(*p, centroid, &frame)[2];
        if z > best_z {
            best_z = z;
            best = i;
        }
    }
    Some(points[best])
}

/// Crops to `crop_radius_mm` around the nose tip, moves the tip to the origin
/// and rotates into the PCA pose frame.
pub fn preprocess(scan: &FaceScan, crop_radius_mm: f64) -> Result<FaceScan, ScanError> {
    let tip = match scan.nose_tip {
        Some(t) => t,
        None => detect_nose_tip(&scan.points).ok_or(ScanError::NoNoseTip)?,
    };
    let r2 = crop_radius_mm * crop_radius_mm;
    let mut kept = Vec::new();
    let mut tex = Vec::new();
    for (p, t) in scan.points.iter().zip(&scan.texture) {
        let d = sub(*p, tip);
        if dot3(d, d) <= r2 {
            kept.push(*p);
            tex.push(*t);
        }
    }
    if kept.is_empty() {
        return Err(ScanError::NoNoseTip);
    }
    let frame = pose_frame(&kept, tip);
    let points = kept.iter().map(|p| to_frame(*p, tip, &frame)).collect();
    Ok(FaceScan {
        points,
        texture: tex,
        nose_tip: Some([0.0, 0.0, 0.0]),
        subject_id: scan.subject_id.clone(),
        expression: scan.expression,
        intensity: scan.intensity,
    })
}

/// Registered raster maps of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `m×n×3` interpolated coordinates.
    pub geometry: Tensor,
    /// `m×n×3` interpolated RGB.
    pub texture: Tensor,
    /// `m×n`, 1 at valid pixels.
    pub mask: Tensor,
}

/// Pixel grid over the scan's (x, y) extent. Row 0 is the top (largest y).
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub pitch: f64,
    pub x0: f64,
    pub y_top: f64,
}

impl Grid {
    pub fn fit(points: &[Point3], rows: usize, cols: usize) -> Grid {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let mut pitch = ((xmax - xmin) / cols as f64).max((ymax - ymin) / rows as f64);
        if pitch <= 0.0 || !pitch.is_finite() {
            pitch = 1.0;
        }
        let cx = 0.5 * (xmin + xmax);
        let cy = 0.5 * (ymin + ymax);
        Grid {
            rows,
            cols,
            pitch,
            x0: cx - 0.5 * cols as f64 * pitch,
            y_top: cy + 0.5 * rows as f64 * pitch,
        }
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (j as f64 + 0.5) * self.pitch,
            self.y_top - (i as f64 + 0.5) * self.pitch,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let j = ((x - self.x0) / self.pitch).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let i = ((self.y_top - y) / self.pitch).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (i, j)
    }
}

/// Point indices bucketed by grid cell.
struct Buckets {
    grid: Grid,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn new(grid: Grid, points: &[Point3]) -> Self {
        let cells = grid.rows * grid.cols;
        let mut count = vec![0usize; cells + 1];
        let cell: Vec<usize> = points
            .iter()
            .map(|p| {
                let (i, j) = grid.cell_of(p[0], p[1]);
                i * grid.cols + j
            })
            .collect();
        for &c in &cell {
            count[c + 1] += 1;
        }
        for k in 0..cells {
            count[k + 1] += count[k];
        }
        let mut fill = count.clone();
        let mut items = vec![0; points.len()];
        for (idx, &c) in cell.iter().enumerate() {
            items[fill[c]] = idx;
            fill[c] += 1;
        }
        Buckets { grid, start: count, items }
    }

    fn cell(&self, i: usize, j: usize) -> &[usize] {
        let c = i * self.grid.cols + j;
        &self.items[self.start[c]..self.start[c + 1]]
    }

    /// Up to `k` nearest points to `(x, y)` in the plane, searching rings of
    /// cells around `(ci, cj)` up to `max_ring`. Returns `(dist², index)` sorted.
    fn nearest(&self, points: &[Point3], ci: usize, cj: usize, x: f64, y: f64, k: usize, max_ring: usize, max_d2: f64) -> Vec<(f64, usize)> {
        let mut found: Vec<(f64, usize)> = Vec::new();
        let g = &self.grid;
        for ring in 0..=max_ring {
            let (i0, i1) = (ci.saturating_sub(ring), (ci + ring).min(g.rows - 1));
            let (j0, j1) = (cj.saturating_sub(ring), (cj + ring).min(g.cols - 1));
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let on_ring = i.abs_diff(ci) == ring || j.abs_diff(cj) == ring;
                    if !on_ring {
                        continue;
                    }
                    for &idx in self.cell(i, j) {
                        let p = points[idx];
                        let d2 = (p[0] - x).powi(2) + (p[1] - y).powi(2);
                        if d2 <= max_d2 {
                            found.push((d2, idx));
                        }
                    }
                }
            }
            // every point beyond this ring is at least `ring * pitch` away from the cell
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let bound = (ring as f64 * g.pitch).powi(2);
                if found[k - 1].0 <= bound {
                    break;
                }
            }
            if ring >= g.rows.max(g.cols) {
                break;
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found
    }
}

/// Andrew's monotone chain; counter-clockwise hull without collinear points.
fn convex_hull(points: &[Point3]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn inside_hull(hull: &[(f64, f64)], x: f64, y: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|k| {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) >= 0.0
    })
}

/// Rasterizes a preprocessed scan onto an `m×n` grid.
///
/// A pixel is valid when a point falls inside its cell, or when its centre
/// lies inside the convex hull of the projected points (hole filling). Values
/// are inverse-distance-weighted blends of the nearest points within the
/// interpolation radius; filled holes widen the search until neighbours are found.
pub fn project(scan: &FaceScan, m: usize, n: usize) -> Result<Projection, ScanError> {
    if m < 16 || n < 16 {
        return Err(ScanError::MapTooSmall(m, n));
    }
    if scan.points.is_empty() {
        return Err(ScanError::EmptyProjection);
    }
    let grid = Grid::fit(&scan.points, m, n);
    let buckets = Buckets::new(grid, &scan.points);
    let hull = convex_hull(&scan.points);
    let radius = IDW_RADIUS_PITCHES * grid.pitch;
    let ring = IDW_RADIUS_PITCHES.ceil() as usize;

    let mut geometry = Tensor::zeros(&[m, n, 3]);
    let mut texture = Tensor::zeros(&[m, n, 3]);
    let mut mask = Tensor::zeros(&[m, n]);
    let mut any = false;
    for i in 0..m {
        for j in 0..n {
            let (x, y) = grid.center(i, j);
            let occupied = !buckets.cell(i, j).is_empty();
            if !occupied && !inside_hull(&hull, x, y) {
                continue;
            }
            let mut near = buckets.nearest(&scan.points, i, j, x, y, IDW_NEIGHBOURS, ring, radius * radius);
            if near.is_empty() {
                near = buckets.nearest(&scan.points, i, j, x, y, IDW_NEIGHBOURS, usize::MAX, f64::INFINITY);
            }
            if near.is_empty() {
                continue;
            }
            let mut g = [0.0; 3];
            let mut t = [0.0; 3];
            if near[0].0 < 1e-24 {
                let idx = near[0].1;
                g = scan.points[idx];
                t = scan.texture[idx];
            } else {
                let mut wsum = 0.0;
                for &(d2, idx) in &near {
                    let w = 1.0 / d2;
                    wsum += w;
                    for k in 0..3 {
                        g[k] += w * scan.points[idx][k];
                        t[k] += w * scan.texture[idx][k];
                    }
                }
                for k in 0..3 {
                    g[k] /= wsum;
                    t[k] /= wsum;
                }
            }
            for k in 0..3 {
                geometry.set(&[i, j, k], g[k]);
                texture.set(&[i, j, k], t[k]);
            }
            mask.set(&[i, j], 1.0);
            any = true;
        }
    }
    if !any {
        return Err(ScanError::EmptyProjection);
    }
    Ok(Projection { geometry, texture, mask })
}
