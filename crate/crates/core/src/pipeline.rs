//! Stage functions shared by the individual commands and the full pipeline,
//! plus the pipeline config format.
//!
//! Directory layout produced by `run_pipeline` under `out`:
//!
//! ```text
//! maps/      {id}.geom|tex|mask.ftnsr, {id}.nx|ny|nz|si|valid.ftnsr, {id}.{map}.png
//! features/  {id}.{map}.feat.ftnsr
//! models/    {map}.{CODE}.svm.ftnsr, {map}.svm.txt
//! saliency/  {id}.{CODE}.sal.ftnsr, {id}.{CODE}.sal.png
//! report.csv summary.csv confusion.csv run.txt
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::attrmaps::{normalize_map, AttributeMapSet, FitParams, MapKind, NormalMaps, DEFAULT_WINDOW};
use crate::cnn::{NetError, NetModel};
use crate::eval::{eligible, evaluate, make_folds, EvalError, EvalReport, FeatureTable, PlanParams, Protocol, SubjectPool};
use crate::expression::{argmax, Expression};
use crate::ftnsr::{read_tensor, write_tensor};
use crate::imageio::{write_gray_png, write_rgb_png};
use crate::saliency::{self, SaliencyError, DEFAULT_BACKGROUND};
use crate::scan::{self, DatasetManifest, Projection, ScanError, DEFAULT_CROP_RADIUS_MM, DEFAULT_MAP_SIZE};
use crate::svm::{self, LinearModel, SvmError, SvmParams};
use crate::tensor::Tensor;

/// Failure class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub class: ErrorClass,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn new(stage: &'static str, class: ErrorClass, message: impl fmt::Display) -> Self {
        StageError { stage, class, message: message.to_string() }
    }

    pub fn config(stage: &'static str, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorClass::Config, message)
    }

    pub fn data(stage: &'static str, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorClass::Data, message)
    }
}

fn net_err(stage: &'static str, e: NetError) -> StageError {
    let class = match e {
        NetError::ZeroFeature => ErrorClass::Numerical,
        NetError::InputShape { .. } | NetError::WeightLength { .. } => ErrorClass::Data,
        _ => ErrorClass::Config,
    };
    StageError::new(stage, class, e)
}

fn svm_err(stage: &'static str, e: SvmError) -> StageError {
    StageError::data(stage, e)
}

fn eval_err(stage: &'static str, e: EvalError) -> StageError {
    let class = match e {
        EvalError::UnknownProtocol(_) | EvalError::UnknownPool(_) => ErrorClass::Config,
        _ => ErrorClass::Data,
    };
    StageError::new(stage, class, e)
}

fn sal_err(stage: &'static str, e: SaliencyError) -> StageError {
    match e {
        SaliencyError::Net(n) => net_err(stage, n),
        other => StageError::data(stage, other),
    }
}

fn io_err(stage: &'static str, path: &Path, e: impl fmt::Display) -> StageError {
    StageError::data(stage, format!("{}: {e}", path.display()))
}

fn create_dir(stage: &'static str, dir: &Path) -> Result<(), StageError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))
}

fn write(stage: &'static str, path: PathBuf, t: &Tensor) -> Result<(), StageError> {
    write_tensor(&path, t).map_err(|e| io_err(stage, &path, e))
}

fn read(stage: &'static str, path: PathBuf) -> Result<Tensor, StageError> {
    read_tensor(&path).map_err(|e| io_err(stage, &path, e))
}

/// Scan ids having a `{id}.{suffix}` file in `dir`, sorted.
pub fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>, std::io::Error> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(suffix)).map(String::from))
        .collect();
    ids.sort();
    Ok(ids)
}

// ---------------------------------------------------------------- ingest

pub fn ingest_scan(row: &scan::ManifestRow, out: &Path, size: usize, crop: f64) -> Result<(), StageError> {
    const STAGE: &str = "ingest";
    let ctx = |e: ScanError| StageError::data(STAGE, format!("{}: {e}", row.scan_id));
    let raw = scan::load_scan(&row.path).map_err(ctx)?;
    raw.validate().map_err(ctx)?;
    let pre = scan::preprocess(&raw, crop).map_err(ctx)?;
    let proj = scan::project(&pre, size, size).map_err(ctx)?;
    write(STAGE, out.join(format!("{}.geom.ftnsr", row.scan_id)), &proj.geometry)?;
    write(STAGE, out.join(format!("{}.tex.ftnsr", row.scan_id)), &proj.texture)?;
    write(STAGE, out.join(format!("{}.mask.ftnsr", row.scan_id)), &proj.mask)
}

pub fn ingest(manifest: &DatasetManifest, out: &Path, size: usize, crop: f64) -> Result<(), StageError> {
    create_dir("ingest", out)?;
    manifest.rows.par_iter().map(|r| ingest_scan(r, out, size, crop)).collect::<Result<Vec<()>, _>>()?;
    Ok(())
}

// ---------------------------------------------------------------- attribute maps

fn preview(map: &Tensor, mask: &Tensor) -> Tensor {
    normalize_map(map, mask)
}

pub fn attrmaps_scan(id: &str, input: &Path, out: &Path, params: FitParams) -> Result<(), StageError> {
    const STAGE: &str = "attrmaps";
    let geometry = read(STAGE, input.join(format!("{id}.geom.ftnsr")))?;
    let texture = read(STAGE, input.join(format!("{id}.tex.ftnsr")))?;
    let mask = read(STAGE, input.join(format!("{id}.mask.ftnsr")))?;
    let d = geometry.dims().to_vec();
    if d.len() != 3 || d[2] != 3 || mask.dims() != &d[..2] || texture.dims() != d.as_slice() {
        return Err(StageError::data(STAGE, format!("{id}: inconsistent map shapes")));
    }
    let proj = Projection { geometry, texture, mask };
    let maps = AttributeMapSet::compute(&proj, params);
    if input != out {
        write(STAGE, out.join(format!("{id}.geom.ftnsr")), &proj.geometry)?;
        write(STAGE, out.join(format!("{id}.tex.ftnsr")), &proj.texture)?;
        write(STAGE, out.join(format!("{id}.mask.ftnsr")), &proj.mask)?;
    }
    for (kind, t) in [
        (MapKind::NormalX, &maps.nx),
        (MapKind::NormalY, &maps.ny),
        (MapKind::NormalZ, &maps.nz),
        (MapKind::Curvature, &maps.shape_index),
    ] {
        write(STAGE, out.join(format!("{id}.{}.ftnsr", kind.token())), t)?;
    }
    write(STAGE, out.join(format!("{id}.valid.ftnsr")), &maps.mask)?;
    for kind in MapKind::ALL {
        let img = match kind {
            MapKind::Texture => maps.texture.clone(),
            _ => preview(&maps.network_input(kind), &maps.mask),
        };
        let path = out.join(format!("{id}.{}.png", kind.token()));
        let res = if kind == MapKind::Texture { write_rgb_png(&path, &img) } else { write_gray_png(&path, &img) };
        res.map_err(|e| io_err(STAGE, &path, e))?;
    }
    Ok(())
}

pub fn attrmaps(input: &Path, out: &Path, params: FitParams) -> Result<Vec<String>, StageError> {
    create_dir("attrmaps", out)?;
    let ids = ids_with_suffix(input, ".geom.ftnsr").map_err(|e| io_err("attrmaps", input, e))?;
    ids.par_iter().map(|id| attrmaps_scan(id, input, out, params)).collect::<Result<Vec<()>, _>>()?;
    Ok(ids)
}

/// Reads the attribute maps of one scan written by [`attrmaps`].
pub fn load_map_set(dir: &Path, id: &str) -> Result<AttributeMapSet, StageError> {
    const STAGE: &str = "load-maps";
    let get = |s: &str| read(STAGE, dir.join(format!("{id}.{s}.ftnsr")));
    let mask = get("valid")?;
    let normals = NormalMaps { nx: get("nx")?, ny: get("ny")?, nz: get("nz")?, mask: mask.clone() };
    Ok(AttributeMapSet::assemble(get("geom")?, get("tex")?, get("si")?, normals, mask))
}

// ---------------------------------------------------------------- features

pub fn extract_scan(net: &NetModel, maps_dir: &Path, id: &str, kinds: &[MapKind], out: &Path) -> Result<(), StageError> {
    const STAGE: &str = "extract";
    let maps = load_map_set(maps_dir, id)?;
    let dims = net.tap_shape().dims();
    for &k in kinds {
        let f = net
            .extract_feature(&maps.network_input(k))
            .map_err(|e| StageError::new(STAGE, net_err(STAGE, e).class, format!("{id} {k}: tap activation is zero")))?;
        let t = Tensor::new(dims.clone(), f).expect("tap dims");
        write(STAGE, out.join(FeatureTable::file_name(id, k)), &t)?;
    }
    Ok(())
}

pub fn extract(net: &NetModel, maps_dir: &Path, kinds: &[MapKind], out: &Path) -> Result<Vec<String>, StageError> {
    create_dir("extract", out)?;
    let ids = ids_with_suffix(maps_dir, ".valid.ftnsr").map_err(|e| io_err("extract", maps_dir, e))?;
    if ids.is_empty() {
        return Err(StageError::data("extract", format!("no attribute maps in {}", maps_dir.display())));
    }
    ids.par_iter().map(|id| extract_scan(net, maps_dir, id, kinds, out)).collect::<Result<Vec<()>, _>>()?;
    Ok(ids)
}

// ---------------------------------------------------------------- train / eval

/// One-vs-rest models per map on every eligible manifest scan.
pub fn train(
    features: &FeatureTable,
    manifest: &DatasetManifest,
    kinds: &[MapKind],
    params: &SvmParams,
    out: &Path,
) -> Result<(), StageError> {
    const STAGE: &str = "train";
    create_dir(STAGE, out)?;
    let rows: Vec<_> = manifest.rows.iter().filter(|r| eligible(r)).collect();
    let labels: Vec<Expression> = rows.iter().map(|r| r.expression).collect();
    for &k in kinds {
        let x = rows
            .iter()
            .map(|r| features.get(&r.scan_id, k))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| eval_err(STAGE, e))?;
        let models = svm::train_one_vs_rest(&x, &labels, params, Some(k)).map_err(|e| svm_err(STAGE, e))?;
        svm::save_models(out, k, &models).map_err(|e| svm_err(STAGE, e))?;
    }
    Ok(())
}

pub fn eval(
    features: &FeatureTable,
    manifest: &DatasetManifest,
    plan: &PlanParams,
    kinds: &[MapKind],
    params: &SvmParams,
    report: &Path,
) -> Result<EvalReport, StageError> {
    const STAGE: &str = "eval";
    let plan = make_folds(manifest, plan).map_err(|e| eval_err(STAGE, e))?;
    let r = evaluate(features, manifest, &plan, kinds, params).map_err(|e| eval_err(STAGE, e))?;
    if let Some(dir) = report.parent() {
        create_dir(STAGE, dir)?;
    }
    r.write(report).map_err(|e| eval_err(STAGE, e))?;
    Ok(r)
}

// ---------------------------------------------------------------- saliency

/// Models per map, indexed by expression.
pub fn load_model_sets(dir: &Path, kinds: &[MapKind]) -> Result<Vec<(MapKind, Vec<LinearModel>)>, StageError> {
    kinds
        .iter()
        .map(|&k| Ok((k, svm::load_models(dir, k).map_err(|e| StageError::config("saliency", e))?)))
        .collect()
}

/// Class with the largest fused score.
pub fn predict(maps: &AttributeMapSet, models: &[(MapKind, Vec<LinearModel>)], net: &NetModel) -> Result<Expression, StageError> {
    let scores = Expression::ALL
        .iter()
        .map(|e| {
            let pairs: Vec<(MapKind, &LinearModel)> = models.iter().map(|(k, ms)| (*k, &ms[e.index()])).collect();
            saliency::expression_score(maps, &pairs, net).map_err(|e| sal_err("saliency", e))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Expression::from_index(argmax(&scores)).unwrap())
}

/// `{id}.{CODE}.sal.png`; the raw map goes beside it as `.sal.ftnsr`.
pub fn saliency_png_name(id: &str, e: Expression) -> String {
    format!("{id}.{}.sal.png", e.code())
}

/// Writes the rendered saliency to `png` and the raw map to `png` with an
/// `ftnsr` extension for one scan; `expression = None` uses the predicted class. Returns the class and map.
pub fn saliency_scan(
    net: &NetModel,
    maps_dir: &Path,
    models: &[(MapKind, Vec<LinearModel>)],
    id: &str,
    expression: Option<Expression>,
    png: &Path,
    background: [f64; 3],
) -> Result<(Expression, Tensor), StageError> {
    const STAGE: &str = "saliency";
    let maps = load_map_set(maps_dir, id)?;
    let e = match expression {
        Some(e) => e,
        None => predict(&maps, models, net)?,
    };
    let pairs: Vec<(MapKind, &LinearModel)> = models.iter().map(|(k, ms)| (*k, &ms[e.index()])).collect();
    let s = saliency::saliency(&maps, &pairs, net, e, id).map_err(|e| sal_err(STAGE, e))?;
    if let Some(dir) = png.parent() {
        create_dir(STAGE, dir)?;
    }
    write(STAGE, png.with_extension("ftnsr"), &s.values)?;
    write_rgb_png(png, &saliency::render(&s.values, &maps.texture, background)).map_err(|err| io_err(STAGE, png, err))?;
    Ok((e, s.values))
}

/// Mosaic and binary-code PNGs of a tap-shaped feature tensor.
pub fn featviz(feature: &Path, out: &Path) -> Result<(), StageError> {
    const STAGE: &str = "featviz";
    let t = read(STAGE, feature.to_path_buf())?;
    if t.ndim() != 3 {
        return Err(StageError::data(STAGE, format!("BadTensorShape: expected h×w×c, got {:?}", t.dims())));
    }
    let (img, bin) = saliency::feature_mosaic(&t);
    write_gray_png(out, &img).map_err(|e| io_err(STAGE, out, e))?;
    let bin_path = out.with_extension("bin.png");
    write_gray_png(&bin_path, &bin).map_err(|e| io_err(STAGE, &bin_path, e))
}

// ---------------------------------------------------------------- config

/// Flat `key = value` pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub net: PathBuf,
    pub out: PathBuf,
    pub size: usize,
    pub crop: f64,
    pub window: usize,
    pub tap: Option<String>,
    pub c: f64,
    pub protocol: Protocol,
    pub pool: SubjectPool,
    pub rounds: usize,
    pub subjects: usize,
    pub folds: usize,
    pub seed: u64,
    pub maps: Vec<MapKind>,
    /// Scans per expression to compute saliency for (first eligible in manifest order).
    pub saliency_per_class: usize,
    pub background: [f64; 3],
}

pub const CONFIG_KEYS: [&str; 17] = [
    "manifest",
    "net",
    "out",
    "size",
    "crop",
    "window",
    "tap",
    "C",
    "protocol",
    "pool",
    "rounds",
    "subjects",
    "folds",
    "seed",
    "maps",
    "saliency_per_class",
    "background",
];

fn parse_maps(s: &str) -> Result<Vec<MapKind>, String> {
    let mut v: Vec<MapKind> = s.split(',').map(|t| t.trim().parse()).collect::<Result<_, _>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err("empty map list".into());
    }
    Ok(v)
}

impl PipelineConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, StageError> {
        const STAGE: &str = "config";
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| StageError::config(STAGE, format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(StageError::config(STAGE, format!("line {}: unknown key `{k}`", i + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(StageError::config(STAGE, format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let bad = |k: &str, e: &dyn fmt::Display| StageError::config(STAGE, format!("`{k}`: {e}"));
        let path = |k: &str| -> Result<PathBuf, StageError> {
            let v = kv.get(k).ok_or_else(|| StageError::config(STAGE, format!("missing `{k}`")))?;
            let p = PathBuf::from(v);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };
        fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str, d: T) -> Result<T, StageError>
        where
            T::Err: fmt::Display,
        {
            match kv.get(k) {
                None => Ok(d),
                Some(v) => v.parse().map_err(|e: T::Err| StageError::config("config", format!("`{k}`: {e}"))),
            }
        }
        let background = match kv.get("background") {
            None => DEFAULT_BACKGROUND,
            Some(v) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad("background", &e))?;
                <[f64; 3]>::try_from(parts).map_err(|_| bad("background", &"expected r,g,b"))?
            }
        };
        let cfg = PipelineConfig {
            manifest: path("manifest")?,
            net: path("net")?,
            out: path("out")?,
            size: num(&kv, "size", DEFAULT_MAP_SIZE)?,
            crop: num(&kv, "crop", DEFAULT_CROP_RADIUS_MM)?,
            window: num(&kv, "window", DEFAULT_WINDOW)?,
            tap: kv.get("tap").cloned(),
            c: num(&kv, "C", 1.0)?,
            protocol: kv.get("protocol").map_or(Ok(Protocol::II), |v| v.parse()).map_err(|e| bad("protocol", &e))?,
            pool: kv.get("pool").map_or(Ok(SubjectPool::All), |v| v.parse()).map_err(|e| bad("pool", &e))?,
            rounds: num(&kv, "rounds", 1)?,
            subjects: num(&kv, "subjects", crate::eval::DEFAULT_SUBJECTS)?,
            folds: num(&kv, "folds", crate::eval::DEFAULT_FOLDS)?,
            seed: num(&kv, "seed", 0)?,
            maps: kv.get("maps").map_or(Ok(MapKind::ALL.to_vec()), |v| parse_maps(v)).map_err(|e| bad("maps", &e))?,
            saliency_per_class: num(&kv, "saliency_per_class", 1)?,
            background,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), StageError> {
        let text = std::fs::read_to_string(path).map_err(|e| StageError::config("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, base)?, text))
    }

    pub fn validate(&self) -> Result<(), StageError> {
        const STAGE: &str = "config";
        if !self.manifest.is_file() {
            return Err(StageError::config(STAGE, format!("manifest {} does not exist", self.manifest.display())));
        }
        if !self.net.is_dir() {
            return Err(StageError::config(STAGE, format!("net directory {} does not exist", self.net.display())));
        }
        if self.rounds < 1 {
            return Err(StageError::config(STAGE, "rounds must be at least 1"));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(StageError::config(STAGE, "window must be odd and at least 3"));
        }
        if !(self.c > 0.0) || !(self.crop > 0.0) {
            return Err(StageError::config(STAGE, "C and crop must be positive"));
        }
        Ok(())
    }

    pub fn svm_params(&self) -> SvmParams {
        SvmParams { c: self.c, seed: self.seed, ..SvmParams::default() }
    }

    pub fn plan_params(&self) -> PlanParams {
        PlanParams {
            protocol: self.protocol,
            rounds: self.rounds,
            seed: self.seed,
            subjects: self.subjects,
            folds: self.folds,
            pool: self.pool,
        }
    }
}

/// Runs every stage in order. `config_text` is hashed into `run.txt`.
pub fn run_pipeline(cfg: &PipelineConfig, config_text: &str, log: &dyn Fn(&str)) -> Result<EvalReport, StageError> {
    let manifest = DatasetManifest::load(&cfg.manifest).map_err(|e| StageError::data("ingest", e))?;
    let net = NetModel::load_dir_with_tap(&cfg.net, cfg.tap.as_deref()).map_err(|e| net_err("load-net", e))?;
    let maps_dir = cfg.out.join("maps");
    let feat_dir = cfg.out.join("features");
    let model_dir = cfg.out.join("models");
    let sal_dir = cfg.out.join("saliency");

    log(&format!("ingest: {} scans", manifest.rows.len()));
    ingest(&manifest, &maps_dir, cfg.size, cfg.crop)?;
    log("attrmaps");
    attrmaps(&maps_dir, &maps_dir, FitParams { window: cfg.window })?;
    log(&format!("extract: tap {} ({} dims)", net.tap_name(), net.feature_dim()));
    extract(&net, &maps_dir, &cfg.maps, &feat_dir)?;
    let features = FeatureTable::load_dir(&feat_dir, &manifest, &cfg.maps).map_err(|e| eval_err("extract", e))?;
    log("train");
    train(&features, &manifest, &cfg.maps, &cfg.svm_params(), &model_dir)?;
    log("eval");
    let report = eval(&features, &manifest, &cfg.plan_params(), &cfg.maps, &cfg.svm_params(), &cfg.out.join("report.csv"))?;
    if cfg.saliency_per_class > 0 {
        log("saliency");
        let models = load_model_sets(&model_dir, &cfg.maps)?;
        let mut picked = Vec::new();
        for e in Expression::ALL {
            picked.extend(
                manifest.rows.iter().filter(|r| eligible(r) && r.expression == e).take(cfg.saliency_per_class).map(|r| r.scan_id.clone()),
            );
        }
        picked
            .par_iter()
            .map(|id| {
                let e = predict(&load_map_set(&maps_dir, id)?, &models, &net)?;
                let png = sal_dir.join(saliency_png_name(id, e));
                saliency_scan(&net, &maps_dir, &models, id, Some(e), &png, cfg.background).map(|_| ())
            })
            .collect::<Result<Vec<()>, _>>()?;
    }
    write_run_metadata(cfg, config_text, &net)?;
    Ok(report)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_run_metadata(cfg: &PipelineConfig, config_text: &str, net: &NetModel) -> Result<(), StageError> {
    let mut net_hash = Sha256::new();
    net_hash.update(net.arch().to_text().as_bytes());
    let mut files = ids_with_suffix(&cfg.net, ".ftnsr").map_err(|e| io_err("metadata", &cfg.net, e))?;
    files.sort();
    for f in &files {
        let p = cfg.net.join(format!("{f}.ftnsr"));
        net_hash.update(f.as_bytes());
        net_hash.update(std::fs::read(&p).map_err(|e| io_err("metadata", &p, e))?);
    }
    let text = format!(
        "seed={}\nconfig_sha256={}\nnet_sha256={}\nfacemap_version={}\nprotocol={:?}\nrounds={}\nmaps={}\n",
        cfg.seed,
        hex(&Sha256::digest(config_text.as_bytes())),
        hex(&net_hash.finalize()),
        env!("CARGO_PKG_VERSION"),
        cfg.protocol,
        cfg.rounds,
        cfg.maps.iter().map(|m| m.token()).collect::<Vec<_>>().join(","),
    );
    let p = cfg.out.join("run.txt");
    std::fs::write(&p, text).map_err(|e| io_err("metadata", &p, e))
}
