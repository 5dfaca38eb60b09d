use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facemap_core::attrmaps::{FitParams, MapKind, DEFAULT_WINDOW};
use facemap_core::cnn::arch::ArchSpec;
use facemap_core::cnn::{configs, NetModel};
use facemap_core::eval::{FeatureTable, PlanParams, Protocol, SubjectPool, DEFAULT_FOLDS, DEFAULT_SUBJECTS};
use facemap_core::pipeline::{self, ErrorClass, PipelineConfig, StageError};
use facemap_core::saliency::DEFAULT_BACKGROUND;
use facemap_core::scan::{DatasetManifest, DEFAULT_CROP_RADIUS_MM, DEFAULT_MAP_SIZE};
use facemap_core::svm::SvmParams;
use facemap_core::{synth, Expression};

#[derive(Parser)]
#[command(name = "facemap", version, about = "3D facial expression recognition from attribute maps and deep features")]
struct Cli {
    /// Seed for every random choice (overrides the config seed for `pipeline`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MapSelection {
    /// Comma-separated subset of geom,nx,ny,nz,si,tex.
    #[arg(long = "map-kinds", value_delimiter = ',', default_values_t = MapKind::ALL.map(|m| m.token().to_string()))]
    map_kinds: Vec<String>,
}

impl MapSelection {
    fn kinds(&self) -> Result<Vec<MapKind>, StageError> {
        let mut v = self
            .map_kinds
            .iter()
            .map(|s| s.parse::<MapKind>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| StageError::config("args", e))?;
        v.sort();
        v.dedup();
        Ok(v)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark (scans and manifest).
    Synth {
        #[arg(long, default_value_t = 12)]
        subjects: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess scans and project them onto regular grids.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAP_SIZE)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_CROP_RADIUS_MM)]
        crop: f64,
    },
    /// Compute normal and shape-index maps from projected grids.
    Attrmaps {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Extract deep features of every attribute map.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Layer whose activation is the feature (defaults to the model's tap).
        #[arg(long)]
        tap: Option<String>,
        #[command(flatten)]
        select: MapSelection,
    },
    /// Train one-vs-rest SVMs per map on all eligible scans.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
        #[command(flatten)]
        select: MapSelection,
    },
    /// Cross-validated evaluation of every map and the fusions.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "II")]
        protocol: String,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long = "subject-pool", default_value = "all")]
        subject_pool: String,
        #[arg(long, default_value_t = DEFAULT_SUBJECTS)]
        subjects: usize,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
        /// Report CSV; summary.csv and confusion.csv are written beside it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        select: MapSelection,
    },
    /// Gradient saliency of one expression score over a scan.
    Saliency {
        #[arg(long)]
        scan: String,
        /// Expression code; the predicted class when omitted.
        #[arg(long)]
        expression: Option<Expression>,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// Rendered PNG; the raw map is written beside it as .ftnsr.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        select: MapSelection,
    },
    /// Mosaic and binary-code PNGs of a feature tensor.
    Featviz {
        #[arg(long)]
        feature: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a model directory with seeded random weights.
    InitModel {
        /// Built-in architecture name (vgg-s-like, alexnet-like) or a path to an .arch file.
        #[arg(long, default_value = "vgg-s-like")]
        arch: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Import weights from another framework's format.
    ConvertWeights {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, StageError> {
    DatasetManifest::load(path).map_err(|e| StageError::data("manifest", e))
}

fn load_features(dir: &Path, manifest: &DatasetManifest, kinds: &[MapKind]) -> Result<FeatureTable, StageError> {
    FeatureTable::load_dir(dir, manifest, kinds).map_err(|e| StageError::data("features", e))
}

fn load_net(dir: &Path, tap: Option<&str>) -> Result<NetModel, StageError> {
    NetModel::load_dir_with_tap(dir, tap).map_err(|e| StageError::config("load-net", e))
}

fn run(cli: Cli) -> Result<(), StageError> {
    let verbose = cli.verbose;
    let log = |msg: &str| {
        if verbose {
            eprintln!("{msg}");
        }
    };
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| StageError::config("args", e))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { subjects, out } => {
            if subjects < synth::MIN_BENCHMARK_SUBJECTS {
                return Err(StageError::config("synth", format!("at least {} subjects required", synth::MIN_BENCHMARK_SUBJECTS)));
            }
            let bench = synth::generate_benchmark(subjects, seed);
            let path = synth::write_benchmark(&bench, &out).map_err(|e| StageError::data("synth", e))?;
            log(&format!("wrote {} scans, manifest {}", bench.manifest.rows.len(), path.display()));
        }
        Command::Ingest { manifest, out, size, crop } => {
            pipeline::ingest(&load_manifest(&manifest)?, &out, size, crop)?;
        }
        Command::Attrmaps { input, out, window } => {
            let ids = pipeline::attrmaps(&input, &out, FitParams { window })?;
            log(&format!("{} scans", ids.len()));
        }
        Command::Extract { model, maps, out, tap, select } => {
            let net = load_net(&model, tap.as_deref())?;
            log(&format!("tap {} {}", net.tap_name(), net.tap_shape()));
            pipeline::extract(&net, &maps, &select.kinds()?, &out)?;
        }
        Command::Train { features, manifest, out, c, select } => {
            let manifest = load_manifest(&manifest)?;
            let kinds = select.kinds()?;
            let table = load_features(&features, &manifest, &kinds)?;
            let params = SvmParams { c, seed, ..SvmParams::default() };
            pipeline::train(&table, &manifest, &kinds, &params, &out)?;
        }
        Command::Eval { features, manifest, protocol, rounds, subject_pool, subjects, folds, c, out, select } => {
            let manifest = load_manifest(&manifest)?;
            let kinds = select.kinds()?;
            let plan = PlanParams {
                protocol: protocol.parse::<Protocol>().map_err(|e| StageError::config("args", e))?,
                rounds,
                seed,
                subjects,
                folds,
                pool: subject_pool.parse::<SubjectPool>().map_err(|e| StageError::config("args", e))?,
            };
            if rounds < 1 {
                return Err(StageError::config("args", "rounds must be at least 1"));
            }
            let table = load_features(&features, &manifest, &kinds)?;
            let params = SvmParams { c, seed, ..SvmParams::default() };
            let report = pipeline::eval(&table, &manifest, &plan, &kinds, &params, &out)?;
            for (label, acc) in report.labels.iter().zip(&report.mean) {
                println!("{label}\t{acc:.2}");
            }
        }
        Command::Saliency { scan, expression, models, net, maps, out, select } => {
            let net = load_net(&net, None)?;
            let sets = pipeline::load_model_sets(&models, &select.kinds()?)?;
            let (e, _) = pipeline::saliency_scan(&net, &maps, &sets, &scan, expression, &out, DEFAULT_BACKGROUND)?;
            log(&format!("{scan}: saliency for {e}"));
        }
        Command::Featviz { feature, out } => pipeline::featviz(&feature, &out)?,
        Command::Pipeline { config } => {
            let (mut cfg, text) = PipelineConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let report = pipeline::run_pipeline(&cfg, &text, &log)?;
            for (label, acc) in report.labels.iter().zip(&report.mean) {
                println!("{label}\t{acc:.2}");
            }
        }
        Command::InitModel { arch, out } => {
            let spec = match configs::builtin(&arch) {
                Some(text) => ArchSpec::parse(text),
                None => ArchSpec::load(&arch),
            }
            .map_err(|e| StageError::config("init-model", e))?;
            let net = NetModel::random(spec, seed).map_err(|e| StageError::config("init-model", e))?;
            net.save(&out).map_err(|e| StageError::data("init-model", e))?;
            log(&format!("tap {} {} ({} dims)", net.tap_name(), net.tap_shape(), net.feature_dim()));
        }
        Command::ConvertWeights { input, .. } => {
            return Err(StageError::new(
                "convert-weights",
                ErrorClass::Config,
                format!("{}: unsupported weight format (only model directories written by init-model are readable)", input.display()),
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
