//! Subject-disjoint cross-validation, sum-rule score fusion and reporting.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::attrmaps::MapKind;
use crate::expression::{Expression, NUM_CLASSES};
use crate::ftnsr::{read_tensor, write_tensor, FtnsrError};
use crate::scan::{DatasetManifest, ManifestRow};
use crate::svm::{score, train_one_vs_rest_gram, Gram, ScoreMatrix, SvmError, SvmParams};
use crate::tensor::Tensor;

pub const DEFAULT_SUBJECTS: usize = 60;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{available} eligible subjects, plan needs {needed}")]
    InsufficientSubjects { available: usize, needed: usize },
    #[error("no feature for scan `{scan}` map {map}")]
    MissingFeature { scan: String, map: MapKind },
    #[error("score matrices differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("round {round} fold {fold}: subject `{subject}` is in both train and test")]
    Leakage { round: usize, fold: usize, subject: String },
    #[error("unknown protocol `{0}` (expected I or II)")]
    UnknownProtocol(String),
    #[error("unknown subject pool `{0}` (expected all or fixed)")]
    UnknownPool(String),
    #[error("round {round} fold {fold}: {source}")]
    Svm { round: usize, fold: usize, source: SvmError },
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Tensor(#[from] FtnsrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Fresh subject subset every round.
    I,
    /// One subject subset for all rounds.
    II,
}

impl FromStr for Protocol {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "I" | "1" => Ok(Protocol::I),
            "II" | "2" => Ok(Protocol::II),
            _ => Err(EvalError::UnknownProtocol(s.to_string())),
        }
    }
}

/// Where Protocol I draws each round's subjects from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectPool {
    /// All eligible subjects in the manifest.
    All,
    /// A subset drawn once, reshuffled into new folds each round.
    Fixed,
}

impl FromStr for SubjectPool {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "all" => Ok(SubjectPool::All),
            "fixed" => Ok(SubjectPool::Fixed),
            _ => Err(EvalError::UnknownPool(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanParams {
    pub protocol: Protocol,
    pub rounds: usize,
    pub seed: u64,
    pub subjects: usize,
    pub folds: usize,
    pub pool: SubjectPool,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            protocol: Protocol::I,
            rounds: 1,
            seed: 0,
            subjects: DEFAULT_SUBJECTS,
            folds: DEFAULT_FOLDS,
            pool: SubjectPool::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub subjects: Vec<String>,
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub rounds: Vec<Round>,
    pub seed: u64,
}

/// Scans used for evaluation: the two strongest intensity levels.
pub fn eligible(row: &ManifestRow) -> bool {
    row.intensity == 3 || row.intensity == 4
}

fn eligible_subjects(manifest: &DatasetManifest) -> Vec<String> {
    let set: BTreeSet<&str> = manifest.rows.iter().filter(|r| eligible(r)).map(|r| r.subject_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn partition(subjects: &[String], folds: usize, rng: &mut ChaCha8Rng) -> Vec<Fold> {
    let mut order = subjects.to_vec();
    order.shuffle(rng);
    let n = order.len();
    (0..folds)
        .map(|k| {
            let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
            let mut test = order[lo..hi].to_vec();
            let mut train: Vec<String> = order[..lo].iter().chain(&order[hi..]).cloned().collect();
            test.sort();
            train.sort();
            Fold { train, test }
        })
        .collect()
}

pub fn make_folds(manifest: &DatasetManifest, params: &PlanParams) -> Result<FoldPlan, EvalError> {
    let pool = eligible_subjects(manifest);
    let needed = params.subjects.max(params.folds);
    if pool.len() < needed || params.folds < 2 {
        return Err(EvalError::InsufficientSubjects { available: pool.len(), needed: needed.max(2) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut s = pool.clone();
        s.shuffle(rng);
        s.truncate(params.subjects);
        s.sort();
        s
    };
    let fresh_each_round = params.protocol == Protocol::I && params.pool == SubjectPool::All;
    let fixed = draw(&mut rng);
    let rounds = (0..params.rounds)
        .map(|r| {
            let subjects = if fresh_each_round && r > 0 { draw(&mut rng) } else { fixed.clone() };
            let folds = partition(&subjects, params.folds, &mut rng);
            Round { subjects, folds }
        })
        .collect();
    Ok(FoldPlan { rounds, seed: params.seed })
}

/// Elementwise sum of equally shaped score matrices.
pub fn fuse_scores(scores: &[&ScoreMatrix]) -> Result<ScoreMatrix, EvalError> {
    let first = scores.first().ok_or_else(|| EvalError::ShapeMismatch("no matrices".into()))?;
    let mut out = (*first).clone();
    for s in &scores[1..] {
        if (s.rows(), s.cols()) != (out.rows(), out.cols()) {
            return Err(EvalError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                s.rows(),
                s.cols(),
                out.rows(),
                out.cols()
            )));
        }
        out = ScoreMatrix::new(out.rows(), out.cols(), out.data().iter().zip(s.data()).map(|(a, b)| a + b).collect());
    }
    Ok(out)
}

/// Report rows: each single map, then the nested fusion sets whose maps are all available.
pub fn report_sets(maps: &[MapKind]) -> Vec<(String, Vec<MapKind>)> {
    use MapKind::*;
    let mut sets: Vec<(String, Vec<MapKind>)> = MapKind::ALL
        .into_iter()
        .filter(|m| maps.contains(m))
        .map(|m| (m.label().to_string(), vec![m]))
        .collect();
    let nested: [(&str, &[MapKind]); 4] = [
        ("I_n", &[NormalX, NormalY, NormalZ]),
        ("I_g+I_n", &[Geometry, NormalX, NormalY, NormalZ]),
        ("I_g+I_n+I_c", &[Geometry, NormalX, NormalY, NormalZ, Curvature]),
        ("I_g+I_n+I_c+I_t", &[Geometry, NormalX, NormalY, NormalZ, Curvature, Texture]),
    ];
    for (label, set) in nested {
        if set.iter().all(|m| maps.contains(m)) {
            sets.push((label.to_string(), set.to_vec()));
        }
    }
    sets
}

/// Deep features keyed by scan and map.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    values: HashMap<(String, MapKind), Vec<f64>>,
}

impl FeatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scan: &str, map: MapKind, f: Vec<f64>) {
        self.values.insert((scan.to_string(), map), f);
    }

    pub fn get(&self, scan: &str, map: MapKind) -> Result<&[f64], EvalError> {
        self.values
            .get(&(scan.to_string(), map))
            .map(Vec::as_slice)
            .ok_or_else(|| EvalError::MissingFeature { scan: scan.to_string(), map })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn file_name(scan: &str, map: MapKind) -> String {
        format!("{scan}.{}.feat.ftnsr", map.token())
    }

    /// Reads `{scan_id}.{map}.feat.ftnsr` for every manifest row and map that exists on disk.
    pub fn load_dir(dir: &Path, manifest: &DatasetManifest, maps: &[MapKind]) -> Result<Self, EvalError> {
        let mut t = Self::new();
        for row in &manifest.rows {
            for &m in maps {
                let p = dir.join(Self::file_name(&row.scan_id, m));
                if p.exists() {
                    t.insert(&row.scan_id, m, read_tensor(&p)?.into_data());
                }
            }
        }
        Ok(t)
    }

    /// Writes one feature with the given tensor dims (their product must equal its length).
    pub fn save(&self, dir: &Path, scan: &str, map: MapKind, dims: &[usize]) -> Result<(), EvalError> {
        let f = self.get(scan, map)?;
        let t = Tensor::new(dims.to_vec(), f.to_vec())
            .map_err(|e| EvalError::ShapeMismatch(format!("feature of {scan} {map}: {e}")))?;
        write_tensor(dir.join(Self::file_name(scan, map)), &t)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub round: usize,
    pub fold: usize,
    /// Accuracy in percent per report set, in `EvalReport::labels` order.
    pub accuracy: Vec<f64>,
    pub test_samples: usize,
    /// `(true, predicted)` class indices of the full-fusion set.
    pub predictions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub folds: Vec<FoldResult>,
    /// Mean over all rounds × folds, per label.
    pub mean: Vec<f64>,
    /// `per_round[r][l]`: mean fold accuracy of round `r` for label `l`.
    pub per_round: Vec<Vec<f64>>,
    /// Row-normalized percentages from the last report set.
    pub confusion: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl EvalReport {
    pub fn mean_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.mean[i])
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("round,fold,map_or_fusion,accuracy\n");
        for f in &self.folds {
            for (l, a) in self.labels.iter().zip(&f.accuracy) {
                writeln!(s, "{},{},{},{:.6}", f.round + 1, f.fold + 1, l, a).unwrap();
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("map_or_fusion,round,accuracy\n");
        for (i, l) in self.labels.iter().enumerate() {
            for (r, row) in self.per_round.iter().enumerate() {
                writeln!(s, "{l},{},{:.6}", r + 1, row[i]).unwrap();
            }
            writeln!(s, "{l},mean,{:.6}", self.mean[i]).unwrap();
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for e in Expression::ALL {
            write!(s, ",{}", e.code()).unwrap();
        }
        s.push('\n');
        for (e, row) in Expression::ALL.iter().zip(&self.confusion) {
            s.push_str(e.code());
            for v in row {
                write!(s, ",{v:.4}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Writes `report.csv` content to `report`, plus `summary.csv` and
    /// `confusion.csv` next to it.
    pub fn write(&self, report: &Path) -> Result<(), EvalError> {
        let dir = report.parent().unwrap_or(Path::new("."));
        for (path, text) in [
            (report.to_path_buf(), self.report_csv()),
            (dir.join("summary.csv"), self.summary_csv()),
            (dir.join("confusion.csv"), self.confusion_csv()),
        ] {
            std::fs::write(&path, text).map_err(|e| EvalError::Io { path: path.clone(), msg: e.to_string() })?;
        }
        Ok(())
    }
}

fn fold_samples<'a>(manifest: &'a DatasetManifest, subjects: &[String]) -> Vec<&'a ManifestRow> {
    let set: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
    manifest.rows.iter().filter(|r| eligible(r) && set.contains(r.subject_id.as_str())).collect()
}

fn check_disjoint(round: usize, fold: usize, f: &Fold) -> Result<(), EvalError> {
    let train: BTreeSet<&String> = f.train.iter().collect();
    match f.test.iter().find(|s| train.contains(s)) {
        Some(s) => Err(EvalError::Leakage { round, fold, subject: s.clone() }),
        None => Ok(()),
    }
}

/// Gram matrices over every eligible scan, one per map, shared by all folds.
struct GramCache<'a> {
    index: HashMap<&'a str, usize>,
    grams: HashMap<MapKind, Gram>,
}

impl<'a> GramCache<'a> {
    fn new(features: &FeatureTable, manifest: &'a DatasetManifest, maps: &[MapKind], bias: bool) -> Result<Self, EvalError> {
        let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| eligible(r)).collect();
        let index = rows.iter().enumerate().map(|(i, r)| (r.scan_id.as_str(), i)).collect();
        let grams = maps
            .par_iter()
            .map(|&m| {
                let x = rows.iter().map(|r| features.get(&r.scan_id, m)).collect::<Result<Vec<_>, _>>()?;
                Ok((m, Gram::new(&x, bias)))
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(GramCache { index, grams: grams.into_iter().collect() })
    }

    fn subset(&self, m: MapKind, rows: &[&ManifestRow]) -> Gram {
        let idx: Vec<usize> = rows.iter().map(|r| self.index[r.scan_id.as_str()]).collect();
        self.grams[&m].subset(&idx)
    }
}

fn run_fold(
    features: &FeatureTable,
    manifest: &DatasetManifest,
    grams: &GramCache,
    maps: &[MapKind],
    sets: &[(String, Vec<MapKind>)],
    svm: &SvmParams,
    (round, fold, f): (usize, usize, &Fold),
) -> Result<FoldResult, EvalError> {
    check_disjoint(round, fold, f)?;
    let train = fold_samples(manifest, &f.train);
    let test = fold_samples(manifest, &f.test);
    let train_labels: Vec<Expression> = train.iter().map(|r| r.expression).collect();
    let truth: Vec<usize> = test.iter().map(|r| r.expression.index()).collect();
    let mut per_map: HashMap<MapKind, ScoreMatrix> = HashMap::new();
    for &m in maps {
        let xs = train.iter().map(|r| features.get(&r.scan_id, m)).collect::<Result<Vec<_>, _>>()?;
        let xt = test.iter().map(|r| features.get(&r.scan_id, m)).collect::<Result<Vec<_>, _>>()?;
        let p = SvmParams { seed: svm.seed ^ ((round as u64) << 32 | fold as u64), ..*svm };
        let models = train_one_vs_rest_gram(&xs, &grams.subset(m, &train), &train_labels, &p, Some(m))
            .map_err(|source| EvalError::Svm { round, fold, source })?;
        let s = score(&models, &xt).map_err(|source| EvalError::Svm { round, fold, source })?;
        per_map.insert(m, s);
    }
    let mut accuracy = Vec::with_capacity(sets.len());
    let mut predictions = Vec::new();
    for (_, set) in sets {
        let parts: Vec<&ScoreMatrix> = set.iter().map(|m| &per_map[m]).collect();
        let pred = fuse_scores(&parts)?.predictions();
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        accuracy.push(if truth.is_empty() { 0.0 } else { 100.0 * correct as f64 / truth.len() as f64 });
        predictions = truth.iter().copied().zip(pred).collect();
    }
    Ok(FoldResult { round, fold, accuracy, test_samples: truth.len(), predictions })
}

/// Trains per-map one-vs-rest SVMs on each fold's training subjects, scores
/// the test subjects and reports single-map and fused accuracies.
pub fn evaluate(
    features: &FeatureTable,
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    maps: &[MapKind],
    svm: &SvmParams,
) -> Result<EvalReport, EvalError> {
    let sets = report_sets(maps);
    let grams = GramCache::new(features, manifest, maps, svm.bias)?;
    let jobs: Vec<(usize, usize, &Fold)> = plan
        .rounds
        .iter()
        .enumerate()
        .flat_map(|(r, round)| round.folds.iter().enumerate().map(move |(k, f)| (r, k, f)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&job| run_fold(features, manifest, &grams, maps, &sets, svm, job))
        .collect::<Result<Vec<_>, _>>()?;

    let nl = sets.len();
    let mean_of = |fs: &[&FoldResult], l: usize| fs.iter().map(|f| f.accuracy[l]).sum::<f64>() / fs.len().max(1) as f64;
    let all: Vec<&FoldResult> = folds.iter().collect();
    let mean = (0..nl).map(|l| mean_of(&all, l)).collect();
    let per_round = (0..plan.rounds.len())
        .map(|r| {
            let fs: Vec<&FoldResult> = folds.iter().filter(|f| f.round == r).collect();
            (0..nl).map(|l| mean_of(&fs, l)).collect()
        })
        .collect();
    let mut counts = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for &(t, p) in folds.iter().flat_map(|f| &f.predictions) {
        counts[t][p] += 1;
    }
    let mut confusion = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (row, c) in confusion.iter_mut().zip(&counts) {
        let total: usize = c.iter().sum();
        if total > 0 {
            for (v, &k) in row.iter_mut().zip(c) {
                *v = 100.0 * k as f64 / total as f64;
            }
        }
    }
    Ok(EvalReport { labels: sets.into_iter().map(|(l, _)| l).collect(), folds, mean, per_round, confusion })
}

/// Copy of `manifest` with expression labels of eligible rows shuffled (a
/// chance-level control).
pub fn permute_labels(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..manifest.rows.len()).filter(|&i| eligible(&manifest.rows[i])).collect();
    let mut labels: Vec<Expression> = idx.iter().map(|&i| manifest.rows[i].expression).collect();
    labels.shuffle(&mut rng);
    let mut out = manifest.clone();
    for (&i, l) in idx.iter().zip(labels) {
        out.rows[i].expression = l;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_sum_fusion() {
        let a = ScoreMatrix::new(1, 2, vec![0.2, 0.5]);
        let b = ScoreMatrix::new(1, 2, vec![0.3, 0.1]);
        let f = fuse_scores(&[&a, &b]).unwrap();
        assert_eq!(f.data(), &[0.5, 0.6]);
        assert_eq!(f.predictions(), vec![1]);
        assert_eq!(fuse_scores(&[&a]).unwrap(), a);
        assert!(fuse_scores(&[&a, &ScoreMatrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn report_sets_follow_available_maps() {
        let all = report_sets(&MapKind::ALL);
        let labels: Vec<&str> = all.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            ["I_g", "I_nx", "I_ny", "I_nz", "I_c", "I_t", "I_n", "I_g+I_n", "I_g+I_n+I_c", "I_g+I_n+I_c+I_t"]
        );
        assert_eq!(report_sets(&[MapKind::Geometry]).len(), 1);
    }

    #[test]
    fn protocol_names_parse() {
        assert_eq!("II".parse::<Protocol>().unwrap(), Protocol::II);
        assert!("III".parse::<Protocol>().is_err());
        assert_eq!("fixed".parse::<SubjectPool>().unwrap(), SubjectPool::Fixed);
    }
}
