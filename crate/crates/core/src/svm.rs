//! Linear SVMs with hinge loss and L2 regularization, trained by dual
//! coordinate descent, and one-vs-rest scoring over the six expressions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::attrmaps::MapKind;
use crate::expression::{argmax, Expression, NUM_CLASSES};
use crate::ftnsr::{read_tensor, write_tensor, FtnsrError};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training set has only one label")]
    SingleClass,
    #[error("no training sample of class {0}")]
    MissingClass(Expression),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{0} features but {1} labels")]
    LabelCount(usize, usize),
    #[error("empty training set")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] FtnsrError),
    #[error("{path}: {msg}")]
    ModelFile { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Stop once the largest projected-gradient violation falls below this.
    pub tol: f64,
    /// Also require `(primal − dual) / primal` below this before stopping.
    pub gap_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Augment features with a constant 1 (regularized bias).
    pub bias: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, tol: 1e-4, gap_tol: 1e-6, max_epochs: 1000, seed: 0, bias: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub bias: f64,
    pub positive_label: Option<Expression>,
    pub map_kind: Option<MapKind>,
}

impl LinearModel {
    pub fn zero(dim: usize) -> Self {
        LinearModel { w: vec![0.0; dim], bias: 0.0, positive_label: None, map_kind: None }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.bias
    }
}

/// Solver output: the model plus the dual state it was derived from.
#[derive(Debug, Clone)]
pub struct Solution {
    pub model: LinearModel,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub max_violation: f64,
    /// Dual objective after every epoch.
    pub dual_trace: Vec<f64>,
}

impl Solution {
    /// `(1/2)|w|² + C Σ max(0, 1 − y (wᵀx + b))` with `b` folded into `|w|` when augmented.
    pub fn primal(&self, x: &[&[f64]], y: &[f64], params: &SvmParams) -> f64 {
        let m = &self.model;
        let reg = 0.5 * (dot(&m.w, &m.w) + m.bias * m.bias);
        let loss: f64 = x.iter().zip(y).map(|(xi, &yi)| (1.0 - yi * m.decision(xi)).max(0.0)).sum();
        reg + params.c * loss
    }

    /// `Σ α − (1/2)|w|²`.
    pub fn dual(&self) -> f64 {
        let m = &self.model;
        self.alpha.iter().sum::<f64>() - 0.5 * (dot(&m.w, &m.w) + m.bias * m.bias)
    }
}

/// Inner products `xᵢ·xⱼ` (plus 1 with the bias augmentation) of a training set.
///
/// The dual solver only touches the data through this matrix, so one Gram
/// matrix serves every one-vs-rest problem and every fold drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new(x: &[&[f64]], bias: bool) -> Self {
        let n = x.len();
        let b = if bias { 1.0 } else { 0.0 };
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = dot(x[i], x[j]) + b;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Gram { n, data }
    }

    /// Rows and columns `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Gram {
        let n = idx.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in idx {
            data.extend(idx.iter().map(|&j| self.data[i * self.n + j]));
        }
        Gram { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Dual solution before the weights are formed.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub max_violation: f64,
    pub dual_trace: Vec<f64>,
}

/// Dual coordinate descent on a precomputed Gram matrix; labels are `+1` / `-1`.
pub fn train_dual(gram: &Gram, y: &[f64], params: &SvmParams) -> Result<DualSolution, SvmError> {
    let n = gram.len();
    if n != y.len() {
        return Err(SvmError::LabelCount(n, y.len()));
    }
    if n == 0 {
        return Err(SvmError::Empty);
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass);
    }
    let c = params.c;
    let mut alpha = vec![0.0; n];
    // u = decision values on the training set, Σⱼ αⱼ yⱼ Qᵢⱼ.
    let mut u = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dual_trace = Vec::new();
    let mut epochs = 0;
    let mut max_violation = f64::INFINITY;
    while epochs < params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        max_violation = 0.0f64;
        for &i in &order {
            let qd = gram.data[i * n + i];
            let g = y[i] * u[i] - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 && qd > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                for (uj, &q) in u.iter_mut().zip(gram.row(i)) {
                    *uj += step * q;
                }
            }
        }
        let reg = 0.5 * alpha.iter().zip(y).zip(&u).map(|((a, yi), ui)| a * yi * ui).sum::<f64>();
        let dual = alpha.iter().sum::<f64>() - reg;
        dual_trace.push(dual);
        if max_violation < params.tol {
            let loss: f64 = y.iter().zip(&u).map(|(yi, ui)| (1.0 - yi * ui).max(0.0)).sum();
            let primal = reg + c * loss;
            if primal - dual <= params.gap_tol * primal.abs() {
                break;
            }
        }
    }
    Ok(DualSolution { alpha, epochs, max_violation, dual_trace })
}

fn check_data(x: &[&[f64]], n_labels: usize) -> Result<usize, SvmError> {
    if x.len() != n_labels {
        return Err(SvmError::LabelCount(x.len(), n_labels));
    }
    let Some(first) = x.first() else { return Err(SvmError::Empty) };
    let dim = first.len();
    if let Some(bad) = x.iter().find(|xi| xi.len() != dim) {
        return Err(SvmError::DimMismatch { expected: dim, got: bad.len() });
    }
    Ok(dim)
}

/// `w = Σ αᵢ yᵢ xᵢ`, `b = Σ αᵢ yᵢ` (zero without the augmentation).
fn primal_model(x: &[&[f64]], y: &[f64], alpha: &[f64], bias: bool) -> LinearModel {
    let mut w = vec![0.0; x[0].len()];
    let mut b = 0.0;
    for ((xi, &yi), &a) in x.iter().zip(y).zip(alpha) {
        if a != 0.0 {
            let s = a * yi;
            for (wj, &xj) in w.iter_mut().zip(xi.iter()) {
                *wj += s * xj;
            }
            b += s;
        }
    }
    LinearModel { w, bias: if bias { b } else { 0.0 }, positive_label: None, map_kind: None }
}

/// Trains a binary classifier; labels are `+1` / `-1`.
pub fn train(x: &[&[f64]], y: &[f64], params: &SvmParams) -> Result<Solution, SvmError> {
    check_data(x, y.len())?;
    let dual = train_dual(&Gram::new(x, params.bias), y, params)?;
    Ok(Solution {
        model: primal_model(x, y, &dual.alpha, params.bias),
        alpha: dual.alpha,
        epochs: dual.epochs,
        max_violation: dual.max_violation,
        dual_trace: dual.dual_trace,
    })
}

/// One model per expression, class `e` against the rest, in [`Expression::ALL`] order.
pub fn train_one_vs_rest(
    x: &[&[f64]],
    labels: &[Expression],
    params: &SvmParams,
    map_kind: Option<MapKind>,
) -> Result<Vec<LinearModel>, SvmError> {
    check_data(x, labels.len())?;
    train_one_vs_rest_gram(x, &Gram::new(x, params.bias), labels, params, map_kind)
}

/// [`train_one_vs_rest`] with the Gram matrix of `x` supplied by the caller.
pub fn train_one_vs_rest_gram(
    x: &[&[f64]],
    gram: &Gram,
    labels: &[Expression],
    params: &SvmParams,
    map_kind: Option<MapKind>,
) -> Result<Vec<LinearModel>, SvmError> {
    check_data(x, labels.len())?;
    if gram.len() != x.len() {
        return Err(SvmError::LabelCount(gram.len(), x.len()));
    }
    if let Some(e) = Expression::ALL.into_iter().find(|e| !labels.contains(e)) {
        return Err(SvmError::MissingClass(e));
    }
    Expression::ALL
        .into_iter()
        .map(|e| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == e { 1.0 } else { -1.0 }).collect();
            let p = SvmParams { seed: params.seed.wrapping_add(e.index() as u64), ..*params };
            let dual = train_dual(gram, &y, &p)?;
            let mut model = primal_model(x, &y, &dual.alpha, params.bias);
            model.positive_label = Some(e);
            model.map_kind = map_kind;
            Ok(model)
        })
        .collect()
}

/// Decision values, one row per sample and one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        ScoreMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, s: f64) -> ScoreMatrix {
        ScoreMatrix::new(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    /// Argmax per row; lowest index wins ties.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows).map(|r| argmax(self.row(r))).collect()
    }
}

pub fn score(models: &[LinearModel], x: &[&[f64]]) -> Result<ScoreMatrix, SvmError> {
    let cols = models.len();
    let mut data = Vec::with_capacity(x.len() * cols);
    for xi in x {
        for m in models {
            if m.dim() != xi.len() {
                return Err(SvmError::DimMismatch { expected: m.dim(), got: xi.len() });
            }
            data.push(m.decision(xi));
        }
    }
    Ok(ScoreMatrix::new(x.len(), cols, data))
}

fn model_file(dir: &Path, map: MapKind, e: Expression) -> std::path::PathBuf {
    dir.join(format!("{}.{}.svm.ftnsr", map.token(), e.code()))
}

fn sidecar(dir: &Path, map: MapKind) -> std::path::PathBuf {
    dir.join(format!("{}.svm.txt", map.token()))
}

/// Writes one `w ‖ bias` tensor per class plus a text sidecar with map kind and class order.
pub fn save_models(dir: &Path, map: MapKind, models: &[LinearModel]) -> Result<(), SvmError> {
    assert_eq!(models.len(), NUM_CLASSES);
    let mut side = format!("map={}\ndim={}\nclasses=", map.token(), models[0].dim());
    for (i, m) in models.iter().enumerate() {
        let e = Expression::ALL[i];
        debug_assert!(m.positive_label.is_none_or(|p| p == e));
        let mut v = m.w.clone();
        v.push(m.bias);
        write_tensor(model_file(dir, map, e), &Tensor::from_vec(v))?;
        write!(side, "{}{}", if i > 0 { "," } else { "" }, e.code()).unwrap();
    }
    side.push('\n');
    let path = sidecar(dir, map);
    std::fs::write(&path, side)
        .map_err(|e| SvmError::ModelFile { path: path.display().to_string(), msg: e.to_string() })
}

pub fn load_models(dir: &Path, map: MapKind) -> Result<Vec<LinearModel>, SvmError> {
    let path = sidecar(dir, map);
    let bad = |msg: String| SvmError::ModelFile { path: path.display().to_string(), msg };
    let text = std::fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
    let classes = text
        .lines()
        .find_map(|l| l.strip_prefix("classes="))
        .ok_or_else(|| bad("missing classes".into()))?;
    classes
        .split(',')
        .map(|code| {
            let e: Expression = code.parse().map_err(|_| bad(format!("unknown class `{code}`")))?;
            let mut v = read_tensor(model_file(dir, map, e))?.into_data();
            let bias = v.pop().ok_or_else(|| bad("empty model".into()))?;
            Ok(LinearModel { w: v, bias, positive_label: Some(e), map_kind: Some(map) })
        })
        .collect()
}
