//! Expression score over attribute maps, its gradient w.r.t. the maps, and
//! saliency rendering.

use thiserror::Error;

use crate::attrmaps::{AttributeMapSet, MapKind};
use crate::cnn::{NetError, NetModel};
use crate::eval::fuse_scores;
use crate::expression::Expression;
use crate::svm::{score, LinearModel, SvmError};
use crate::tensor::Tensor;

/// Dark blue.
pub const DEFAULT_BACKGROUND: [f64; 3] = [0.0, 0.0, 0.35];

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("model for {map} has dimension {model}, network tap has {tap}")]
    DimMismatch { map: MapKind, model: usize, tap: usize },
    #[error("no attribute maps selected")]
    NoMaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `m×n` in `[0, 1]`, zero outside the mask.
    pub values: Tensor,
    pub expression: Expression,
    pub scan_id: String,
}

/// One attribute map as fed to the network, with the expression model trained on it.
pub struct Term<'a> {
    pub map: MapKind,
    pub input: Tensor,
    pub model: &'a LinearModel,
}

/// Pairs every map in `models` with its network input from `maps`.
pub fn terms<'a>(maps: &AttributeMapSet, models: &[(MapKind, &'a LinearModel)]) -> Vec<Term<'a>> {
    models.iter().map(|&(map, model)| Term { map, input: maps.network_input(map), model }).collect()
}

fn check(terms: &[Term], net: &NetModel) -> Result<(), SaliencyError> {
    if terms.is_empty() {
        return Err(SaliencyError::NoMaps);
    }
    for t in terms {
        if t.model.dim() != net.feature_dim() {
            return Err(SaliencyError::DimMismatch { map: t.map, model: t.model.dim(), tap: net.feature_dim() });
        }
    }
    Ok(())
}

/// `Σ_maps wᵀ f(map) + b`, computed through the same scoring and fusion code as evaluation.
pub fn score_terms(terms: &[Term], net: &NetModel) -> Result<f64, SaliencyError> {
    check(terms, net)?;
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        let f = net.extract_feature(&t.input)?;
        parts.push(score(std::slice::from_ref(t.model), &[f.as_slice()])?);
    }
    let refs: Vec<_> = parts.iter().collect();
    Ok(fuse_scores(&refs).expect("single-sample matrices").get(0, 0))
}

pub fn expression_score(
    maps: &AttributeMapSet,
    models: &[(MapKind, &LinearModel)],
    net: &NetModel,
) -> Result<f64, SaliencyError> {
    score_terms(&terms(maps, models), net)
}

/// Signed gradient of the score w.r.t. the `m×n` map grid, summed over maps.
pub fn score_gradient(terms: &[Term], net: &NetModel) -> Result<Tensor, SaliencyError> {
    check(terms, net)?;
    let mut total: Option<Tensor> = None;
    for t in terms {
        let g = net.map_gradient(&t.input, &t.model.w)?;
        total = Some(match total {
            None => g,
            Some(acc) => acc.add(&g).expect("maps share one grid"),
        });
    }
    Ok(total.unwrap())
}

/// `|Σ_maps ∂S/∂map|` rescaled by its maximum over valid pixels.
pub fn saliency(
    maps: &AttributeMapSet,
    models: &[(MapKind, &LinearModel)],
    net: &NetModel,
    expression: Expression,
    scan_id: &str,
) -> Result<SaliencyMap, SaliencyError> {
    let g = score_gradient(&terms(maps, models), net)?;
    let abs = g.zip_map(&maps.mask, |v, m| if m > 0.0 { v.abs() } else { 0.0 }).expect("m×n");
    let max = abs.max_abs();
    let values = if max > 0.0 { abs.map(|v| v / max) } else { abs };
    Ok(SaliencyMap { values, expression, scan_id: scan_id.to_string() })
}

/// `s·texture + (1 − s)·background` per pixel.
pub fn render(saliency: &Tensor, texture: &Tensor, background: [f64; 3]) -> Tensor {
    let (m, n) = (saliency.dims()[0], saliency.dims()[1]);
    assert_eq!(texture.dims(), &[m, n, 3], "texture must be m×n×3");
    Tensor::from_fn(&[m, n, 3], |i| {
        let s = saliency.get(&[i[0], i[1]]);
        s * texture.get(i) + (1.0 - s) * background[i[2]]
    })
}

/// Tiles the channels of an `h×w×c` activation into a 2-D mosaic, min-max
/// scaled to `[0, 1]`. Also returns the nonzero pattern.
pub fn feature_mosaic(act: &Tensor) -> (Tensor, Tensor) {
    let d = act.dims();
    let (h, w, c) = (d[0], d[1], d[2]);
    let cols = ((c as f64).sqrt().ceil() as usize).next_power_of_two();
    let rows = c.div_ceil(cols);
    let (lo, hi) = act.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut img = Tensor::zeros(&[rows * h, cols * w]);
    let mut bin = Tensor::zeros(&[rows * h, cols * w]);
    for ch in 0..c {
        let (ty, tx) = (ch / cols, ch % cols);
        for y in 0..h {
            for x in 0..w {
                let v = act.get(&[y, x, ch]);
                let at = [ty * h + y, tx * w + x];
                img.set(&at, if span > 0.0 { (v - lo) / span } else { 0.0 });
                bin.set(&at, if v != 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    (img, bin)
}
