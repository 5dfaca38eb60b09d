//! Minimal feed-forward convolutional network: text architecture configs,
//! forward inference, input gradients and feature extraction at a tap layer.

pub mod arch;
pub mod gemm;
pub mod layers;
pub mod model;
pub mod registry;
pub mod resize;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::ftnsr::FtnsrError;

pub use arch::{ArchSpec, LayerSpec};
pub use layers::Layer;
pub use model::{DeepFeature, NetModel};
pub use registry::LayerRegistry;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown layer kind `{kind}`")]
    UnknownLayerKind { line: usize, kind: String },
    #[error("layer `{layer}`: shape mismatch: {msg}")]
    ShapeMismatch { layer: String, msg: String },
    #[error("layer `{layer}`: {source}")]
    Weights { layer: String, source: FtnsrError },
    #[error("input is {got}, model expects {expected}")]
    InputShape { expected: Shape, got: String },
    #[error("weight vector has length {got}, tap dimension is {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("tap activation is identically zero")]
    ZeroFeature,
}

/// Spatial activation shape, channels last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.h, self.w, self.c]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// `key=value` settings of one config line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    pub line: usize,
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn new(line: usize) -> Self {
        Params { line, values: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: &str, value: &str) -> Result<(), NetError> {
        if self.values.insert(key.to_string(), value.to_string()).is_some() {
            return Err(self.err(format!("duplicate key `{key}`")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    fn err(&self, msg: String) -> NetError {
        NetError::Parse { line: self.line, msg }
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<(), NetError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(self.err(format!("unexpected key `{k}`"))),
            None => Ok(()),
        }
    }

    fn parse_usize(&self, key: &str, v: &str) -> Result<usize, NetError> {
        v.parse().map_err(|_| self.err(format!("`{key}` expects a non-negative integer, got `{v}`")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, NetError> {
        self.get(key).map_or(Ok(default), |v| self.parse_usize(key, v))
    }

    pub fn positive_or(&self, key: &str, default: usize) -> Result<usize, NetError> {
        let v = self.usize_or(key, default)?;
        if v == 0 {
            return Err(self.err(format!("`{key}` must be at least 1")));
        }
        Ok(v)
    }

    pub fn positive(&self, key: &str) -> Result<usize, NetError> {
        if self.get(key).is_none() {
            return Err(self.err(format!("missing `{key}`")));
        }
        self.positive_or(key, 1)
    }

    /// `K` or `KHxKW`.
    pub fn kernel(&self, key: &str) -> Result<(usize, usize), NetError> {
        let v = self.get(key).ok_or_else(|| self.err(format!("missing `{key}`")))?;
        let (a, b) = v.split_once('x').unwrap_or((v, v));
        let (kh, kw) = (self.parse_usize(key, a)?, self.parse_usize(key, b)?);
        if kh == 0 || kw == 0 {
            return Err(self.err(format!("`{key}` must be at least 1")));
        }
        Ok((kh, kw))
    }
}

/// Architecture configs shipped with the crate.
pub mod configs {
    pub const VGG_S_LIKE: &str = include_str!("../../configs/vgg-s-like.arch");
    pub const ALEXNET_LIKE: &str = include_str!("../../configs/alexnet-like.arch");

    /// Looks up a shipped config by name.
    pub fn builtin(name: &str) -> Option<&'static str> {
        match name {
            "vgg-s-like" => Some(VGG_S_LIKE),
            "alexnet-like" => Some(ALEXNET_LIKE),
            _ => None,
        }
    }
}
