use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::ArchSpec;
use super::layers::Layer;
use super::registry::LayerRegistry;
use super::resize::{resize_bilinear, resize_bilinear_adjoint};
use super::{NetError, Shape};
use crate::attrmaps::{normalize_map, AttributeMapSet, MapKind};
use crate::ftnsr::{read_tensor, write_tensor};
use crate::tensor::{dot, Tensor};

/// File name of the architecture inside a model directory.
pub const ARCH_FILE: &str = "model.arch";

/// A validated network with bound parameters. Immutable after construction.
#[derive(Debug)]
pub struct NetModel {
    arch: ArchSpec,
    layers: Vec<Box<dyn Layer>>,
    shapes: Vec<Shape>,
    params: Vec<Vec<Tensor>>,
    tap: usize,
}

/// L2-normalized tap activation of one attribute map.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepFeature {
    pub values: Vec<f64>,
    pub source_map: MapKind,
    pub scan_id: String,
}

impl DeepFeature {
    pub fn extract(model: &NetModel, maps: &AttributeMapSet, kind: MapKind, scan_id: &str) -> Result<Self, NetError> {
        Ok(DeepFeature {
            values: model.extract_feature(&maps.network_input(kind))?,
            source_map: kind,
            scan_id: scan_id.to_string(),
        })
    }
}

impl NetModel {
    /// Binds parameters supplied by `weights(layer, suffix, expected_dims)` and
    /// checks every shape along the chain.
    pub fn build(
        arch: ArchSpec,
        registry: &LayerRegistry,
        mut weights: impl FnMut(&dyn Layer, &str, &[usize]) -> Result<Tensor, NetError>,
    ) -> Result<Self, NetError> {
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut shapes = Vec::with_capacity(arch.layers.len());
        let mut params = Vec::with_capacity(arch.layers.len());
        let mut shape = arch.input;
        for spec in &arch.layers {
            let mut layer = registry.build(spec)?;
            let out = layer.output_shape(shape)?;
            if out.is_empty() {
                return Err(NetError::ShapeMismatch { layer: spec.name.clone(), msg: format!("empty output {out}") });
            }
            let mut bound = Vec::new();
            for (suffix, dims) in layer.param_shapes(shape) {
                let t = weights(layer.as_ref(), suffix, &dims)?;
                if t.dims() != dims.as_slice() {
                    return Err(NetError::ShapeMismatch {
                        layer: spec.name.clone(),
                        msg: format!("parameter `{suffix}` has dims {:?}, expected {:?}", t.dims(), dims),
                    });
                }
                bound.push(t);
            }
            if !bound.is_empty() {
                layer.bind(shape, bound.clone());
            }
            layers.push(layer);
            shapes.push(out);
            params.push(bound);
            shape = out;
        }
        let tap = arch.layers.iter().position(|l| l.name == arch.tap).expect("tap validated by parser");
        Ok(NetModel { arch, layers, shapes, params, tap })
    }

    /// Reads `<layer>.w.ftnsr` / `<layer>.b.ftnsr` from `weights_dir`.
    pub fn load(arch_path: impl AsRef<Path>, weights_dir: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::from_files(ArchSpec::load(arch_path)?, weights_dir.as_ref())
    }

    fn from_files(arch: ArchSpec, dir: &Path) -> Result<Self, NetError> {
        Self::build(arch, &LayerRegistry::builtin(), |layer, suffix, _| {
            read_tensor(dir.join(format!("{}.{suffix}.ftnsr", layer.name())))
                .map_err(|source| NetError::Weights { layer: layer.name().to_string(), source })
        })
    }

    /// Loads a directory holding `model.arch` and its weight files.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::load_dir_with_tap(dir, None)
    }

    /// Like [`NetModel::load_dir`], optionally exporting a different layer as the tap.
    pub fn load_dir_with_tap(dir: impl AsRef<Path>, tap: Option<&str>) -> Result<Self, NetError> {
        let dir = dir.as_ref();
        let mut arch = ArchSpec::load(dir.join(ARCH_FILE))?;
        if let Some(t) = tap {
            if !arch.layers.iter().any(|l| l.name == t) {
                return Err(NetError::Parse { line: 0, msg: format!("tap `{t}` names no layer") });
            }
            arch.tap = t.to_string();
        }
        Self::from_files(arch, dir)
    }

    /// Gaussian weights with standard deviation `sqrt(2 / fan_in)` and zero biases.
    pub fn random(arch: ArchSpec, seed: u64) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, &LayerRegistry::builtin(), |_, suffix, dims| {
            let len: usize = dims.iter().product();
            let data = if suffix == "w" {
                // weights are [out, fan_in...] for every built-in kind
                let fan_in: usize = dims[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                (0..len).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; len]
            };
            Ok(Tensor::new(dims.to_vec(), data).unwrap())
        })
    }

    /// Writes `model.arch` and all parameters into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), NetError> {
        let dir = dir.as_ref();
        let io = |path: &Path, source| NetError::Io { path: path.into(), source };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let arch_path = dir.join(ARCH_FILE);
        std::fs::write(&arch_path, self.arch.to_text()).map_err(|e| io(&arch_path, e))?;
        for (layer, params) in self.layers.iter().zip(&self.params) {
            for (t, suffix) in params.iter().zip(["w", "b"]) {
                write_tensor(dir.join(format!("{}.{suffix}.ftnsr", layer.name())), t)
                    .map_err(|source| NetError::Weights { layer: layer.name().to_string(), source })?;
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn tap_name(&self) -> &str {
        &self.arch.tap
    }

    pub fn tap_shape(&self) -> Shape {
        self.shapes[self.tap]
    }

    /// Length of the flattened tap activation.
    pub fn feature_dim(&self) -> usize {
        self.tap_shape().len()
    }

    /// `(name, kind, output shape)` for every layer.
    pub fn layer_shapes(&self) -> Vec<(&str, &'static str, Shape)> {
        self.layers.iter().zip(&self.shapes).map(|(l, &s)| (l.name(), l.kind(), s)).collect()
    }

    fn check_input(&self, image: &Tensor) -> Result<(), NetError> {
        if image.dims() != self.arch.input.dims().as_slice() {
            return Err(NetError::InputShape { expected: self.arch.input, got: format!("{:?}", image.dims()) });
        }
        Ok(())
    }

    /// Activations `[input, out_0, ..., out_last]`.
    fn run(&self, image: &Tensor, last: usize) -> Result<Vec<Tensor>, NetError> {
        self.check_input(image)?;
        let mut acts = Vec::with_capacity(last + 2);
        acts.push(image.clone());
        for layer in &self.layers[..=last] {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        Ok(acts)
    }

    /// Outputs of every layer in order.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<Tensor>, NetError> {
        let mut acts = self.run(image, self.layers.len() - 1)?;
        acts.remove(0);
        Ok(acts)
    }

    /// Raw (unnormalized) tap activation.
    pub fn tap_activation(&self, image: &Tensor) -> Result<Tensor, NetError> {
        Ok(self.run(image, self.tap)?.pop().unwrap())
    }

    /// Min-max normalizes a single-channel map, resizes it to the input size,
    /// replicates it across channels and subtracts the per-channel mean.
    pub fn prepare_input(&self, map: &Tensor) -> Tensor {
        let (m, n) = (map.dims()[0], map.dims()[1]);
        let norm = normalize_map(map, &Tensor::filled(&[m, n], 1.0));
        let s = self.arch.input;
        let r = resize_bilinear(&norm, s.h, s.w);
        let mut data = Vec::with_capacity(s.len());
        for &v in r.data() {
            for c in 0..s.c {
                data.push(v - self.arch.mean[c.min(2)]);
            }
        }
        Tensor::new(s.dims(), data).unwrap()
    }

    /// Unit-norm tap feature of an image already at input size.
    pub fn image_feature(&self, image: &Tensor) -> Result<Vec<f64>, NetError> {
        let a = self.tap_activation(image)?.into_data();
        if a.iter().all(|&v| v == 0.0) {
            return Err(NetError::ZeroFeature);
        }
        let norm = dot(&a, &a).sqrt();
        Ok(a.into_iter().map(|v| v / norm).collect())
    }

    /// Deep feature of a single-channel attribute map of any size.
    pub fn extract_feature(&self, map: &Tensor) -> Result<Vec<f64>, NetError> {
        self.image_feature(&self.prepare_input(map))
    }

    /// Gradient of `<w, f(image)>` w.r.t. the input image, where `f` is the
    /// L2-normalized tap activation.
    pub fn input_gradient(&self, image: &Tensor, w: &[f64]) -> Result<Tensor, NetError> {
        if w.len() != self.feature_dim() {
            return Err(NetError::WeightLength { expected: self.feature_dim(), got: w.len() });
        }
        let acts = self.run(image, self.tap)?;
        let a = acts[self.tap + 1].data();
        let norm = dot(a, a).sqrt();
        if norm == 0.0 {
            return Err(NetError::ZeroFeature);
        }
        let fw = dot(a, w) / norm;
        let g: Vec<f64> = a.iter().zip(w).map(|(&ai, &wi)| (wi - ai / norm * fw) / norm).collect();
        let mut grad = Tensor::new(self.tap_shape().dims(), g).unwrap();
        for i in (0..=self.tap).rev() {
            grad = self.layers[i].backward(&acts[i], &acts[i + 1], &grad);
        }
        Ok(grad)
    }

    /// Gradient of `<w, f>` w.r.t. the normalized single-channel map at its own
    /// resolution (channel replication and resizing are differentiated through).
    pub fn map_gradient(&self, map: &Tensor, w: &[f64]) -> Result<Tensor, NetError> {
        let (m, n) = (map.dims()[0], map.dims()[1]);
        let g = self.input_gradient(&self.prepare_input(map), w)?;
        let s = self.arch.input;
        let summed = Tensor::new(
            vec![s.h, s.w],
            g.data().chunks(s.c).map(|px| px.iter().sum()).collect(),
        )
        .unwrap();
        Ok(resize_bilinear_adjoint(&summed, m, n))
    }
}
