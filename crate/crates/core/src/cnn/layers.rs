//! Built-in layer kinds. Activations are `h×w×c` tensors (channels last).

use std::fmt;

use super::gemm::{gemm, MatRef};
use super::{NetError, Params, Shape};
use crate::tensor::Tensor;

/// One stage of a feed-forward network.
///
/// A layer is created unbound from its config line, then receives its
/// parameters once the input shape is known.
pub trait Layer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn kind(&self) -> &'static str;
    fn output_shape(&self, input: Shape) -> Result<Shape, NetError>;

    /// Parameter tensors expected for `input`, as `(suffix, dims)` with suffix `w` or `b`.
    fn param_shapes(&self, _input: Shape) -> Vec<(&'static str, Vec<usize>)> {
        Vec::new()
    }

    /// Parameters in `param_shapes` order, already shape-checked.
    fn bind(&mut self, _input: Shape, _params: Vec<Tensor>) {}

    fn forward(&self, input: &Tensor) -> Tensor;

    /// Gradient w.r.t. the input given the forward input/output and the output gradient.
    fn backward(&self, input: &Tensor, output: &Tensor, grad_output: &Tensor) -> Tensor;
}

fn shape_of(t: &Tensor) -> Shape {
    let d = t.dims();
    Shape { h: d[0], w: d[1], c: d[2] }
}

fn pooled_extent(input: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

#[derive(Debug)]
pub struct Conv {
    name: String,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    in_channels: usize,
    /// `(kh·kw·in_c) × out_c`, patch order (ky, kx, ic).
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv {
    pub fn from_params(name: &str, p: &Params) -> Result<Box<dyn Layer>, NetError> {
        let (kh, kw) = p.kernel("k")?;
        Ok(Box::new(Conv {
            name: name.to_string(),
            out_channels: p.positive("out")?,
            kh,
            kw,
            stride: p.positive_or("stride", 1)?,
            pad: p.usize_or("pad", 0)?,
            in_channels: 0,
            weights: Vec::new(),
            bias: Vec::new(),
        }))
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_channels
    }

    /// Patch matrix `(oh·ow) × (kh·kw·ic)` with zero padding.
    fn im2col(&self, input: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let s = shape_of(input);
        let k = self.patch_len();
        let src = input.data();
        let mut cols = vec![0.0; oh * ow * k];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix as usize >= s.w {
                            continue;
                        }
                        let from = (iy as usize * s.w + ix as usize) * s.c;
                        let to = (ky * self.kw + kx) * s.c;
                        row[to..to + s.c].copy_from_slice(&src[from..from + s.c]);
                    }
                }
            }
        }
        cols
    }
}

impl Layer for Conv {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, NetError> {
        match (
            pooled_extent(input.h, self.pad, self.kh, self.stride),
            pooled_extent(input.w, self.pad, self.kw, self.stride),
        ) {
            (Some(h), Some(w)) => Ok(Shape { h, w, c: self.out_channels }),
            _ => Err(NetError::ShapeMismatch {
                layer: self.name.clone(),
                msg: format!("kernel {}x{} larger than padded input {}x{}", self.kh, self.kw, input.h, input.w),
            }),
        }
    }

    fn param_shapes(&self, input: Shape) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("w", vec![self.out_channels, input.c, self.kh, self.kw]),
            ("b", vec![self.out_channels]),
        ]
    }

    fn bind(&mut self, input: Shape, params: Vec<Tensor>) {
        let [w, b]: [Tensor; 2] = params.try_into().expect("conv takes w and b");
        self.in_channels = input.c;
        let (o, ic, kh, kw) = (self.out_channels, input.c, self.kh, self.kw);
        let k = kh * kw * ic;
        let mut m = vec![0.0; k * o];
        let src = w.data();
        for oc in 0..o {
            for c in 0..ic {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = (ky * kw + kx) * ic + c;
                        m[row * o + oc] = src[((oc * ic + c) * kh + ky) * kw + kx];
                    }
                }
            }
        }
        self.weights = m;
        self.bias = b.into_data();
    }

    fn forward(&self, input: &Tensor) -> Tensor {
        let s = shape_of(input);
        assert_eq!(s.c, self.in_channels, "conv {} input channels", self.name);
        let out = self.output_shape(s).expect("shape checked at load");
        let p = out.h * out.w;
        let k = self.patch_len();
        let cols = self.im2col(input, out.h, out.w);
        let mut y = Vec::with_capacity(p * self.out_channels);
        for _ in 0..p {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            MatRef::row_major(&cols, p, k),
            MatRef::row_major(&self.weights, k, self.out_channels),
            1.0,
            &mut y,
        );
        Tensor::new(vec![out.h, out.w, out.c], y).unwrap()
    }

    fn backward(&self, input: &Tensor, output: &Tensor, grad_output: &Tensor) -> Tensor {
        let s = shape_of(input);
        let out = shape_of(output);
        let p = out.h * out.w;
        let k = self.patch_len();
        let mut dcols = vec![0.0; p * k];
        gemm(
            MatRef::row_major(grad_output.data(), p, self.out_channels),
            MatRef::transposed(&self.weights, self.out_channels, k),
            0.0,
            &mut dcols,
        );
        let mut dx = Tensor::zeros(&[s.h, s.w, s.c]);
        let dst = dx.data_mut();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let row = &dcols[(oy * out.w + ox) * k..(oy * out.w + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix as usize >= s.w {
                            continue;
                        }
                        let to = (iy as usize * s.w + ix as usize) * s.c;
                        let from = (ky * self.kw + kx) * s.c;
                        for c in 0..s.c {
                            dst[to + c] += row[from + c];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug)]
pub struct Relu {
    name: String,
}

impl Relu {
    pub fn from_params(name: &str, _p: &Params) -> Result<Box<dyn Layer>, NetError> {
        Ok(Box::new(Relu { name: name.to_string() }))
    }
}

impl Layer for Relu {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> &'static str {
        "relu"
    }
    fn output_shape(&self, input: Shape) -> Result<Shape, NetError> {
        Ok(input)
    }
    fn forward(&self, input: &Tensor) -> Tensor {
        input.map(|v| v.max(0.0))
    }
    fn backward(&self, input: &Tensor, _output: &Tensor, grad_output: &Tensor) -> Tensor {
        input
            .zip_map(grad_output, |x, g| if x > 0.0 { g } else { 0.0 })
            .expect("same shape")
    }
}

#[derive(Debug)]
pub struct MaxPool {
    name: String,
    k: usize,
    stride: usize,
}

impl MaxPool {
    pub fn from_params(name: &str, p: &Params) -> Result<Box<dyn Layer>, NetError> {
        let k = p.positive("k")?;
        Ok(Box::new(MaxPool {
            name: name.to_string(),
            k,
            stride: p.positive_or("stride", k)?,
        }))
    }

    /// Flat input index of the window maximum; the first one in row-major order wins ties.
    fn argmax(&self, input: &Tensor, s: Shape, oy: usize, ox: usize, c: usize) -> usize {
        let d = input.data();
        let mut best = ((oy * self.stride) * s.w + ox * self.stride) * s.c + c;
        for ky in 0..self.k {
            for kx in 0..self.k {
                let idx = ((oy * self.stride + ky) * s.w + ox * self.stride + kx) * s.c + c;
                if d[idx] > d[best] {
                    best = idx;
                }
            }
        }
        best
    }
}

impl Layer for MaxPool {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> &'static str {
        "maxpool"
    }
    fn output_shape(&self, input: Shape) -> Result<Shape, NetError> {
        match (
            pooled_extent(input.h, 0, self.k, self.stride),
            pooled_extent(input.w, 0, self.k, self.stride),
        ) {
            (Some(h), Some(w)) => Ok(Shape { h, w, c: input.c }),
            _ => Err(NetError::ShapeMismatch {
                layer: self.name.clone(),
                msg: format!("window {} larger than input {}x{}", self.k, input.h, input.w),
            }),
        }
    }
    fn forward(&self, input: &Tensor) -> Tensor {
        let s = shape_of(input);
        let out = self.output_shape(s).expect("shape checked at load");
        let mut y = Vec::with_capacity(out.h * out.w * out.c);
        for oy in 0..out.h {
            for ox in 0..out.w {
                for c in 0..s.c {
                    y.push(input.data()[self.argmax(input, s, oy, ox, c)]);
                }
            }
        }
        Tensor::new(vec![out.h, out.w, out.c], y).unwrap()
    }
    fn backward(&self, input: &Tensor, output: &Tensor, grad_output: &Tensor) -> Tensor {
        let s = shape_of(input);
        let out = shape_of(output);
        let mut dx = Tensor::zeros(&[s.h, s.w, s.c]);
        let g = grad_output.data();
        for oy in 0..out.h {
            for ox in 0..out.w {
                for c in 0..s.c {
                    let src = self.argmax(input, s, oy, ox, c);
                    dx.data_mut()[src] += g[(oy * out.w + ox) * s.c + c];
                }
            }
        }
        dx
    }
}

#[derive(Debug)]
pub struct FullyConnected {
    name: String,
    out: usize,
    inputs: usize,
    /// `out × in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FullyConnected {
    pub fn from_params(name: &str, p: &Params) -> Result<Box<dyn Layer>, NetError> {
        Ok(Box::new(FullyConnected {
            name: name.to_string(),
            out: p.positive("out")?,
            inputs: 0,
            weights: Vec::new(),
            bias: Vec::new(),
        }))
    }
}

impl Layer for FullyConnected {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> &'static str {
        "fc"
    }
    fn output_shape(&self, _input: Shape) -> Result<Shape, NetError> {
        Ok(Shape { h: 1, w: 1, c: self.out })
    }
    fn param_shapes(&self, input: Shape) -> Vec<(&'static str, Vec<usize>)> {
        vec![("w", vec![self.out, input.len()]), ("b", vec![self.out])]
    }
    fn bind(&mut self, input: Shape, params: Vec<Tensor>) {
        let [w, b]: [Tensor; 2] = params.try_into().expect("fc takes w and b");
        self.inputs = input.len();
        self.weights = w.into_data();
        self.bias = b.into_data();
    }
    fn forward(&self, input: &Tensor) -> Tensor {
        assert_eq!(input.len(), self.inputs, "fc {} input size", self.name);
        let mut y = self.bias.clone();
        gemm(
            MatRef::row_major(&self.weights, self.out, self.inputs),
            MatRef::row_major(input.data(), self.inputs, 1),
            1.0,
            &mut y,
        );
        Tensor::new(vec![1, 1, self.out], y).unwrap()
    }
    fn backward(&self, input: &Tensor, _output: &Tensor, grad_output: &Tensor) -> Tensor {
        let mut dx = vec![0.0; self.inputs];
        gemm(
            MatRef::transposed(&self.weights, self.inputs, self.out),
            MatRef::row_major(grad_output.data(), self.out, 1),
            0.0,
            &mut dx,
        );
        Tensor::new(input.dims().to_vec(), dx).unwrap()
    }
}
