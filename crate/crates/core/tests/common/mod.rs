#![allow(dead_code)]

use std::path::Path;

use facemap_core::cnn::{ArchSpec, NetModel};
use facemap_core::ftnsr::read_tensor;
use facemap_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct-loop evaluation of a saved model, independent of the engine's
/// im2col/GEMM path. Activations are `[h][w][c]` nested vectors.
pub struct NaiveNet {
    arch: ArchSpec,
    dir: std::path::PathBuf,
}

type Act = Vec<Vec<Vec<f64>>>;

impl NaiveNet {
    pub fn new(arch: ArchSpec, dir: &Path) -> Self {
        NaiveNet { arch, dir: dir.to_path_buf() }
    }

    fn param(&self, layer: &str, suffix: &str) -> Tensor {
        read_tensor(self.dir.join(format!("{layer}.{suffix}.ftnsr"))).unwrap()
    }

    pub fn forward(&self, image: &Tensor) -> Vec<Tensor> {
        let d = image.dims();
        let mut x: Act = (0..d[0])
            .map(|i| (0..d[1]).map(|j| (0..d[2]).map(|c| image.get(&[i, j, c])).collect()).collect())
            .collect();
        let mut outs = Vec::new();
        for l in &self.arch.layers {
            let get = |k: &str| l.params.get(k).map(|v| v.to_string());
            x = match l.kind.as_str() {
                "conv" => {
                    let w = self.param(&l.name, "w");
                    let b = self.param(&l.name, "b");
                    let stride: usize = get("stride").map_or(1, |v| v.parse().unwrap());
                    let pad: i64 = get("pad").map_or(0, |v| v.parse().unwrap());
                    naive_conv(&x, &w, &b, stride, pad)
                }
                "relu" => x.iter().map(|r| r.iter().map(|p| p.iter().map(|v| v.max(0.0)).collect()).collect()).collect(),
                "maxpool" => {
                    let k: usize = get("k").unwrap().parse().unwrap();
                    let s: usize = get("stride").map_or(k, |v| v.parse().unwrap());
                    naive_pool(&x, k, s)
                }
                "fc" | "fullyconnected" => {
                    let w = self.param(&l.name, "w");
                    let b = self.param(&l.name, "b");
                    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
                    let out = w.dims()[0];
                    let y = (0..out)
                        .map(|o| {
                            let mut s = b.data()[o];
                            for (i, v) in flat.iter().enumerate() {
                                s += w.get(&[o, i]) * v;
                            }
                            s
                        })
                        .collect();
                    vec![vec![y]]
                }
                k => panic!("oracle has no {k}"),
            };
            outs.push(to_tensor(&x));
        }
        outs
    }
}

fn to_tensor(x: &Act) -> Tensor {
    let (h, w, c) = (x.len(), x[0].len(), x[0][0].len());
    Tensor::new(vec![h, w, c], x.iter().flatten().flatten().copied().collect()).unwrap()
}

pub fn naive_conv(x: &Act, w: &Tensor, b: &Tensor, stride: usize, pad: i64) -> Act {
    let (h, wd) = (x.len() as i64, x[0].len() as i64);
    let wdims = w.dims();
    let (oc, ic, kh, kw) = (wdims[0], wdims[1], wdims[2] as i64, wdims[3] as i64);
    let oh = ((h + 2 * pad - kh) / stride as i64 + 1) as usize;
    let ow = ((wd + 2 * pad - kw) / stride as i64 + 1) as usize;
    let mut y = vec![vec![vec![0.0; oc]; ow]; oh];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let mut s = b.data()[o];
                for c in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride) as i64 + ky - pad;
                            let ix = (ox * stride) as i64 + kx - pad;
                            if iy >= 0 && iy < h && ix >= 0 && ix < wd {
                                s += w.get(&[o, c, ky as usize, kx as usize]) * x[iy as usize][ix as usize][c];
                            }
                        }
                    }
                }
                y[oy][ox][o] = s;
            }
        }
    }
    y
}

pub fn naive_pool(x: &Act, k: usize, s: usize) -> Act {
    let oh = (x.len() - k) / s + 1;
    let ow = (x[0].len() - k) / s + 1;
    let c = x[0][0].len();
    (0..oh)
        .map(|i| {
            (0..ow)
                .map(|j| {
                    (0..c)
                        .map(|ch| {
                            let mut m = f64::NEG_INFINITY;
                            for a in 0..k {
                                for b in 0..k {
                                    m = m.max(x[i * s + a][j * s + b][ch]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Nonzero-bias random model so bias handling is exercised.
pub fn random_model(text: &str, seed: u64) -> NetModel {
    let arch = ArchSpec::parse(text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let registry = facemap_core::cnn::LayerRegistry::builtin();
    NetModel::build(arch, &registry, |_, _, dims| {
        let len = dims.iter().product();
        Ok(Tensor::new(dims.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
    })
    .unwrap()
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![h, w, c], (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Three small nets covering stride, padding, pooling and fc.
pub const SMALL_NETS: [&str; 3] = [
    "input 9 9 3\nconv name=c1 out=4 k=3x3 stride=1 pad=1\nrelu name=r1\nmaxpool name=p1 k=2 stride=2\nconv name=c2 out=5 k=2x3 stride=1 pad=0\n",
    "input 11 8 2\nconv name=c1 out=3 k=5x3 stride=2 pad=2\nrelu name=r1\nconv name=c2 out=6 k=1x1\nmaxpool name=p1 k=3 stride=1\nfc name=f1 out=7\n",
    "input 7 7 1\nconv name=c1 out=2 k=7x7 stride=3 pad=3\nrelu name=r1\nconv name=c2 out=3 k=2x2 stride=1 pad=1\nrelu name=r2\nmaxpool name=p1 k=2 stride=1\n",
];

/// Maximum relative error of `input_gradient` against central differences at
/// `samples` random input coordinates.
pub fn gradient_check(model: &NetModel, seed: u64, samples: usize, step: f64) -> f64 {
    let s = model.input_shape();
    let image = random_image(s.h, s.w, s.c, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let w: Vec<f64> = (0..model.feature_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = model.input_gradient(&image, &w).unwrap();
    let score = |img: &Tensor| -> f64 {
        let f = model.image_feature(img).unwrap();
        f.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..image.len());
        let mut plus = image.clone();
        plus.data_mut()[i] += step;
        let mut minus = image.clone();
        minus.data_mut()[i] -= step;
        let fd = (score(&plus) - score(&minus)) / (2.0 * step);
        let g = grad.data()[i];
        let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Linearly separable problem: `n` unit-norm points in `dim` dimensions with
/// a gap of at least `margin` across a random hyperplane.
pub fn separable_problem(n: usize, dim: usize, margin: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let offset = rng.random_range(-0.5..0.5);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    while x.len() < n {
        let label = if x.len() % 2 == 0 { 1.0 } else { -1.0 };
        let mut p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        p.iter_mut().for_each(|v| *v /= pn);
        let side = p.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() - offset;
        if side * label >= margin / 2.0 {
            x.push(p);
            y.push(label);
        }
    }
    (x, y)
}
