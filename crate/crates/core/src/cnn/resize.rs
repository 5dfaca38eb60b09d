//! Bilinear resampling with pixel centres at `(i + 0.5) / n` and its adjoint.

use crate::tensor::Tensor;

/// Sparse interpolation weights of one output coordinate along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, t: x - lo as f64 }
        })
        .collect()
}

/// Resizes a single-channel `m×n` map to `h×w`.
pub fn resize_bilinear(map: &Tensor, h: usize, w: usize) -> Tensor {
    let (m, n) = (map.dims()[0], map.dims()[1]);
    let (ty, tx) = (taps(m, h), taps(n, w));
    let d = map.data();
    let mut out = Vec::with_capacity(h * w);
    for y in &ty {
        for x in &tx {
            let top = d[y.lo * n + x.lo] * (1.0 - x.t) + d[y.lo * n + x.hi] * x.t;
            let bot = d[y.hi * n + x.lo] * (1.0 - x.t) + d[y.hi * n + x.hi] * x.t;
            out.push(top * (1.0 - y.t) + bot * y.t);
        }
    }
    Tensor::new(vec![h, w], out).unwrap()
}

/// Adjoint of [`resize_bilinear`]: maps an `h×w` gradient back to `m×n`.
pub fn resize_bilinear_adjoint(grad: &Tensor, m: usize, n: usize) -> Tensor {
    let (h, w) = (grad.dims()[0], grad.dims()[1]);
    let (ty, tx) = (taps(m, h), taps(n, w));
    let g = grad.data();
    let mut out = Tensor::zeros(&[m, n]);
    let o = out.data_mut();
    for (i, y) in ty.iter().enumerate() {
        for (j, x) in tx.iter().enumerate() {
            let v = g[i * w + j];
            o[y.lo * n + x.lo] += v * (1.0 - y.t) * (1.0 - x.t);
            o[y.lo * n + x.hi] += v * (1.0 - y.t) * x.t;
            o[y.hi * n + x.lo] += v * y.t * (1.0 - x.t);
            o[y.hi * n + x.hi] += v * y.t * x.t;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_size_is_identity() {
        let t = Tensor::from_fn(&[3, 4], |i| (i[0] * 4 + i[1]) as f64);
        assert_eq!(resize_bilinear(&t, 3, 4), t);
    }

    #[test]
    fn upsample_two_by_two() {
        let t = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&t, 1, 4);
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn adjoint_satisfies_inner_product_identity(
            m in 1usize..7, n in 1usize..7, h in 1usize..9, w in 1usize..9, seed in 0u64..1000
        ) {
            let f = |i: usize| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0;
            let x = Tensor::from_fn(&[m, n], |i| f(i[0] * n + i[1]));
            let y = Tensor::from_fn(&[h, w], |i| f(7 + i[0] * w + i[1]));
            let lhs = resize_bilinear(&x, h, w).dot(&y).unwrap();
            let rhs = x.dot(&resize_bilinear_adjoint(&y, m, n)).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
