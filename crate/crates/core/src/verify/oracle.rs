//! Direct reference computations in f64.
//!
//! Deliberately naive: plain nested loops with explicit bounds tests and no
//! shared helpers from the operator implementations.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::ops::ConvSpec;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// Six nested loops of direct summation.
pub fn conv_direct_oracle<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<f64>> {
    let [n, cin, ih, iw] = x.dims();
    let [cout, cin_g, kh, kw] = weight.dims();
    let g = spec.groups;
    if cin != spec.in_channels || cout != spec.out_channels || cin_g * g != cin || cout % g != 0 {
        return Err(invalid("oracle: weight shape does not match the convolution"));
    }
    let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
    let span_h = d * (kh as i64 - 1) + 1;
    let span_w = d * (kw as i64 - 1) + 1;
    let oh = (ih as i64 + 2 * p - span_h) / s + 1;
    let ow = (iw as i64 + 2 * p - span_w) / s + 1;
    if oh < 1 || ow < 1 {
        return Err(invalid("oracle: empty output"));
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let xs = to_f64(x);
    let ws = to_f64(weight);
    let bs = bias.map(to_f64);
    let cout_g = cout / g;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for oc in 0..cout {
            let grp = oc / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bs.as_ref().map_or(0.0, |v| v[oc]);
                    for icl in 0..cin_g {
                        let ic = grp * cin_g + icl;
                        for a in 0..kh {
                            for c in 0..kw {
                                let y = oy as i64 * s - p + a as i64 * d;
                                let xx = ox as i64 * s - p + c as i64 * d;
                                if y < 0 || xx < 0 || y >= ih as i64 || xx >= iw as i64 {
                                    continue;
                                }
                                let xv = xs[((b * cin + ic) * ih + y as usize) * iw + xx as usize];
                                let wv = ws[((oc * cin_g + icl) * kh + a) * kw + c];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * cout + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, cout, oh, ow), out)
}

/// `cos(pi*u*(2i+1)/(2h)) * cos(pi*v*(2j+1)/(2w))`.
pub fn dct_basis_oracle(u: usize, v: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let a = PI * u as f64 * (2 * i + 1) as f64 / (2 * h) as f64;
            let b = PI * v as f64 * (2 * j + 1) as f64 / (2 * w) as f64;
            out.push(a.cos() * b.cos());
        }
    }
    out
}

/// Unnormalized 2-D DCT-II of every plane by a quadruple loop.
pub fn dct_direct_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let xs = to_f64(x);
    let mut out = vec![0.0; xs.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        let a = (PI * u as f64 * (2 * i + 1) as f64 / (2 * h) as f64).cos();
                        let b = (PI * v as f64 * (2 * j + 1) as f64 / (2 * w) as f64).cos();
                        acc += xs[base + i * w + j] * a * b;
                    }
                }
                out[base + u * w + v] = acc;
            }
        }
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

pub fn channel_pool_oracle<T: Scalar>(x: &Tensor<T>, max: bool) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    Tensor::from_fn(Shape::new(n, 1, h, w), |[b, _, i, j]| {
        let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
        for ch in 0..c {
            let v = x.at([b, ch, i, j]).as_f64();
            acc = if max { acc.max(v) } else { acc + v };
        }
        if max {
            acc
        } else {
            acc / c as f64
        }
    })
}

pub fn global_avg_pool_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    Tensor::from_fn(Shape::new(n, c, 1, 1), |[b, ch, _, _]| {
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += x.at([b, ch, i, j]).as_f64();
            }
        }
        acc / (h * w) as f64
    })
}

/// Tokens are spatial positions; softmax over keys per query.
pub fn attention_oracle<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, scale: f64) -> Tensor<f64> {
    let [n, c, h, w] = q.dims();
    let t = h * w;
    let tok = |x: &Tensor<T>, b: usize, s: usize, ch: usize| x.at([b, ch, s / w, s % w]).as_f64();
    let mut out = Tensor::zeros(Shape::new(n, v.shape().c(), h, w));
    for b in 0..n {
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|s| (0..c).map(|ch| tok(q, b, i, ch) * tok(k, b, s, ch)).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for ch in 0..v.shape().c() {
                let val: f64 = (0..t).map(|s| e[s] / z * tok(v, b, s, ch)).sum();
                out.set([b, ch, i / w, i % w], val);
            }
        }
    }
    out
}

/// Two passes: materialize squared differences, then average.
pub fn mse_oracle<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let sq: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .collect();
    sq.iter().sum::<f64>() / sq.len() as f64
}

pub fn rc_loss_oracle<T: Scalar>(f_i: &Tensor<T>, f_v: &Tensor<T>, i: &Tensor<T>, v: &Tensor<T>) -> f64 {
    0.5 * mse_oracle(f_i, i) + 0.5 * mse_oracle(f_v, v)
}

/// Multiplies channel group `c / (C / n)` by its basis plane.
pub fn group_filter_oracle<T: Scalar>(x: &Tensor<T>, freqs: &[(usize, usize)]) -> Tensor<f64> {
    let [_, c, h, w] = x.dims();
    let per = c / freqs.len();
    let planes: Vec<Vec<f64>> = freqs.iter().map(|&(u, v)| dct_basis_oracle(u, v, h, w)).collect();
    Tensor::from_fn(x.shape(), |[b, ch, i, j]| x.at([b, ch, i, j]).as_f64() * planes[ch / per][i * w + j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |[_, _, i, j]| (i * 4 + j) as f64);
        let mut w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        w.set([0, 0, 1, 1], 1.0);
        let y = conv_direct_oracle(&x, &w, None, &ConvSpec::new(1, 1, 3).padding(1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_gives_bias() {
        let x = Tensor::<f64>::ones(Shape::new(1, 2, 3, 3));
        let w = Tensor::zeros(Shape::new(2, 2, 3, 3));
        let b = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.5, -1.5]).unwrap();
        let y = conv_direct_oracle(&x, &w, Some(&b), &ConvSpec::new(2, 2, 3)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(y.data(), &[0.5, -1.5]);
    }

    #[test]
    fn dct_of_constant() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 2.0);
        let d = dct_direct_oracle(&x);
        assert!((d.at([0, 0, 0, 0]) - 32.0).abs() < 1e-12);
        assert!(d.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
