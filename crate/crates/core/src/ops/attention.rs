//! Single-head scaled dot-product attention over spatial tokens.
//!
//! A `(N,C,H,W)` tensor is read as `H*W` tokens of width `C` per batch item.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Row-stochastic attention weights, `N` blocks of `T x T` (query-major).
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, scale: T) -> Result<Vec<T>> {
    q.expect_shape(k.shape(), "attention")?;
    let [n, c, h, w] = q.dims();
    let t = h * w;
    if t == 0 {
        return Err(invalid("attention over zero tokens"));
    }
    let (qd, kd) = (q.data(), k.data());
    let mut probs = vec![T::zero(); n * t * t];
    let mut kt = vec![T::zero(); t * c];
    for b in 0..n {
        let base = b * c * t;
        // token-major copy of the keys
        for ch in 0..c {
            for s in 0..t {
                kt[s * c + ch] = kd[base + ch * t + s];
            }
        }
        let mut qrow = vec![T::zero(); c];
        for i in 0..t {
            for ch in 0..c {
                qrow[ch] = qd[base + ch * t + i];
            }
            let row = &mut probs[(b * t + i) * t..(b * t + i + 1) * t];
            let mut mx = T::neg_infinity();
            for (s, r) in row.iter_mut().enumerate() {
                let kr = &kt[s * c..(s + 1) * c];
                let dot = qrow.iter().zip(kr).fold(T::zero(), |a, (&x, &y)| a + x * y);
                *r = dot * scale;
                mx = mx.max(*r);
            }
            let mut z = T::zero();
            for r in row.iter_mut() {
                *r = (*r - mx).exp();
                z += *r;
            }
            let inv = T::one() / z;
            row.iter_mut().for_each(|r| *r *= inv);
        }
    }
    Ok(probs)
}

/// `out[:, i] = sum_s P[i, s] * v[:, s]`.
pub(crate) fn apply_weights<T: Scalar>(probs: &[T], v: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = v.dims();
    let t = h * w;
    let vd = v.data();
    let mut out = vec![T::zero(); n * c * t];
    for b in 0..n {
        let base = b * c * t;
        for ch in 0..c {
            let vrow = &vd[base + ch * t..base + (ch + 1) * t];
            let orow = &mut out[base + ch * t..base + (ch + 1) * t];
            for (i, o) in orow.iter_mut().enumerate() {
                let p = &probs[(b * t + i) * t..(b * t + i + 1) * t];
                *o = p.iter().zip(vrow).fold(T::zero(), |a, (&x, &y)| a + x * y);
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, h, w), out).unwrap()
}

/// Gradients of the attention output with respect to `(q, k, v)`.
pub(crate) fn attention_backward<T: Scalar>(
    probs: &[T],
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gout: &Tensor<T>,
    scale: T,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = q.dims();
    let t = h * w;
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), gout.data());
    let mut gq = vec![T::zero(); n * c * t];
    let mut gk = vec![T::zero(); n * c * t];
    let mut gv = vec![T::zero(); n * c * t];
    let mut dlog = vec![T::zero(); t * t];
    for b in 0..n {
        let base = b * c * t;
        let p = &probs[b * t * t..(b + 1) * t * t];
        // dP[i,s] = <gout_i, v_s>
        dlog.iter_mut().for_each(|x| *x = T::zero());
        for ch in 0..c {
            let grow = &gd[base + ch * t..base + (ch + 1) * t];
            let vrow = &vd[base + ch * t..base + (ch + 1) * t];
            for i in 0..t {
                let gi = grow[i];
                let drow = &mut dlog[i * t..(i + 1) * t];
                for (dv, &vs) in drow.iter_mut().zip(vrow) {
                    *dv += gi * vs;
                }
            }
            // gv[ch, s] = sum_i P[i,s] gout[ch,i]
            let gvrow = &mut gv[base + ch * t..base + (ch + 1) * t];
            for i in 0..t {
                let gi = grow[i];
                let prow = &p[i * t..(i + 1) * t];
                for (o, &ps) in gvrow.iter_mut().zip(prow) {
                    *o += ps * gi;
                }
            }
        }
        // softmax backward, folded with the logit scale
        for i in 0..t {
            let prow = &p[i * t..(i + 1) * t];
            let drow = &mut dlog[i * t..(i + 1) * t];
            let dot = prow.iter().zip(drow.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
            for (dv, &ps) in drow.iter_mut().zip(prow) {
                *dv = ps * (*dv - dot) * scale;
            }
        }
        for ch in 0..c {
            let qrow = &qd[base + ch * t..base + (ch + 1) * t];
            let krow = &kd[base + ch * t..base + (ch + 1) * t];
            for i in 0..t {
                let drow = &dlog[i * t..(i + 1) * t];
                gq[base + ch * t + i] = drow.iter().zip(krow).fold(T::zero(), |a, (&x, &y)| a + x * y);
                let qi = qrow[i];
                let gkrow = &mut gk[base + ch * t..base + (ch + 1) * t];
                for (o, &dv) in gkrow.iter_mut().zip(drow) {
                    *o += dv * qi;
                }
            }
        }
    }
    let s = q.shape();
    (
        Tensor::from_vec(s, gq).unwrap(),
        Tensor::from_vec(s, gk).unwrap(),
        Tensor::from_vec(s, gv).unwrap(),
    )
}

/// `softmax(q^T k * scale) v` over spatial tokens; all three share one shape.
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    q.expect_shape(v.shape(), "attention")?;
    let probs = attention_weights(q, k, scale)?;
    Ok(apply_weights(&probs, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = Shape::new(2, 4, 3, 3);
        let q = Tensor::<f64>::rand_uniform(s, -2.0, 2.0, &mut rng);
        let k = Tensor::<f64>::rand_uniform(s, -2.0, 2.0, &mut rng);
        let p = attention_weights(&q, &k, 0.5).unwrap();
        for row in p.chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_values_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Shape::new(1, 3, 2, 2);
        let q = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let v = Tensor::from_fn(s, |[_, c, _, _]| c as f64 + 0.5);
        let out = attention(&q, &k, &v, 1.0).unwrap();
        assert!(out.max_abs_diff(&v).unwrap() <= 1e-12);
    }

    #[test]
    fn shifting_every_key_logit_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Shape::new(1, 4, 3, 3);
        let q = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let shift = [0.7, -2.0, 1.5, 3.0];
        // adding one vector to every key adds q_i . shift to the whole row i
        let k2 = Tensor::from_fn(s, |[n, c, i, j]| k.at([n, c, i, j]) + shift[c]);
        let a = attention_weights(&q, &k, 0.5).unwrap();
        let b = attention_weights(&q, &k2, 0.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}
