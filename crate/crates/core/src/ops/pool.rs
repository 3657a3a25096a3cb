use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Reduction across channels; output `(N,1,H,W)`. For `Max`, also returns the
/// winning channel per position (first on ties).
pub(crate) fn channel_pool_raw<T: Scalar>(x: &Tensor<T>, mode: PoolMode) -> (Tensor<T>, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut out = vec![T::zero(); n * plane];
    let mut arg = Vec::new();
    let xd = x.data();
    match mode {
        PoolMode::Avg => {
            let inv = T::one() / T::from_usize(c).unwrap();
            for b in 0..n {
                let o = &mut out[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let p = &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    for (acc, &v) in o.iter_mut().zip(p) {
                        *acc += v;
                    }
                }
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
        PoolMode::Max => {
            arg = vec![0usize; n * plane];
            for b in 0..n {
                let o = &mut out[b * plane..(b + 1) * plane];
                let a = &mut arg[b * plane..(b + 1) * plane];
                o.copy_from_slice(&xd[b * c * plane..(b * c + 1) * plane]);
                for ch in 1..c {
                    let p = &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    for i in 0..plane {
                        if p[i] > o[i] {
                            o[i] = p[i];
                            a[i] = ch;
                        }
                    }
                }
            }
        }
    }
    (Tensor::from_vec(Shape::new(n, 1, h, w), out).unwrap(), arg)
}

pub fn channel_pool<T: Scalar>(x: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    if x.shape().c() == 0 {
        return Err(invalid("channel_pool needs at least one channel"));
    }
    x.ensure_finite("channel_pool")?;
    Ok(channel_pool_raw(x, mode).0)
}

/// Spatial mean per channel, output `(N,C,1,1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if h * w == 0 {
        return Err(invalid("global_avg_pool over an empty plane"));
    }
    x.ensure_finite("global_avg_pool")?;
    let inv = T::one() / T::from_usize(h * w).unwrap();
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            out.push(x.plane(b, ch).iter().copied().sum::<T>() * inv);
        }
    }
    Tensor::from_vec(Shape::new(n, c, 1, 1), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input() {
        let x = Tensor::<f64>::full(Shape::new(2, 3, 4, 5), 1.75);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let y = channel_pool(&x, mode).unwrap();
            assert_eq!(y.shape(), Shape::new(2, 1, 4, 5));
            assert!(y.data().iter().all(|&v| v == 1.75));
        }
        let g = global_avg_pool(&x).unwrap();
        assert_eq!(g.shape(), Shape::new(2, 3, 1, 1));
        assert!(g.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn two_channel_example() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 3.0]).unwrap();
        assert_eq!(channel_pool(&x, PoolMode::Avg).unwrap().data(), &[2.0]);
        assert_eq!(channel_pool(&x, PoolMode::Max).unwrap().data(), &[3.0]);
    }

    #[test]
    fn gap_small_plane() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }
}
