use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Quantities kept by a training-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub xhat: Tensor<T>,
}

fn check_len<T: Scalar>(t: &Tensor<T>, c: usize, dim: &'static str) -> Result<()> {
    if t.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            dim,
            expected: c,
            actual: t.len(),
        });
    }
    Ok(())
}

pub(crate) fn batch_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> BatchStats<T> {
    let [n, c, h, w] = x.dims();
    let count = T::from_usize(n * h * w).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x.plane(b, ch).iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            v += x.plane(b, ch).iter().fold(T::zero(), |a, &e| a + (e - m) * (e - m));
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let plane = h * w;
    let d = xhat.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for e in &mut d[base..base + plane] {
                *e = (*e - mean[ch]) * inv_std[ch];
            }
        }
    }
    BatchStats {
        mean,
        var,
        inv_std,
        xhat,
    }
}

/// `gamma * xhat + beta` per channel.
pub(crate) fn affine<T: Scalar>(xhat: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let [n, c, h, w] = xhat.dims();
    let plane = h * w;
    let mut out = xhat.clone();
    let d = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for e in &mut d[base..base + plane] {
                *e = gamma[ch] * *e + beta[ch];
            }
        }
    }
    out
}

/// Batch normalization over `(N,H,W)` per channel.
///
/// In train mode the running statistics are updated in place with
/// `running = (1 - momentum) * running + momentum * batch`, using the unbiased
/// batch variance for the running estimate.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
    momentum: T,
    eps: T,
) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(invalid("batchnorm eps must be positive"));
    }
    let c = x.shape().c();
    check_len(gamma, c, "gamma")?;
    check_len(beta, c, "beta")?;
    check_len(running_mean, c, "running mean")?;
    check_len(running_var, c, "running var")?;
    x.ensure_finite("batchnorm")?;
    match mode {
        Mode::Train => {
            let stats = batch_stats(x, eps);
            let count = x.shape().n() * x.shape().plane();
            update_running(running_mean, running_var, &stats, count, momentum);
            Ok(affine(&stats.xhat, gamma.data(), beta.data()))
        }
        Mode::Eval => Ok(eval_normalize(
            x,
            gamma.data(),
            beta.data(),
            running_mean.data(),
            running_var.data(),
            eps,
        )),
    }
}

pub(crate) fn update_running<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BatchStats<T>,
    count: usize,
    momentum: T,
) {
    let unbias = if count > 1 {
        T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
    } else {
        T::one()
    };
    let keep = T::one() - momentum;
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + momentum * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + momentum * v * unbias;
    }
}

pub(crate) fn eval_normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Tensor<T> {
    let scale: Vec<T> = gamma
        .iter()
        .zip(var)
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let shift: Vec<T> = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    affine(x, &scale, &shift)
}

/// Per-channel shape used for all normalization parameters.
pub fn channel_shape(c: usize) -> Shape {
    Shape::new(1, c, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(c: usize) -> [Tensor<f64>; 4] {
        let s = channel_shape(c);
        [Tensor::ones(s), Tensor::zeros(s), Tensor::zeros(s), Tensor::ones(s)]
    }

    #[test]
    fn eval_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 4), -2.0, 2.0, &mut rng);
        let [g, b, mut m, mut v] = params(3);
        let y = batchnorm(&x, &g, &b, &mut m, &mut v, Mode::Eval, 0.1, 1e-5).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() <= 1e-5);
    }

    #[test]
    fn train_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::rand_uniform(Shape::new(3, 2, 5, 5), 1.0, 4.0, &mut rng);
        let [g, b, mut m, mut v] = params(2);
        let y = batchnorm(&x, &g, &b, &mut m, &mut v, Mode::Train, 0.1, 1e-12).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-5);
        }
        // running stats moved toward the batch mean (about 2.5)
        assert!(m.data().iter().all(|&r| r > 0.2 && r < 0.3));
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        let [g, b, mut m, mut v] = params(2);
        assert!(batchnorm(&x, &g, &b, &mut m, &mut v, Mode::Eval, 0.1, 0.0).is_err());
    }
}
