use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = LossWeights { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) {
            return Err(invalid(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(invalid("loss weights cannot both be zero"));
        }
        Ok(())
    }
}

fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    a.expect_shape(b.shape(), "rc_loss")?;
    let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(s / T::from_usize(a.len().max(1)).unwrap())
}

/// Average of the two per-modality mean squared reconstruction errors.
pub fn rc_loss<T: Scalar>(f_i: &Tensor<T>, f_v: &Tensor<T>, image_i: &Tensor<T>, image_v: &Tensor<T>) -> Result<T> {
    let half: T = lit(0.5);
    Ok(half * mse(f_i, image_i)? + half * mse(f_v, image_v)?)
}

pub fn rc_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    f_i: NodeId,
    f_v: NodeId,
    image_i: NodeId,
    image_v: NodeId,
) -> Result<NodeId> {
    let li = g.mse(f_i, image_i)?;
    let lv = g.mse(f_v, image_v)?;
    let li = g.scale(li, lit(0.5));
    let lv = g.scale(lv, lit(0.5));
    g.add(li, lv)
}

pub fn total_loss<T: Scalar>(l_rc: T, l_det: T, w: LossWeights) -> Result<T> {
    w.validate()?;
    if !l_rc.is_finite() || !l_det.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok(lit::<T>(w.lambda1) * l_rc + lit::<T>(w.lambda2) * l_det)
}

/// Recorded weighted sum; a missing detection term counts as zero.
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    l_rc: NodeId,
    l_det: Option<NodeId>,
    w: LossWeights,
) -> Result<NodeId> {
    w.validate()?;
    for n in std::iter::once(l_rc).chain(l_det) {
        if !g.value(n).is_finite() {
            return Err(Error::NonFinite("total_loss"));
        }
    }
    let rc = g.scale(l_rc, lit(w.lambda1));
    match l_det {
        Some(d) => {
            let d = g.scale(d, lit(w.lambda2));
            g.add(rc, d)
        }
        None => Ok(rc),
    }
}
