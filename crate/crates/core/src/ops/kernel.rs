//! Placement of a dilated kernel inside a larger square footprint.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `k + (k-1)(d-1)`.
pub fn effective_size(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation.max(1) - 1)
}

/// Inserts `dilation - 1` zeros between taps and zero-pads symmetrically to `rf x rf`.
pub fn embed_kernel<T: Scalar>(w: &Tensor<T>, dilation: usize, rf: usize) -> Result<Tensor<T>> {
    let [o, i, kh, kw] = w.dims();
    if kh != kw {
        return Err(Error::ShapeMismatch {
            op: "embed_kernel",
            dim: "kernel width",
            expected: kh,
            actual: kw,
        });
    }
    let eff = effective_size(kh, dilation);
    if eff > rf || !(rf - eff).is_multiple_of(2) {
        return Err(Error::InvalidBranch {
            kernel: kh,
            dilation,
            effective: eff,
            rf,
        });
    }
    let off = (rf - eff) / 2;
    let mut out = Tensor::zeros(Shape::new(o, i, rf, rf));
    for a in 0..o {
        for b in 0..i {
            for y in 0..kh {
                for x in 0..kw {
                    out.set([a, b, off + y * dilation, off + x * dilation], w.at([a, b, y, x]));
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`embed_kernel`]: gathers the taps back out of the footprint.
pub fn extract_kernel<T: Scalar>(g: &Tensor<T>, kernel: usize, dilation: usize) -> Tensor<T> {
    let [o, i, rf, _] = g.dims();
    let off = (rf - effective_size(kernel, dilation)) / 2;
    Tensor::from_fn(Shape::new(o, i, kernel, kernel), |[a, b, y, x]| {
        g.at([a, b, off + y * dilation, off + x * dilation])
    })
}
