//! Cross-modal recoupling of high/low frequency features.
//!
//! Infrared high-frequency features receive the visible ones and visible
//! low-frequency features receive the infrared ones (parameter-free adds);
//! each modality then concatenates `[high, low]` and fuses with a 3x3 conv.

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn check_shapes(xi_h: Shape, xv_h: Shape, xi_l: Shape, xv_l: Shape) -> Result<()> {
    let pair = |a: Shape, b: Shape| {
        if a == b {
            Ok(())
        } else {
            Err(Error::Incompatible {
                op: "css_recouple",
                lhs: a.0,
                rhs: b.0,
            })
        }
    };
    pair(xi_h, xv_h)?;
    pair(xi_l, xv_l)?;
    if xi_h.n() != xi_l.n() || xi_h.h() != xi_l.h() || xi_h.w() != xi_l.w() {
        return Err(Error::Incompatible {
            op: "css_recouple",
            lhs: xi_h.0,
            rhs: xi_l.0,
        });
    }
    Ok(())
}

/// The parameter-free stage: returns the concatenated `[high, low]` inputs of
/// the two fusion convolutions.
pub fn recouple_inputs<T: Scalar>(
    xi_h: &Tensor<T>,
    xv_h: &Tensor<T>,
    xi_l: &Tensor<T>,
    xv_l: &Tensor<T>,
    symmetric: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_shapes(xi_h.shape(), xv_h.shape(), xi_l.shape(), xv_l.shape())?;
    let ih = xi_h.zip_map(xv_h, |a, b| a + b)?;
    let vl = xv_l.zip_map(xi_l, |a, b| a + b)?;
    let (vh, il) = if symmetric {
        (xv_h.zip_map(xi_h, |a, b| a + b)?, xi_l.zip_map(xv_l, |a, b| a + b)?)
    } else {
        (xv_h.clone(), xi_l.clone())
    };
    Ok((
        Tensor::concat_channels(&[&ih, &il])?,
        Tensor::concat_channels(&[&vh, &vl])?,
    ))
}

#[derive(Debug)]
pub struct Css {
    pub fuse_i: Conv2d,
    pub fuse_v: Conv2d,
    pub symmetric: bool,
}

impl Css {
    /// `in_channels` is the width of the `[high, low]` concatenation.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        symmetric: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = ConvSpec::new(in_channels, out_channels, 3).padding(1);
        Ok(Css {
            fuse_i: Conv2d::new(store, &format!("{name}.fuse_ir"), spec, rng)?,
            fuse_v: Conv2d::new(store, &format!("{name}.fuse_vis"), spec, rng)?,
            symmetric,
        })
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        vec![self.fuse_i.spec, self.fuse_v.spec]
    }

    /// Recorded parameter-free stage; returns the two concatenation nodes.
    pub fn taps<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        xi_h: NodeId,
        xv_h: NodeId,
        xi_l: NodeId,
        xv_l: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        check_shapes(g.shape(xi_h), g.shape(xv_h), g.shape(xi_l), g.shape(xv_l))?;
        let ih = g.add(xi_h, xv_h)?;
        let vl = g.add(xv_l, xi_l)?;
        let (vh, il) = if self.symmetric {
            (g.add(xv_h, xi_h)?, g.add(xi_l, xv_l)?)
        } else {
            (xv_h, xi_l)
        };
        Ok((g.concat(&[ih, il])?, g.concat(&[vh, vl])?))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        xi_h: NodeId,
        xv_h: NodeId,
        xi_l: NodeId,
        xv_l: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (cat_i, cat_v) = self.taps(g, xi_h, xv_h, xi_l, xv_l)?;
        let yi = self.fuse_i.forward(g, store, cat_i)?;
        let yv = self.fuse_v.forward(g, store, cat_v)?;
        Ok((yi, yv))
    }
}
