//! Parameterised layers built on the recorded ops.

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::ops::norm::channel_shape;
use crate::ops::ConvSpec;
use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let ws = spec.weight_shape();
        let rf = spec.kernel_h * spec.kernel_w;
        let fan_in = ws.c() * rf;
        let fan_out = spec.out_channels / spec.groups * rf;
        let weight = store.add_xavier(format!("{name}.weight"), ws, fan_in, fan_out, rng)?;
        let bias = if spec.has_bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(spec.bias_shape()), true)?)
        } else {
            None
        };
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let ws = spec.transpose_weight_shape();
        let rf = spec.kernel_h * spec.kernel_w;
        let fan_in = spec.in_channels / spec.groups * rf;
        let fan_out = ws.c() * rf;
        let weight = store.add_xavier(format!("{name}.weight"), ws, fan_in, fan_out, rng)?;
        let bias = if spec.has_bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(spec.bias_shape()), true)?)
        } else {
            None
        };
        Ok(ConvTranspose2d { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d_transpose(x, w, b, self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.transpose_weight_shape().numel() + if self.spec.has_bias { self.spec.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let s = channel_shape(channels);
        Ok(BatchNorm2d {
            channels,
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(s), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(s), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(s), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(s), false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        g.batchnorm(
            store,
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            lit(self.momentum),
            lit(self.eps),
        )
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// Convolution (no bias), batch normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = spec.bias(false);
        Ok(ConvBnRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), spec, rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), spec.out_channels)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        Ok(g.relu(y))
    }

    pub fn param_count(&self) -> usize {
        self.conv.spec.param_count() + self.bn.param_count()
    }
}
