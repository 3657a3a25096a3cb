//! Cross-Reconstruction Unit: rebuilds one modality's image from its own
//! (masked) features and the other modality's features.

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d};
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const SE_REDUCTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Infrared,
    Visible,
}

impl Target {
    pub fn channels(self) -> usize {
        match self {
            Target::Infrared => 1,
            Target::Visible => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Target::Infrared => "ir",
            Target::Visible => "vis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CruConfig {
    pub feature_channels: usize,
    /// Token width of the attention projections.
    pub head_width: usize,
    /// One transposed convolution per entry.
    pub upsample_strides: Vec<usize>,
    pub target: Target,
}

impl CruConfig {
    /// Enough stride-2 stages to undo `cumulative_stride`, which must be a power of two.
    pub fn for_stride(feature_channels: usize, cumulative_stride: usize, target: Target) -> Result<Self> {
        if !cumulative_stride.is_power_of_two() || cumulative_stride < 2 {
            return Err(invalid(format!(
                "cumulative stride {cumulative_stride} is not a power of two >= 2"
            )));
        }
        let cfg = CruConfig {
            feature_channels,
            head_width: feature_channels,
            upsample_strides: vec![2; cumulative_stride.trailing_zeros() as usize],
            target,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cumulative_stride(&self) -> usize {
        self.upsample_strides.iter().product()
    }

    pub fn out_channels(&self) -> usize {
        self.target.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_channels < 2 || self.head_width == 0 {
            return Err(invalid("CRU needs at least 2 feature channels and a positive head width"));
        }
        if self.upsample_strides.iter().any(|&s| s < 2) {
            return Err(invalid("CRU upsample strides must be >= 2"));
        }
        Ok(())
    }

    /// Channel widths along the upsampling path, input first.
    pub fn upsample_channels(&self) -> Vec<usize> {
        let mut v = vec![self.feature_channels];
        for _ in &self.upsample_strides {
            let last = *v.last().unwrap();
            v.push((last / 2).max(1));
        }
        v
    }
}

/// Single-head cross-attention with 1x1 projections; queries from one tensor,
/// keys and values from the other.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub q: Conv2d,
    pub k: Conv2d,
    pub v: Conv2d,
    pub o: Conv2d,
    pub channels: usize,
    pub head_width: usize,
}

impl CrossAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        head_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let proj = |i, o| ConvSpec::new(i, o, 1);
        Ok(CrossAttention {
            q: Conv2d::new(store, &format!("{name}.q"), proj(channels, head_width), rng)?,
            // a key bias shifts every logit of a query equally, so it is left out
            k: Conv2d::new(store, &format!("{name}.k"), proj(channels, head_width).bias(false), rng)?,
            v: Conv2d::new(store, &format!("{name}.v"), proj(channels, head_width), rng)?,
            o: Conv2d::new(store, &format!("{name}.o"), proj(head_width, channels), rng)?,
            channels,
            head_width,
        })
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        vec![self.q.spec, self.k.spec, self.v.spec, self.o.spec]
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        query: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        let (sq, sc) = (g.shape(query), g.shape(context));
        if sq != sc {
            return Err(Error::Incompatible {
                op: "cross_attention",
                lhs: sq.0,
                rhs: sc.0,
            });
        }
        if sq.c() != self.channels {
            return Err(Error::ShapeMismatch {
                op: "cross_attention",
                dim: "channels",
                expected: self.channels,
                actual: sq.c(),
            });
        }
        let q = self.q.forward(g, store, query)?;
        let k = self.k.forward(g, store, context)?;
        let v = self.v.forward(g, store, context)?;
        let scale = T::one() / T::from_usize(self.head_width).unwrap().sqrt();
        let a = g.attention(q, k, v, scale)?;
        self.o.forward(g, store, a)
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SeGate {
    pub down: Conv2d,
    pub up: Conv2d,
}

impl SeGate {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mid = (channels / SE_REDUCTION).max(1);
        Ok(SeGate {
            down: Conv2d::new(store, &format!("{name}.down"), ConvSpec::new(channels, mid, 1), rng)?,
            up: Conv2d::new(store, &format!("{name}.up"), ConvSpec::new(mid, channels, 1), rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let p = g.global_avg_pool(x)?;
        let d = self.down.forward(g, store, p)?;
        let d = g.relu(d);
        let u = self.up.forward(g, store, d)?;
        let gate = g.sigmoid(u);
        g.mul(x, gate)
    }
}

#[derive(Debug, Clone)]
pub struct Cru {
    pub cfg: CruConfig,
    pub entry: Conv2d,
    pub attention: CrossAttention,
    pub squeeze: Conv2d,
    pub local: Conv2d,
    pub se: SeGate,
    pub upsample: Vec<ConvTranspose2d>,
    pub head_hidden: Conv2d,
    pub head_out: Conv2d,
}

impl Cru {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: CruConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.feature_channels;
        let entry = Conv2d::new(store, &format!("{name}.entry"), ConvSpec::new(c, c, 3).padding(1), rng)?;
        let attention = CrossAttention::new(store, &format!("{name}.attn"), c, cfg.head_width, rng)?;
        let squeeze = Conv2d::new(store, &format!("{name}.squeeze"), ConvSpec::new(2 * c, c, 1), rng)?;
        let local = Conv2d::new(store, &format!("{name}.local"), ConvSpec::new(c, c, 3).padding(1), rng)?;
        let se = SeGate::new(store, &format!("{name}.se"), c, rng)?;
        let widths = cfg.upsample_channels();
        let upsample = cfg
            .upsample_strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let spec = ConvSpec::new(widths[i], widths[i + 1], s).stride(s);
                ConvTranspose2d::new(store, &format!("{name}.up{i}"), spec, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let last = *widths.last().unwrap();
        let head_hidden = Conv2d::new(store, &format!("{name}.head0"), ConvSpec::new(last, last, 1), rng)?;
        let head_out = Conv2d::new(
            store,
            &format!("{name}.head1"),
            ConvSpec::new(last, cfg.out_channels(), 1),
            rng,
        )?;
        Ok(Cru {
            cfg,
            entry,
            attention,
            squeeze,
            local,
            se,
            upsample,
            head_hidden,
            head_out,
        })
    }

    pub fn param_count(&self) -> usize {
        let convs = [&self.entry, &self.squeeze, &self.local, &self.se.down, &self.se.up, &self.head_hidden, &self.head_out];
        convs.iter().map(|c| c.spec.param_count()).sum::<usize>()
            + self.attention.conv_specs().iter().map(|s| s.param_count()).sum::<usize>()
            + self.upsample.iter().map(|u| u.param_count()).sum::<usize>()
    }

    /// Reconstruction of the target image at `image_hw`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_self: NodeId,
        x_other: NodeId,
        image_hw: (usize, usize),
    ) -> Result<NodeId> {
        let x = self.entry.forward(g, store, x_self)?;
        let x = g.relu(x);
        let attn = self.attention.forward(g, store, x, x_other)?;
        let cat = g.concat(&[x, x_other])?;
        let s = self.squeeze.forward(g, store, cat)?;
        let s = self.local.forward(g, store, s)?;
        let s = self.se.forward(g, store, s)?;
        let mut y = g.add(attn, s)?;
        for up in &self.upsample {
            y = up.forward(g, store, y)?;
            y = g.relu(y);
        }
        let y = self.head_hidden.forward(g, store, y)?;
        let y = g.relu(y);
        let y = self.head_out.forward(g, store, y)?;
        let out = g.shape(y);
        if (out.h(), out.w()) != image_hw {
            return Err(invalid(format!(
                "reconstruction is {}x{} but the image is {}x{}",
                out.h(),
                out.w(),
                image_hw.0,
                image_hw.1
            )));
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(store: &mut ParamStore<f64>, conv: &Conv2d) {
        let s = conv.spec.weight_shape();
        let w = Tensor::from_fn(s, |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        store.set_value(conv.weight, w).unwrap();
    }

    #[test]
    fn shapes_for_default_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        for (target, ch) in [(Target::Visible, 3), (Target::Infrared, 1)] {
            let cfg = CruConfig::for_stride(8, 8, target).unwrap();
            let cru = Cru::new(&mut store, &format!("cru_{}", target.tag()), cfg, &mut rng).unwrap();
            let mut g = Graph::new(Mode::Eval);
            let a = g.input(Tensor::rand_uniform(Shape::new(1, 8, 4, 4), -1.0, 1.0, &mut rng)).unwrap();
            let b = g.input(Tensor::rand_uniform(Shape::new(1, 8, 4, 4), -1.0, 1.0, &mut rng)).unwrap();
            let y = cru.forward(&mut g, &store, a, b, (32, 32)).unwrap();
            assert_eq!(g.shape(y), Shape::new(1, ch, 32, 32));
            assert!(cru.forward(&mut g, &store, a, b, (30, 32)).is_err());
        }
        assert!(CruConfig::for_stride(8, 6, Target::Visible).is_err());
    }

    #[test]
    fn identity_projections_average_constant_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let ca = CrossAttention::new(&mut store, "ca", 4, 4, &mut rng).unwrap();
        for conv in [&ca.q, &ca.k, &ca.v, &ca.o] {
            identity(&mut store, conv);
        }
        let t = [0.3, -1.2, 2.0, 0.5];
        let kv = Tensor::from_fn(Shape::new(1, 4, 3, 5), |[_, c, _, _]| t[c]);
        let q = Tensor::rand_uniform(kv.shape(), -1.0, 1.0, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let (qn, kn) = (g.input(q).unwrap(), g.input(kv.clone()).unwrap());
        let y = ca.forward(&mut g, &store, qn, kn).unwrap();
        assert!(g.value(y).max_abs_diff(&kv).unwrap() < 1e-12);
    }

    #[test]
    fn query_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let ca = CrossAttention::new(&mut store, "ca", 3, 3, &mut rng).unwrap();
        let s = Shape::new(1, 3, 2, 4);
        let q = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let kv = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
        let perm = [5usize, 2, 7, 0, 1, 6, 3, 4];
        let permute = |t: &Tensor<f64>| Tensor::from_fn(s, |[n, c, i, j]| {
            let p = perm[i * 4 + j];
            t.at([n, c, p / 4, p % 4])
        });
        let run = |q: Tensor<f64>| {
            let mut g = Graph::new(Mode::Eval);
            let (qn, kn) = (g.input(q).unwrap(), g.input(kv.clone()).unwrap());
            let y = ca.forward(&mut g, &store, qn, kn).unwrap();
            g.value(y).clone()
        };
        let base = run(q.clone());
        let permuted = run(permute(&q));
        assert!(permute(&base).max_abs_diff(&permuted).unwrap() < 1e-12);
    }
}
