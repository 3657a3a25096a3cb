//! High-frequency unit: per-group DCT filtering followed by spatial attention.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::nn::Conv2d;
use crate::ops::{ConvSpec, PoolMode};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::{BasisCache, FrequencySet, Normalization};
use crate::tensor::{Shape, Tensor};

pub const ATTENTION_KERNEL: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct HfuConfig {
    pub channels: usize,
    pub group_count: usize,
    pub frequencies: FrequencySet,
    pub attention_kernel: usize,
    pub normalization: Normalization,
}

impl HfuConfig {
    pub fn new(channels: usize, frequencies: FrequencySet) -> Result<Self> {
        let cfg = HfuConfig {
            channels,
            group_count: frequencies.len(),
            frequencies,
            attention_kernel: ATTENTION_KERNEL,
            normalization: Normalization::Unnormalized,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_count == 0 || !self.channels.is_multiple_of(self.group_count) {
            return Err(invalid(format!(
                "HFU channels {} not divisible by group count {}",
                self.channels, self.group_count
            )));
        }
        if self.frequencies.len() != self.group_count {
            return Err(invalid(format!(
                "HFU has {} groups but {} frequencies",
                self.group_count,
                self.frequencies.len()
            )));
        }
        if self.attention_kernel.is_multiple_of(2) {
            return Err(invalid("attention kernel must be odd"));
        }
        Ok(())
    }

    pub fn attention_spec(&self) -> ConvSpec {
        ConvSpec::new(2, 1, self.attention_kernel)
            .padding(self.attention_kernel / 2)
            .bias(false)
    }
}

/// Intermediate nodes of one HFU pass.
#[derive(Debug, Clone, Copy)]
pub struct HfuNodes {
    /// Input after per-group basis multiplication.
    pub filtered: NodeId,
    /// Spatial attention map, `(N,1,H,W)`.
    pub attention: NodeId,
    pub output: NodeId,
}

#[derive(Debug)]
pub struct Hfu {
    pub cfg: HfuConfig,
    pub attn: Conv2d,
    cache: BasisCache,
    calls: AtomicUsize,
}

impl Hfu {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: HfuConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let attn = Conv2d::new(store, &format!("{name}.attn"), cfg.attention_spec(), rng)?;
        Ok(Hfu {
            cfg,
            attn,
            cache: BasisCache::new(),
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// `(1, C, h, w)` tensor whose channel `c` holds the basis plane of its group.
    pub fn filter_planes<T: Scalar>(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let per_group = self.cfg.channels / self.cfg.group_count;
        let mut planes = Vec::with_capacity(self.cfg.group_count);
        for &(u, v) in &self.cfg.frequencies.indices {
            if u >= h || v >= w {
                return Err(Error::GridMismatch { u, v, h, w });
            }
            planes.push(self.cache.get::<T>(u, v, h, w, self.cfg.normalization)?);
        }
        let mut data = Vec::with_capacity(self.cfg.channels * h * w);
        for c in 0..self.cfg.channels {
            data.extend_from_slice(&planes[c / per_group].values);
        }
        Tensor::from_vec(Shape::new(1, self.cfg.channels, h, w), data)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        Ok(self.forward_nodes(g, store, x)?.output)
    }

    pub fn forward_nodes<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> Result<HfuNodes> {
        let s = g.shape(x);
        if s.c() != self.cfg.channels {
            return Err(Error::ShapeMismatch {
                op: "hfu",
                dim: "channels",
                expected: self.cfg.channels,
                actual: s.c(),
            });
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let planes = g.input(self.filter_planes(s.h(), s.w())?)?;
        let filtered = g.mul(x, planes)?;
        let avg = g.channel_pool(filtered, PoolMode::Avg)?;
        let max = g.channel_pool(filtered, PoolMode::Max)?;
        let pooled = g.concat(&[avg, max])?;
        let logits = self.attn.forward(g, store, pooled)?;
        let attention = g.sigmoid(logits);
        let output = g.mul(filtered, attention)?;
        Ok(HfuNodes {
            filtered,
            attention,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::spectral::{dct_basis, select_frequencies, FrequencyPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(channels: usize, indices: Vec<(usize, usize)>) -> (ParamStore<f64>, Hfu) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let set = FrequencySet {
            indices,
            grid: (8, 8),
            policy: FrequencyPolicy::ZigzagSkipDc,
        };
        let cfg = HfuConfig::new(channels, set).unwrap();
        let hfu = Hfu::new(&mut store, "hfu", cfg, &mut rng).unwrap();
        (store, hfu)
    }

    #[test]
    fn dc_only_bases_filter_nothing() {
        let (store, hfu) = build(8, vec![(0, 0); 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 8, 8, 8), -1.0, 1.0, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x.clone()).unwrap();
        let nodes = hfu.forward_nodes(&mut g, &store, xn).unwrap();
        assert_eq!(g.value(nodes.filtered), &x);
        let att = g.value(nodes.attention);
        assert_eq!(att.shape(), Shape::new(2, 1, 8, 8));
        let expected = Tensor::from_fn(x.shape(), |[n, c, i, j]| x.at([n, c, i, j]) * att.at([n, 0, i, j]));
        assert_eq!(g.value(nodes.output), &expected);
    }

    #[test]
    fn attention_bounded_and_shrinks() {
        let set = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc).unwrap();
        let (store, hfu) = build(8, set.indices);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 8, 8, 8), -3.0, 3.0, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x).unwrap();
        let nodes = hfu.forward_nodes(&mut g, &store, xn).unwrap();
        assert!(g.value(nodes.attention).data().iter().all(|&a| a > 0.0 && a < 1.0));
        for (o, f) in g.value(nodes.output).data().iter().zip(g.value(nodes.filtered).data()) {
            assert!(o.abs() <= f.abs());
        }
    }

    #[test]
    fn group_isolation_against_reference_loop() {
        let set = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc).unwrap();
        let (u2, v2) = set.indices[2];
        let (store, hfu) = build(8, set.indices);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn(Shape::new(1, 8, 8, 8), |[_, c, _, _]| {
            if c / 2 == 2 {
                rng.gen_range(0.5..1.5)
            } else {
                0.0
            }
        });
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x.clone()).unwrap();
        let nodes = hfu.forward_nodes(&mut g, &store, xn).unwrap();
        let basis = dct_basis::<f64>(u2, v2, 8, 8).unwrap();
        let filtered = g.value(nodes.filtered);
        let out = g.value(nodes.output);
        for c in 0..8 {
            for i in 0..8 {
                for j in 0..8 {
                    let idx = [0, c, i, j];
                    if c / 2 == 2 {
                        let reference = x.at(idx) * basis.values[i * 8 + j];
                        assert!((filtered.at(idx) - reference).abs() < 1e-15);
                    } else {
                        assert_eq!(out.at(idx), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn errors() {
        let set = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc).unwrap();
        assert!(HfuConfig::new(6, set.clone()).is_err());
        let (store, hfu) = build(8, vec![(0, 1), (1, 0), (7, 7), (2, 0)]);
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(Tensor::<f64>::zeros(Shape::new(1, 8, 4, 4))).unwrap();
        assert!(matches!(hfu.forward(&mut g, &store, xn), Err(Error::GridMismatch { .. })));
        let xn = g.input(Tensor::<f64>::zeros(Shape::new(1, 4, 8, 8))).unwrap();
        assert!(hfu.forward(&mut g, &store, xn).is_err());
    }
}
