//! Low-frequency unit: parallel dilated depthwise branches, mergeable into
//! one large depthwise kernel, followed by a channel gate.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::nn::Conv2d;
use crate::ops::{effective_size, embed_kernel, ConvSpec};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_RF: usize = 7;
pub const DEFAULT_BRANCHES: [(usize, usize); 4] = [(7, 1), (3, 1), (3, 2), (3, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BranchSpec {
    pub kernel: usize,
    pub dilation: usize,
}

impl BranchSpec {
    /// Rejects even kernels and any branch whose footprint exceeds `rf`.
    pub fn new(kernel: usize, dilation: usize, rf: usize) -> Result<Self> {
        if kernel == 0 || dilation == 0 {
            return Err(invalid("branch kernel and dilation must be positive"));
        }
        if kernel.is_multiple_of(2) {
            return Err(invalid(format!("branch kernel {kernel} must be odd to stay centered")));
        }
        let effective = effective_size(kernel, dilation);
        if effective > rf {
            return Err(Error::InvalidBranch {
                kernel,
                dilation,
                effective,
                rf,
            });
        }
        Ok(BranchSpec { kernel, dilation })
    }

    pub fn effective(&self) -> usize {
        effective_size(self.kernel, self.dilation)
    }

    pub fn conv_spec(&self, channels: usize) -> ConvSpec {
        ConvSpec::depthwise(channels, self.kernel, self.dilation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfuConfig {
    pub channels: usize,
    pub rf: usize,
    pub branches: Vec<BranchSpec>,
    pub bottleneck: usize,
}

impl LfuConfig {
    /// Bottleneck width is `channels / 4`.
    pub fn new(channels: usize, rf: usize, branches: &[(usize, usize)]) -> Result<Self> {
        if rf.is_multiple_of(2) {
            return Err(invalid(format!("receptive field {rf} must be odd")));
        }
        if branches.is_empty() {
            return Err(invalid("LFU needs at least one branch"));
        }
        let branches = branches
            .iter()
            .map(|&(k, d)| BranchSpec::new(k, d, rf))
            .collect::<Result<Vec<_>>>()?;
        let bottleneck = channels / 4;
        if bottleneck == 0 {
            return Err(invalid(format!(
                "LFU with {channels} channels has an empty channel-mix bottleneck"
            )));
        }
        Ok(LfuConfig {
            channels,
            rf,
            branches,
            bottleneck,
        })
    }

    pub fn default_for(channels: usize) -> Result<Self> {
        Self::new(channels, DEFAULT_RF, &DEFAULT_BRANCHES)
    }

    pub fn merged_spec(&self) -> ConvSpec {
        ConvSpec::depthwise(self.channels, self.rf, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfuMode {
    MultiBranch,
    Merged,
}

/// Single depthwise kernel equivalent to the sum of all branches.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedKernel<T> {
    /// `(channels, 1, rf, rf)`.
    pub weight: Tensor<T>,
    /// `(1, channels, 1, 1)`.
    pub bias: Tensor<T>,
}

/// Dilates and centers every branch kernel in the `rf x rf` footprint and sums them.
pub fn merge_branches<T: Scalar>(
    weights: &[Tensor<T>],
    biases: &[Tensor<T>],
    cfg: &LfuConfig,
) -> Result<MergedKernel<T>> {
    if weights.len() != cfg.branches.len() || biases.len() != cfg.branches.len() {
        return Err(invalid(format!(
            "expected {} branch weights and biases, got {} and {}",
            cfg.branches.len(),
            weights.len(),
            biases.len()
        )));
    }
    let mut weight = Tensor::zeros(cfg.merged_spec().weight_shape());
    let mut bias = Tensor::zeros(Shape::new(1, cfg.channels, 1, 1));
    for ((w, b), br) in weights.iter().zip(biases).zip(&cfg.branches) {
        let expected = br.conv_spec(cfg.channels).weight_shape();
        w.expect_shape(expected, "merge_branches")?;
        weight.add_assign(&embed_kernel(w, br.dilation, cfg.rf)?)?;
        bias.add_assign(&b.clone().reshape(bias.shape())?)?;
    }
    Ok(MergedKernel { weight, bias })
}

#[derive(Debug)]
pub struct Lfu {
    pub cfg: LfuConfig,
    pub branches: Vec<Conv2d>,
    pub down: Conv2d,
    pub up: Conv2d,
    calls: AtomicUsize,
}

impl Lfu {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: LfuConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let branches = cfg
            .branches
            .iter()
            .enumerate()
            .map(|(i, b)| Conv2d::new(store, &format!("{name}.branch{i}"), b.conv_spec(cfg.channels), rng))
            .collect::<Result<Vec<_>>>()?;
        let down = Conv2d::new(
            store,
            &format!("{name}.mix_down"),
            ConvSpec::new(cfg.channels, cfg.bottleneck, 1),
            rng,
        )?;
        let up = Conv2d::new(
            store,
            &format!("{name}.mix_up"),
            ConvSpec::new(cfg.bottleneck, cfg.channels, 1),
            rng,
        )?;
        Ok(Lfu {
            cfg,
            branches,
            down,
            up,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut v: Vec<ConvSpec> = self.branches.iter().map(|b| b.spec).collect();
        v.push(self.down.spec);
        v.push(self.up.spec);
        v
    }

    /// Inference-time fusion of the current branch parameters.
    pub fn merged_kernel<T: Scalar>(&self, store: &ParamStore<T>) -> Result<MergedKernel<T>> {
        let weights: Vec<Tensor<T>> = self.branches.iter().map(|b| store.value(b.weight).clone()).collect();
        let biases: Vec<Tensor<T>> = self
            .branches
            .iter()
            .map(|b| store.value(b.bias.expect("branch convs carry bias")).clone())
            .collect();
        merge_branches(&weights, &biases, &self.cfg)
    }

    fn check_input<T: Scalar>(&self, g: &Graph<T>, x: NodeId) -> Result<()> {
        let c = g.shape(x).c();
        if c != self.cfg.channels {
            return Err(Error::ShapeMismatch {
                op: "lfu",
                dim: "channels",
                expected: self.cfg.channels,
                actual: c,
            });
        }
        Ok(())
    }

    /// Multi-scale spatial features before the channel gate.
    pub fn spatial<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        mode: LfuMode,
    ) -> Result<NodeId> {
        self.check_input(g, x)?;
        match mode {
            LfuMode::MultiBranch => {
                let mut acc: Option<NodeId> = None;
                for b in &self.branches {
                    let y = b.forward(g, store, x)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, y)?,
                        None => y,
                    });
                }
                Ok(acc.expect("at least one branch"))
            }
            LfuMode::Merged => {
                let mut w_acc: Option<NodeId> = None;
                let mut b_acc: Option<NodeId> = None;
                for (conv, br) in self.branches.iter().zip(&self.cfg.branches) {
                    let w = g.param(store, conv.weight);
                    let w = g.embed_kernel(w, br.dilation, self.cfg.rf)?;
                    let b = g.param(store, conv.bias.expect("branch convs carry bias"));
                    w_acc = Some(match w_acc {
                        Some(a) => g.add(a, w)?,
                        None => w,
                    });
                    b_acc = Some(match b_acc {
                        Some(a) => g.add(a, b)?,
                        None => b,
                    });
                }
                g.conv2d(x, w_acc.unwrap(), b_acc, self.cfg.merged_spec())
            }
        }
    }

    /// `x * sigmoid(up(relu(down(gap(x)))))`.
    pub fn channel_mix<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let pooled = g.global_avg_pool(x)?;
        let d = self.down.forward(g, store, pooled)?;
        let d = g.relu(d);
        let u = self.up.forward(g, store, d)?;
        let gate = g.sigmoid(u);
        g.mul(x, gate)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        mode: LfuMode,
    ) -> Result<NodeId> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let s = self.spatial(g, store, x, mode)?;
        self.channel_mix(g, store, s)
    }

    /// Forward with an externally supplied (fixed) merged kernel.
    pub fn forward_with_kernel<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        kernel: &MergedKernel<T>,
    ) -> Result<NodeId> {
        self.check_input(g, x)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let w = g.input(kernel.weight.clone())?;
        let b = g.input(kernel.bias.clone())?;
        let s = g.conv2d(x, w, Some(b), self.cfg.merged_spec())?;
        self.channel_mix(g, store, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_branches_accepted() {
        let cfg = LfuConfig::default_for(16).unwrap();
        let eff: Vec<usize> = cfg.branches.iter().map(|b| b.effective()).collect();
        assert_eq!(eff, vec![7, 3, 5, 7]);
        assert_eq!(cfg.bottleneck, 4);
    }

    #[test]
    fn violating_branch_rejected_at_construction() {
        match LfuConfig::new(16, 7, &[(3, 4)]) {
            Err(Error::InvalidBranch {
                kernel: 3,
                dilation: 4,
                effective: 9,
                rf: 7,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(LfuConfig::new(16, 7, &[(4, 1)]).is_err());
        assert!(LfuConfig::new(3, 7, &[(3, 1)]).is_err());
    }

    use crate::ops::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized<T: Scalar>(channels: usize, seed: u64) -> (ParamStore<T>, Lfu) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lfu = Lfu::new(&mut store, "lfu", LfuConfig::default_for(channels).unwrap(), &mut rng).unwrap();
        for id in store.trainable_ids() {
            let s = store.value(id).shape();
            store.set_value(id, Tensor::rand_uniform(s, -0.5, 0.5, &mut rng)).unwrap();
        }
        (store, lfu)
    }

    fn run<T: Scalar>(lfu: &Lfu, store: &ParamStore<T>, x: &Tensor<T>, mode: LfuMode) -> Tensor<T> {
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x.clone()).unwrap();
        let y = lfu.forward(&mut g, store, xn, mode).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn dilated_kernel_has_zero_rows_and_columns() {
        let cfg = LfuConfig::new(4, 5, &[(3, 2)]).unwrap();
        let w = Tensor::<f64>::ones(Shape::new(4, 1, 3, 3));
        let b = Tensor::<f64>::zeros(Shape::new(1, 4, 1, 1));
        let m = merge_branches(&[w], &[b], &cfg).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let tap = i % 2 == 0 && j % 2 == 0;
                assert_eq!(m.weight.at([0, 0, i, j]), if tap { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_branch_merges_to_itself() {
        let cfg = LfuConfig::new(4, 7, &[(7, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::<f64>::rand_uniform(Shape::new(4, 1, 7, 7), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, &mut rng);
        let m = merge_branches(std::slice::from_ref(&w), std::slice::from_ref(&b), &cfg).unwrap();
        assert_eq!(m.weight, w);
        assert_eq!(m.bias, b);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (mut store, lfu) = randomized::<f64>(8, 1);
        for b in &lfu.branches {
            let id = b.bias.unwrap();
            let s = store.value(id).shape();
            store.set_value(id, Tensor::zeros(s)).unwrap();
        }
        let x = Tensor::zeros(Shape::new(1, 8, 9, 9));
        for mode in [LfuMode::MultiBranch, LfuMode::Merged] {
            assert_eq!(run(&lfu, &store, &x, mode).max_abs(), 0.0);
        }
    }

    #[test]
    fn merged_matches_multi_branch_f64() {
        for seed in 0..20 {
            let (store, lfu) = randomized::<f64>(16, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = Tensor::rand_uniform(Shape::new(1, 16, 64, 64), -1.0, 1.0, &mut rng);
            let a = run(&lfu, &store, &x, LfuMode::MultiBranch);
            let b = run(&lfu, &store, &x, LfuMode::Merged);
            let mut g = Graph::new(Mode::Eval);
            let xn = g.input(x).unwrap();
            let k = lfu.merged_kernel(&store).unwrap();
            let c = lfu.forward_with_kernel(&mut g, &store, xn, &k).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-10, "seed {seed}");
            assert!(a.max_abs_diff(g.value(c)).unwrap() <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn merged_matches_multi_branch_f32_and_argmax() {
        for seed in 0..20 {
            let (store, lfu) = randomized::<f32>(16, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let x = Tensor::rand_uniform(Shape::new(1, 16, 64, 64), -1.0, 1.0, &mut rng);
            let a = run(&lfu, &store, &x, LfuMode::MultiBranch);
            let b = run(&lfu, &store, &x, LfuMode::Merged);
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-4, "seed {seed}");
            let argmax = |t: &Tensor<f32>| {
                (0..16)
                    .map(|c| {
                        let p = t.plane(0, c);
                        (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap()
                    })
                    .collect::<Vec<_>>()
            };
            assert_eq!(argmax(&a), argmax(&b), "seed {seed}");
        }
    }

    #[test]
    fn calls_are_counted() {
        let (store, lfu) = randomized::<f64>(4, 0);
        let x = Tensor::zeros(Shape::new(1, 4, 5, 5));
        run(&lfu, &store, &x, LfuMode::Merged);
        run(&lfu, &store, &x, LfuMode::MultiBranch);
        assert_eq!(lfu.calls(), 2);
    }
}
