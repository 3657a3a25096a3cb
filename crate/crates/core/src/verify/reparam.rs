use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::Result;
use crate::fde::{Lfu, LfuConfig, LfuMode};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

use super::report::CheckReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamOptions {
    /// Spatial extent of the random input.
    pub extent: usize,
    /// Added to the centre tap of channel 0 of the merged kernel.
    pub perturb: Option<f64>,
}

impl Default for ReparamOptions {
    fn default() -> Self {
        ReparamOptions {
            extent: 64,
            perturb: None,
        }
    }
}

/// Random LFU parameters with every tensor drawn from `U(-0.5, 0.5)`.
pub fn random_lfu<T: Scalar>(cfg: &LfuConfig, seed: u64) -> Result<(ParamStore<T>, Lfu)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lfu = Lfu::new(&mut store, "lfu", cfg.clone(), &mut rng)?;
    for id in store.trainable_ids() {
        let s = store.value(id).shape();
        store.set_value(id, Tensor::rand_uniform(s, -0.5, 0.5, &mut rng))?;
    }
    Ok((store, lfu))
}

/// Max abs difference between the multi-branch and merged LFU outputs over `seeds`.
pub fn reparam_equivalence_check<T: Scalar>(
    cfg: &LfuConfig,
    seeds: &[u64],
    tolerance: f64,
    opts: ReparamOptions,
) -> CheckReport {
    let started = Instant::now();
    let name = format!("reparam/{}/{}", T::DTYPE, if opts.perturb.is_some() { "perturbed" } else { "exact" });
    let first = seeds.first().copied().unwrap_or(0);
    let mut worst = 0.0_f64;
    for &seed in seeds {
        let run = || -> Result<f64> {
            let (store, lfu) = random_lfu::<T>(cfg, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let x = Tensor::<T>::rand_uniform(Shape::new(1, cfg.channels, opts.extent, opts.extent), -1.0, 1.0, &mut rng);
            let mut kernel = lfu.merged_kernel(&store)?;
            if let Some(delta) = opts.perturb {
                let c = cfg.rf / 2;
                let v = kernel.weight.at([0, 0, c, c]);
                kernel.weight.set([0, 0, c, c], v + lit::<T>(delta));
            }
            let mut g = Graph::new(Mode::Eval);
            let xn = g.input(x)?;
            let multi = lfu.forward(&mut g, &store, xn, LfuMode::MultiBranch)?;
            let merged = lfu.forward_with_kernel(&mut g, &store, xn, &kernel)?;
            Ok(g.value(multi).max_abs_diff(g.value(merged))?.as_f64())
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return CheckReport::failed(name, seed, started, e.to_string()),
        }
    }
    CheckReport::new(name, worst, tolerance, first, started).with_detail(format!("{} seeds", seeds.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_branch_is_exact() {
        let cfg = LfuConfig::new(4, 7, &[(7, 1)]).unwrap();
        let r = reparam_equivalence_check::<f64>(&cfg, &[0, 1, 2], 0.0, ReparamOptions {
            extent: 12,
            perturb: None,
        });
        assert!(r.passed());
        assert_eq!(r.metric, 0.0);
    }

    #[test]
    fn perturbed_tap_is_caught() {
        let cfg = LfuConfig::default_for(16).unwrap();
        let r = reparam_equivalence_check::<f64>(&cfg, &[3], 1e-10, ReparamOptions {
            extent: 16,
            perturb: Some(1e-2),
        });
        assert!(!r.passed());
        assert!(r.metric >= 1e-3, "{r}");
    }
}
