//! Central finite differences against reverse-mode gradients.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::ops::Mode;
use crate::params::ParamStore;

use super::report::CheckReport;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const SAMPLES_PER_TENSOR: usize = 64;
pub const DENOMINATOR_FLOOR: f64 = 1e-8;
/// RMS gradient the fragment output is rescaled to before checking.
pub const GRADIENT_RMS: f64 = 1e-6;

type ForwardFn = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>>;

/// A self-contained scalar-valued computation over its own parameters.
pub struct Fragment {
    pub name: String,
    pub store: ParamStore<f64>,
    pub mode: Mode,
    /// Only parameters whose name starts with this are checked.
    pub only: Option<String>,
    /// Multiplies the fragment output.
    pub output_scale: f64,
    forward: ForwardFn,
}

impl std::fmt::Debug for Fragment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fragment")
            .field("name", &self.name)
            .field("params", &self.store.len())
            .finish()
    }
}

impl Fragment {
    pub fn new(
        name: impl Into<String>,
        store: ParamStore<f64>,
        mode: Mode,
        forward: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId> + 'static,
    ) -> Self {
        Fragment {
            name: name.into(),
            store,
            mode,
            only: None,
            output_scale: 1.0,
            forward: Box::new(forward),
        }
    }

    pub fn only(mut self, prefix: impl Into<String>) -> Self {
        self.only = Some(prefix.into());
        self
    }

    fn checked_ids(&self) -> Vec<crate::params::ParamId> {
        let keep = |n: &str| self.only.as_deref().is_none_or(|p| n.starts_with(p));
        self.store
            .trainable_ids()
            .into_iter()
            .filter(|&id| keep(&self.store.get(id).name))
            .collect()
    }

    fn record(&self, g: &mut Graph<f64>) -> Result<NodeId> {
        let out = (self.forward)(g, &self.store)?;
        if self.output_scale == 1.0 {
            Ok(out)
        } else {
            Ok(g.scale(out, self.output_scale))
        }
    }

    pub fn eval(&self) -> Result<f64> {
        let mut g = Graph::new(self.mode);
        let out = self.record(&mut g)?;
        Ok(g.value(out).data()[0])
    }

    /// Loss value, with reverse-mode gradients left in the store.
    pub fn gradients(&mut self) -> Result<f64> {
        self.store.zero_grads();
        let mut g = Graph::new(self.mode);
        let out = self.record(&mut g)?;
        g.backward(out, &mut self.store)?;
        Ok(g.value(out).data()[0])
    }

    /// Rescales the output so the checked gradients have RMS `target`.
    pub fn normalize(&mut self, target: f64) -> Result<()> {
        self.output_scale = 1.0;
        self.gradients()?;
        let (mut sq, mut n) = (0.0, 0usize);
        for id in self.checked_ids() {
            sq += self.store.grad(id).data().iter().map(|v| v * v).sum::<f64>();
            n += self.store.grad(id).len();
        }
        let rms = (sq / n.max(1) as f64).sqrt();
        if rms > 0.0 && rms.is_finite() {
            self.output_scale = target / rms;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
    /// Output rescaling target for the RMS gradient; `None` checks the raw output.
    pub gradient_rms: Option<f64>,
    /// Multiplies the analytic gradient before comparison; anything but 1
    /// is a deliberate fault.
    pub grad_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            samples: SAMPLES_PER_TENSOR,
            seed: 0,
            gradient_rms: Some(GRADIENT_RMS),
            grad_scale: 1.0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Max relative error over a seeded sample of coordinates of every trainable tensor.
pub fn finite_diff_check(fragment: &mut Fragment, opts: GradCheckOptions) -> CheckReport {
    let started = Instant::now();
    let name = format!("gradcheck/{}", fragment.name);
    if let Some(target) = opts.gradient_rms {
        if let Err(e) = fragment.normalize(target) {
            return CheckReport::failed(name, opts.seed, started, e.to_string());
        }
    }
    if let Err(e) = fragment.gradients() {
        return CheckReport::failed(name, opts.seed, started, e.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0_f64;
    let mut worst_at = String::new();
    let mut coords = 0usize;
    if fragment.checked_ids().is_empty() {
        return CheckReport::failed(name, opts.seed, started, "no parameters selected");
    }
    for id in fragment.checked_ids() {
        let len = fragment.store.value(id).len();
        let picks = sample(&mut rng, len, opts.samples.min(len)).into_vec();
        let analytic: Vec<f64> = picks
            .iter()
            .map(|&k| fragment.store.grad(id).data()[k] * opts.grad_scale)
            .collect();
        for (&k, &a) in picks.iter().zip(&analytic) {
            let orig = fragment.store.value(id).data()[k];
            fragment.store.value_mut(id).data_mut()[k] = orig + opts.step;
            let plus = fragment.eval();
            fragment.store.value_mut(id).data_mut()[k] = orig - opts.step;
            let minus = fragment.eval();
            fragment.store.value_mut(id).data_mut()[k] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                _ => {
                    let pname = fragment.store.get(id).name.clone();
                    return CheckReport::failed(name, opts.seed, started, format!("non-finite perturbation at {pname}[{k}]"));
                }
            };
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(a, numeric);
            coords += 1;
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_at = format!("{}[{k}] analytic={a:.6e} numeric={numeric:.6e}", fragment.store.get(id).name);
            }
        }
    }
    CheckReport::new(name, worst, opts.tolerance, opts.seed, started)
        .with_detail(format!("{coords} coordinates; worst {worst_at}"))
}
