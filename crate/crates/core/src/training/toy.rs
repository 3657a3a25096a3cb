use crate::autograd::Graph;
use crate::error::{invalid, Error, Result};
use crate::fde::EncoderConfig;
use crate::mrm::sample_complementary_masks;
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::scalar::Scalar;

use super::data::{synthetic_pairs, DataSpec};
use super::loss::{rc_loss_graph, total_loss_graph, LossWeights};
use super::model::ReconstructionModel;
use super::sgd::{Sgd, SgdConfig};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: SgdConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data: DataSpec,
    pub mask_ratio: f64,
    pub mask_patch: usize,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: SgdConfig::default(),
            steps: 200,
            batch_size: 2,
            seed: 42,
            data: DataSpec::default(),
            mask_ratio: 0.3,
            mask_patch: 2,
            loss_weights: LossWeights {
                lambda1: 1.0,
                lambda2: 0.0,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(invalid(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(invalid("steps and batch_size must be at least 1"));
        }
        self.loss_weights.validate()
    }
}

/// Encoder settings used by the toy run: the default encoder, reseeded.
pub fn toy_encoder_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        seed,
        ..EncoderConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `final_loss / initial_loss`.
    pub ratio: f64,
    pub config: TrainConfig,
    pub encoder: EncoderConfig,
    pub parameters: usize,
}

impl TrainReport {
    pub fn halved(&self) -> bool {
        self.ratio <= 0.5
    }
}

/// Trains encoder and reconstruction units on synthetic pairs with fresh
/// complementary masks every step.
pub fn toy_train_run<T: Scalar>(cfg: &TrainConfig, encoder: &EncoderConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = synthetic_pairs::<T>(cfg.data, cfg.seed)?;
    let mut store = ParamStore::<T>::new();
    let model = ReconstructionModel::new(&mut store, encoder.clone())?;
    let mut opt = Sgd::<T>::new(cfg.optimizer)?;
    let (mh, mw) = model.last_stage_extent((cfg.data.size, cfg.data.size));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (img_i, img_v) = data.batch(step * cfg.batch_size, cfg.batch_size);
        let masks = sample_complementary_masks(
            mh,
            mw,
            cfg.mask_ratio,
            cfg.mask_patch,
            cfg.seed.wrapping_mul(1_000_003).wrapping_add(step as u64),
        )?;
        let mut g = Graph::new(Mode::Train);
        let (ni, nv) = (g.input(img_i)?, g.input(img_v)?);
        let rec = model.forward(&mut g, &store, ni, nv, Some(&masks))?;
        let l_rc = rc_loss_graph(&mut g, rec.f_i, rec.f_v, ni, nv)?;
        let loss = match total_loss_graph(&mut g, l_rc, None, cfg.loss_weights) {
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    loss: g.value(l_rc).data()[0].as_f64(),
                })
            }
            other => other?,
        };
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        losses.push(value);
        g.backward(loss, &mut store)?;
        g.commit_running_stats(&mut store);
        opt.step(&mut store);
    }
    let initial_loss = losses[0];
    let final_loss = *losses.last().unwrap();
    Ok(TrainReport {
        seed: cfg.seed,
        ratio: final_loss / initial_loss,
        initial_loss,
        final_loss,
        losses,
        config: cfg.clone(),
        encoder: encoder.clone(),
        parameters: store.trainable_count(),
    })
}
