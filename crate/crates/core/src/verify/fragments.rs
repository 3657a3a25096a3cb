//! Small scalar-valued compositions of the model blocks, used by the
//! gradient checks. Each output is reduced as `sum(out * r)` with a fixed
//! random `r` so that every coordinate contributes a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::fde::{CombinationMode, Css, EncoderConfig, FdeStage, Hfu, HfuConfig, Lfu, LfuConfig, LfuMode};
use crate::mrm::{sample_complementary_masks, Cru, CruConfig, Target};
use crate::nn::{BatchNorm2d, ConvBnRelu};
use crate::ops::{ConvSpec, Mode};
use crate::params::ParamStore;
use crate::spectral::{select_frequencies, FrequencyPolicy};
use crate::tensor::{Shape, Tensor};
use crate::training::{rc_loss_graph, ReconstructionModel};

use super::gradcheck::Fragment;

fn rand_t(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// Replaces every all-zero trainable tensor (biases, BN shifts) with small noise.
fn jitter_zeros(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.trainable_ids() {
        if store.value(id).data().iter().all(|&v| v == 0.0) {
            let s = store.value(id).shape();
            store.set_value(id, Tensor::rand_uniform(s, -0.5, 0.5, rng)).unwrap();
        }
    }
}

fn weighted_sum(g: &mut Graph<f64>, out: NodeId, r: &Tensor<f64>) -> Result<NodeId> {
    let rn = g.input(r.clone())?;
    let p = g.mul(out, rn)?;
    Ok(g.sum(p))
}

pub fn quadratic_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add("w", rand_t(Shape::new(1, 3, 4, 4), &mut rng), true).unwrap();
    Fragment::new("quadratic", store, Mode::Eval, move |g, s| {
        let x = g.param(s, w);
        let sq = g.mul(x, x)?;
        Ok(g.sum(sq))
    })
}

pub fn batchnorm_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 3).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let x = store.add("x", rand_t(Shape::new(2, 3, 4, 4), &mut rng), true).unwrap();
    let r = rand_t(Shape::new(2, 3, 4, 4), &mut rng);
    Fragment::new("batchnorm", store, Mode::Train, move |g, s| {
        let xn = g.param(s, x);
        let y = bn.forward(g, s, xn)?;
        weighted_sum(g, y, &r)
    })
}

pub fn stem_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let spec = ConvSpec::new(3, 4, 6).stride(2).padding(2);
    let stem = ConvBnRelu::new(&mut store, "stem", spec, &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let x = rand_t(Shape::new(2, 3, 12, 12), &mut rng);
    let r = rand_t(Shape::new(2, 4, 6, 6), &mut rng);
    Fragment::new("stem", store, Mode::Train, move |g, s| {
        let xn = g.input(x.clone())?;
        let y = stem.forward(g, s, xn)?;
        weighted_sum(g, y, &r)
    })
}

pub fn hfu_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let freqs = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc).unwrap();
    let hfu = Hfu::new(&mut store, "hfu", HfuConfig::new(8, freqs).unwrap(), &mut rng).unwrap();
    let x = rand_t(Shape::new(1, 8, 8, 8), &mut rng);
    let r = rand_t(Shape::new(1, 8, 8, 8), &mut rng);
    Fragment::new("hfu", store, Mode::Eval, move |g, s| {
        let xn = g.input(x.clone())?;
        let y = hfu.forward(g, s, xn)?;
        weighted_sum(g, y, &r)
    })
}

pub fn lfu_fragment(seed: u64, mode: LfuMode) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lfu = Lfu::new(&mut store, "lfu", LfuConfig::default_for(8).unwrap(), &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let x = rand_t(Shape::new(1, 8, 9, 9), &mut rng);
    let r = rand_t(Shape::new(1, 8, 9, 9), &mut rng);
    let name = match mode {
        LfuMode::MultiBranch => "lfu_multi_branch",
        LfuMode::Merged => "lfu_merged",
    };
    Fragment::new(name, store, Mode::Eval, move |g, s| {
        let xn = g.input(x.clone())?;
        let y = lfu.forward(g, s, xn, mode)?;
        weighted_sum(g, y, &r)
    })
}

pub fn css_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let css = Css::new(&mut store, "css", 8, 8, false, &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let parts: Vec<Tensor<f64>> = (0..4).map(|_| rand_t(Shape::new(1, 4, 6, 6), &mut rng)).collect();
    let ri = rand_t(Shape::new(1, 8, 6, 6), &mut rng);
    let rv = rand_t(Shape::new(1, 8, 6, 6), &mut rng);
    Fragment::new("css", store, Mode::Eval, move |g, s| {
        let ids = parts.iter().map(|p| g.input(p.clone())).collect::<Result<Vec<_>>>()?;
        let (yi, yv) = css.forward(g, s, ids[0], ids[1], ids[2], ids[3])?;
        let a = weighted_sum(g, yi, &ri)?;
        let b = weighted_sum(g, yv, &rv)?;
        g.add(a, b)
    })
}

/// One encoder stage in the given combination mode.
pub fn stage_fragment(seed: u64, mode: CombinationMode) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        combination_mode: mode,
        ..EncoderConfig::default()
    };
    let stage = FdeStage::new(&mut store, "stage", 8, cfg.alpha, &cfg, &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let s = Shape::new(1, 8, 8, 8);
    let (xi, xv) = (rand_t(s, &mut rng), rand_t(s, &mut rng));
    let (ri, rv) = (rand_t(s, &mut rng), rand_t(s, &mut rng));
    let name = format!("stage_{}", mode_name(mode));
    Fragment::new(name, store, Mode::Eval, move |g, st| {
        let (a, b) = (g.input(xi.clone())?, g.input(xv.clone())?);
        let (yi, yv) = stage.forward(g, st, a, b, LfuMode::MultiBranch)?;
        let a = weighted_sum(g, yi, &ri)?;
        let b = weighted_sum(g, yv, &rv)?;
        g.add(a, b)
    })
}

pub fn mode_name(mode: CombinationMode) -> &'static str {
    match mode {
        CombinationMode::HOnly => "h_only",
        CombinationMode::LOnly => "l_only",
        CombinationMode::SerialHl => "serial_hl",
        CombinationMode::SerialLh => "serial_lh",
        CombinationMode::ParallelHl => "parallel_hl",
    }
}

fn desk_encoder(seed: u64) -> EncoderConfig {
    EncoderConfig {
        stem_channels: 8,
        stages: 2,
        seed,
        ..EncoderConfig::default()
    }
}

/// Both reconstruction units on random features, reduced by the reconstruction loss.
pub fn cru_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cru_i = Cru::new(&mut store, "cru_ir", CruConfig::for_stride(8, 2, Target::Infrared).unwrap(), &mut rng).unwrap();
    let cru_v = Cru::new(&mut store, "cru_vis", CruConfig::for_stride(8, 2, Target::Visible).unwrap(), &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let fs = Shape::new(1, 8, 16, 16);
    let (fi, fv) = (rand_t(fs, &mut rng), rand_t(fs, &mut rng));
    let img_i = Tensor::rand_uniform(Shape::new(1, 1, 32, 32), 0.0, 1.0, &mut rng);
    let img_v = Tensor::rand_uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut rng);
    Fragment::new("cru_rc_loss", store, Mode::Eval, move |g, s| {
        let (a, b) = (g.input(fi.clone())?, g.input(fv.clone())?);
        let (ii, iv) = (g.input(img_i.clone())?, g.input(img_v.clone())?);
        let yi = cru_i.forward(g, s, a, b, (32, 32))?;
        let yv = cru_v.forward(g, s, b, a, (32, 32))?;
        rc_loss_graph(g, yi, yv, ii, iv)
    })
}

/// Whole encoder on 32x32 inputs, reduced over the last stage and checked on the stem weights.
pub fn encoder_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = crate::fde::Encoder::new(&mut store, desk_encoder(seed), &mut rng).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let img_i = Tensor::rand_uniform(Shape::new(2, 1, 32, 32), 0.0, 1.0, &mut rng);
    let img_v = Tensor::rand_uniform(Shape::new(2, 3, 32, 32), 0.0, 1.0, &mut rng);
    let rs = Shape::new(2, 16, 8, 8);
    let (ri, rv) = (rand_t(rs, &mut rng), rand_t(rs, &mut rng));
    Fragment::new("encoder_stem", store, Mode::Train, move |g, s| {
        let (a, b) = (g.input(img_i.clone())?, g.input(img_v.clone())?);
        let feats = enc.forward(g, s, a, b)?;
        let (yi, yv) = *feats.last().unwrap();
        let a = weighted_sum(g, yi, &ri)?;
        let b = weighted_sum(g, yv, &rv)?;
        g.add(a, b)
    })
    .only("enc.stem")
}

/// Encoder, masks, both reconstruction units and the reconstruction loss.
pub fn model_fragment(seed: u64) -> Fragment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut store = ParamStore::new();
    let model = ReconstructionModel::new(&mut store, desk_encoder(seed)).unwrap();
    jitter_zeros(&mut store, &mut rng);
    let img_i = Tensor::rand_uniform(Shape::new(2, 1, 16, 16), 0.0, 1.0, &mut rng);
    let img_v = Tensor::rand_uniform(Shape::new(2, 3, 16, 16), 0.0, 1.0, &mut rng);
    let masks = sample_complementary_masks(4, 4, 0.3, 1, rng.gen()).unwrap();
    Fragment::new("model_rc_loss", store, Mode::Train, move |g, s| {
        let (a, b) = (g.input(img_i.clone())?, g.input(img_v.clone())?);
        let rec = model.forward(g, s, a, b, Some(&masks))?;
        rc_loss_graph(g, rec.f_i, rec.f_v, a, b)
    })
}
