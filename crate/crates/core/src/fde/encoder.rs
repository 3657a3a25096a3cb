use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{invalid, Error, Result};
use crate::nn::ConvBnRelu;
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::spectral::select_frequencies;
use crate::tensor::split_point;

use super::{CombinationMode, Css, EncoderConfig, Hfu, HfuConfig, Lfu, LfuConfig, LfuMode, FREQUENCY_GRID};

/// One encoder stage: frequency decomposition for both modalities, then recoupling.
#[derive(Debug)]
pub struct FdeStage {
    pub channels: usize,
    /// Channels routed to the high-frequency unit in split modes.
    pub high_channels: usize,
    pub mode: CombinationMode,
    pub hfu_i: Option<Hfu>,
    pub hfu_v: Option<Hfu>,
    pub lfu_i: Option<Lfu>,
    pub lfu_v: Option<Lfu>,
    pub css: Css,
}

impl FdeStage {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        alpha: f64,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mode = cfg.combination_mode;
        let high = split_point(channels, alpha)?;
        let (hfu_ch, lfu_ch) = if mode.is_serial() {
            (channels, channels)
        } else {
            (high, channels - high)
        };
        let freqs = select_frequencies(cfg.group_count, FREQUENCY_GRID, FREQUENCY_GRID, &cfg.frequency_policy)?;
        let make_hfu = |store: &mut ParamStore<T>, rng: &mut R, tag: &str| -> Result<Option<Hfu>> {
            if !mode.uses_hfu() {
                return Ok(None);
            }
            let mut hc = HfuConfig::new(hfu_ch, freqs.clone())?;
            hc.normalization = cfg.dct_normalization;
            Ok(Some(Hfu::new(store, &format!("{name}.hfu_{tag}"), hc, rng)?))
        };
        let make_lfu = |store: &mut ParamStore<T>, rng: &mut R, tag: &str| -> Result<Option<Lfu>> {
            if !mode.uses_lfu() {
                return Ok(None);
            }
            let lc = LfuConfig::new(lfu_ch, cfg.receptive_field, &cfg.branches)?;
            Ok(Some(Lfu::new(store, &format!("{name}.lfu_{tag}"), lc, rng)?))
        };
        let hfu_i = make_hfu(store, rng, "ir")?;
        let hfu_v = make_hfu(store, rng, "vis")?;
        let lfu_i = make_lfu(store, rng, "ir")?;
        let lfu_v = make_lfu(store, rng, "vis")?;
        let css_in = if mode.is_serial() { 2 * channels } else { channels };
        let css = Css::new(store, &format!("{name}.css"), css_in, channels, cfg.symmetric_css, rng)?;
        Ok(FdeStage {
            channels,
            high_channels: high,
            mode,
            hfu_i,
            hfu_v,
            lfu_i,
            lfu_v,
            css,
        })
    }

    pub fn hfu_calls(&self) -> usize {
        self.hfu_i.iter().chain(&self.hfu_v).map(|h| h.calls()).sum()
    }

    pub fn lfu_calls(&self) -> usize {
        self.lfu_i.iter().chain(&self.lfu_v).map(|l| l.calls()).sum()
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut v = Vec::new();
        for h in self.hfu_i.iter().chain(&self.hfu_v) {
            v.push(h.attn.spec);
        }
        for l in self.lfu_i.iter().chain(&self.lfu_v) {
            v.extend(l.conv_specs());
        }
        v.extend(self.css.conv_specs());
        v
    }

    fn decompose<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        hfu: Option<&Hfu>,
        lfu: Option<&Lfu>,
        lfu_mode: LfuMode,
    ) -> Result<(NodeId, NodeId)> {
        let run_h = |g: &mut Graph<T>, n: NodeId| match hfu {
            Some(h) => h.forward(g, store, n),
            None => Ok(n),
        };
        let run_l = |g: &mut Graph<T>, n: NodeId| match lfu {
            Some(l) => l.forward(g, store, n, lfu_mode),
            None => Ok(n),
        };
        match self.mode {
            CombinationMode::SerialHl => {
                let h = run_h(g, x)?;
                let l = run_l(g, h)?;
                Ok((h, l))
            }
            CombinationMode::SerialLh => {
                let l = run_l(g, x)?;
                let h = run_h(g, l)?;
                Ok((h, l))
            }
            _ => {
                let hi = g.narrow(x, 0, self.high_channels)?;
                let lo = g.narrow(x, self.high_channels, self.channels - self.high_channels)?;
                Ok((run_h(g, hi)?, run_l(g, lo)?))
            }
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_i: NodeId,
        x_v: NodeId,
        lfu_mode: LfuMode,
    ) -> Result<(NodeId, NodeId)> {
        for x in [x_i, x_v] {
            let c = g.shape(x).c();
            if c != self.channels {
                return Err(Error::ShapeMismatch {
                    op: "fde_stage",
                    dim: "channels",
                    expected: self.channels,
                    actual: c,
                });
            }
        }
        let (hi, li) = self.decompose(g, store, x_i, self.hfu_i.as_ref(), self.lfu_i.as_ref(), lfu_mode)?;
        let (hv, lv) = self.decompose(g, store, x_v, self.hfu_v.as_ref(), self.lfu_v.as_ref(), lfu_mode)?;
        self.css.forward(g, store, hi, hv, li, lv)
    }
}

/// Stems, stages and inter-stage downsampling for both modalities.
#[derive(Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub stem_i: ConvBnRelu,
    pub stem_v: ConvBnRelu,
    /// `downsample[s - 1]` feeds stage `s` for `s >= 1`, as `(infrared, visible)`.
    pub downsample: Vec<(ConvBnRelu, ConvBnRelu)>,
    pub stages: Vec<FdeStage>,
    pub lfu_mode: LfuMode,
}

pub const IR_CHANNELS: usize = 1;
pub const VIS_CHANNELS: usize = 3;

fn stem_spec(in_channels: usize, out: usize) -> ConvSpec {
    ConvSpec::new(in_channels, out, 6).stride(2).padding(2).bias(false)
}

fn down_spec(in_channels: usize) -> ConvSpec {
    ConvSpec::new(in_channels, 2 * in_channels, 3).stride(2).padding(1).bias(false)
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.stem_channels;
        let stem_i = ConvBnRelu::new(store, "enc.stem_ir", stem_spec(IR_CHANNELS, c), rng)?;
        let stem_v = ConvBnRelu::new(store, "enc.stem_vis", stem_spec(VIS_CHANNELS, c), rng)?;
        let mut stages = Vec::with_capacity(cfg.stages);
        let mut downsample = Vec::new();
        for s in 0..cfg.stages {
            let ch = cfg.stage_channels(s);
            if s > 0 {
                let prev = cfg.stage_channels(s - 1);
                downsample.push((
                    ConvBnRelu::new(store, &format!("enc.down{s}_ir"), down_spec(prev), rng)?,
                    ConvBnRelu::new(store, &format!("enc.down{s}_vis"), down_spec(prev), rng)?,
                ));
            }
            stages.push(FdeStage::new(store, &format!("enc.stage{s}"), ch, cfg.alpha_at(s), &cfg, rng)?);
        }
        Ok(Encoder {
            cfg,
            stem_i,
            stem_v,
            downsample,
            stages,
            lfu_mode: LfuMode::MultiBranch,
        })
    }

    /// Every convolution the encoder declares.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut v = vec![self.stem_i.conv.spec, self.stem_v.conv.spec];
        for (a, b) in &self.downsample {
            v.push(a.conv.spec);
            v.push(b.conv.spec);
        }
        for s in &self.stages {
            v.extend(s.conv_specs());
        }
        v
    }

    /// Closed-form trainable parameter count from the declared layer specs.
    pub fn declared_param_count(&self) -> usize {
        let convs: usize = self.conv_specs().iter().map(|s| s.param_count()).sum();
        let bns = self.stem_i.bn.param_count()
            + self.stem_v.bn.param_count()
            + self
                .downsample
                .iter()
                .map(|(a, b)| a.bn.param_count() + b.bn.param_count())
                .sum::<usize>();
        convs + bns
    }

    pub fn stem<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: NodeId,
        infrared: bool,
    ) -> Result<NodeId> {
        let s = g.shape(image);
        let (expected, block) = if infrared {
            (IR_CHANNELS, &self.stem_i)
        } else {
            (VIS_CHANNELS, &self.stem_v)
        };
        if s.c() != expected {
            return Err(Error::ShapeMismatch {
                op: "stem",
                dim: "channels",
                expected,
                actual: s.c(),
            });
        }
        if s.h() < 6 || s.w() < 6 {
            return Err(invalid(format!("stem needs extents >= 6, got {}x{}", s.h(), s.w())));
        }
        block.forward(g, store, image)
    }

    /// Per-stage `(infrared, visible)` features.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image_i: NodeId,
        image_v: NodeId,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        let (si, sv) = (g.shape(image_i), g.shape(image_v));
        if si.n() != sv.n() || si.h() != sv.h() || si.w() != sv.w() {
            return Err(Error::Incompatible {
                op: "encoder",
                lhs: si.0,
                rhs: sv.0,
            });
        }
        let stride = self.cfg.cumulative_stride();
        if si.h() % stride != 0 || si.w() % stride != 0 {
            return Err(invalid(format!(
                "image extents {}x{} are not divisible by the encoder stride {stride}",
                si.h(),
                si.w()
            )));
        }
        let mut xi = self.stem(g, store, image_i, true)?;
        let mut xv = self.stem(g, store, image_v, false)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                let (di, dv) = &self.downsample[s - 1];
                xi = di.forward(g, store, xi)?;
                xv = dv.forward(g, store, xv)?;
            }
            let (yi, yv) = stage.forward(g, store, xi, xv, self.lfu_mode)?;
            out.push((yi, yv));
            xi = yi;
            xv = yv;
        }
        Ok(out)
    }

    pub fn hfu_calls(&self) -> usize {
        self.stages.iter().map(|s| s.hfu_calls()).sum()
    }

    pub fn lfu_calls(&self) -> usize {
        self.stages.iter().map(|s| s.lfu_calls()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(cfg: EncoderConfig) -> (ParamStore<f64>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg, &mut rng).unwrap();
        (store, enc)
    }

    fn images(n: usize, hw: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::rand_uniform(Shape::new(n, 1, hw, hw), 0.0, 1.0, &mut rng),
            Tensor::rand_uniform(Shape::new(n, 3, hw, hw), 0.0, 1.0, &mut rng),
        )
    }

    fn run(enc: &Encoder, store: &ParamStore<f64>, hw: usize) -> (Graph<f64>, Vec<(NodeId, NodeId)>) {
        let (i, v) = images(1, hw, 5);
        let mut g = Graph::new(Mode::Eval);
        let (i, v) = (g.input(i).unwrap(), g.input(v).unwrap());
        let out = enc.forward(&mut g, store, i, v).unwrap();
        (g, out)
    }

    #[test]
    fn default_stage_shapes() {
        let (store, enc) = encoder(EncoderConfig::default());
        let (g, out) = run(&enc, &store, 256);
        let shapes: Vec<Shape> = out.iter().map(|&(i, _)| g.shape(i)).collect();
        assert_eq!(
            shapes,
            vec![
                Shape::new(1, 16, 128, 128),
                Shape::new(1, 32, 64, 64),
                Shape::new(1, 64, 32, 32)
            ]
        );
        for &(i, v) in &out {
            assert_eq!(g.shape(i), g.shape(v));
        }
    }

    #[test]
    fn parameter_count_two_ways() {
        for mode in CombinationMode::ALL {
            let cfg = EncoderConfig {
                combination_mode: mode,
                ..EncoderConfig::default()
            };
            let (store, enc) = encoder(cfg);
            let enumerated: usize = store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum();
            assert_eq!(enc.declared_param_count(), enumerated, "{mode:?}");
        }
    }

    #[test]
    fn mode_exclusivity() {
        for mode in CombinationMode::ALL {
            let cfg = EncoderConfig {
                combination_mode: mode,
                stem_channels: 8,
                stages: 2,
                ..EncoderConfig::default()
            };
            let (store, enc) = encoder(cfg);
            run(&enc, &store, 32);
            match mode {
                CombinationMode::HOnly => assert_eq!((enc.hfu_calls() > 0, enc.lfu_calls()), (true, 0)),
                CombinationMode::LOnly => assert_eq!((enc.hfu_calls(), enc.lfu_calls() > 0), (0, true)),
                _ => assert!(enc.hfu_calls() > 0 && enc.lfu_calls() > 0),
            }
        }
    }

    #[test]
    fn seeded_runs_bit_identical() {
        let cfg = EncoderConfig {
            stem_channels: 8,
            stages: 2,
            ..EncoderConfig::default()
        };
        let (s1, e1) = encoder(cfg.clone());
        let (s2, e2) = encoder(cfg);
        let (g1, o1) = run(&e1, &s1, 32);
        let (g2, o2) = run(&e2, &s2, 32);
        for (a, b) in o1.iter().zip(&o2) {
            let bits = |g: &Graph<f64>, n: NodeId| g.value(n).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&g1, a.0), bits(&g2, b.0));
            assert_eq!(bits(&g1, a.1), bits(&g2, b.1));
        }
    }

    #[test]
    fn parallel_stage_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let stage = FdeStage::new(&mut store, "s", 16, 0.5, &EncoderConfig::default(), &mut rng).unwrap();
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 16, 64, 64), -1.0, 1.0, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let (a, b) = (g.input(x.clone()).unwrap(), g.input(x).unwrap());
        let (yi, yv) = stage.forward(&mut g, &store, a, b, LfuMode::Merged).unwrap();
        assert_eq!(g.shape(yi), Shape::new(1, 16, 64, 64));
        assert_eq!(g.shape(yv), Shape::new(1, 16, 64, 64));
    }

    #[test]
    fn bad_inputs() {
        let cfg = EncoderConfig {
            stem_channels: 8,
            stages: 2,
            ..EncoderConfig::default()
        };
        let (store, enc) = encoder(cfg);
        let mut g = Graph::new(Mode::Eval);
        let (i, v) = images(1, 30, 1);
        let (i, v) = (g.input(i).unwrap(), g.input(v).unwrap());
        assert!(enc.forward(&mut g, &store, i, v).is_err());
        let (i, _) = images(1, 32, 1);
        let i = g.input(i).unwrap();
        assert!(enc.forward(&mut g, &store, i, i).is_err());
        let tiny = g.input(Tensor::zeros(Shape::new(1, 1, 4, 4))).unwrap();
        assert!(enc.stem(&mut g, &store, tiny, true).is_err());
    }
}
