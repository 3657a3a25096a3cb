use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::fde::{Encoder, EncoderConfig};
use crate::mrm::{apply_masks_graph, Cru, CruConfig, MaskPair, Target};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Encoder plus one reconstruction unit per modality.
#[derive(Debug)]
pub struct ReconstructionModel {
    pub encoder: Encoder,
    pub cru_i: Cru,
    pub cru_v: Cru,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub features: Vec<(NodeId, NodeId)>,
    /// Last-stage features after masking.
    pub masked: (NodeId, NodeId),
    pub f_i: NodeId,
    pub f_v: NodeId,
}

impl ReconstructionModel {
    /// Parameters are drawn from a generator seeded with `cfg.seed`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: EncoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let stride = cfg.cumulative_stride();
        let last = cfg.stage_channels(cfg.stages - 1);
        let encoder = Encoder::new(store, cfg, &mut rng)?;
        let cru_i = Cru::new(store, "cru_ir", CruConfig::for_stride(last, stride, Target::Infrared)?, &mut rng)?;
        let cru_v = Cru::new(store, "cru_vis", CruConfig::for_stride(last, stride, Target::Visible)?, &mut rng)?;
        Ok(ReconstructionModel { encoder, cru_i, cru_v })
    }

    pub fn last_stage_extent(&self, image_hw: (usize, usize)) -> (usize, usize) {
        let s = self.encoder.cfg.cumulative_stride();
        (image_hw.0 / s, image_hw.1 / s)
    }

    /// Encodes both images, masks the last stage when `masks` is given, and
    /// reconstructs each modality from its own and the other's features.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image_i: NodeId,
        image_v: NodeId,
        masks: Option<&MaskPair>,
    ) -> Result<Reconstruction> {
        let features = self.encoder.forward(g, store, image_i, image_v)?;
        let (xi, xv) = *features.last().expect("encoder has stages");
        let (mi, mv) = match masks {
            Some(m) => apply_masks_graph(g, xi, xv, m)?,
            None => (xi, xv),
        };
        let s = g.shape(image_i);
        let hw = (s.h(), s.w());
        let f_i = self.cru_i.forward(g, store, mi, mv, hw)?;
        let f_v = self.cru_v.forward(g, store, mv, mi, hw)?;
        Ok(Reconstruction {
            features,
            masked: (mi, mv),
            f_i,
            f_v,
        })
    }
}
