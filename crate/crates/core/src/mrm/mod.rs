//! Masked reconstruction across modalities.

pub mod cru;
pub mod mask;

pub use cru::{CrossAttention, Cru, CruConfig, SeGate, Target};
pub use mask::{
    apply_masks, apply_masks_graph, sample_complementary_masks, sample_complementary_masks_split, selected_patches,
    MaskPair,
};
