//! Feature decomposition encoder.

pub mod css;
pub mod encoder;
pub mod hfu;
pub mod lfu;

pub use css::{recouple_inputs, Css};
pub use encoder::{Encoder, FdeStage};
pub use hfu::{Hfu, HfuConfig, HfuNodes};
pub use lfu::{merge_branches, BranchSpec, Lfu, LfuConfig, LfuMode, MergedKernel};

use crate::error::{invalid, Result};
use crate::spectral::{FrequencyPolicy, Normalization};

/// How the high- and low-frequency units are arranged inside a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationMode {
    /// High-frequency unit only; the low part passes through.
    HOnly,
    /// Low-frequency unit only; the high part passes through.
    LOnly,
    /// HFU then LFU on the full tensor.
    SerialHl,
    /// LFU then HFU on the full tensor.
    SerialLh,
    /// HFU on the high split and LFU on the low split, side by side.
    #[default]
    ParallelHl,
}

impl CombinationMode {
    pub const ALL: [CombinationMode; 5] = [
        CombinationMode::HOnly,
        CombinationMode::LOnly,
        CombinationMode::SerialHl,
        CombinationMode::SerialLh,
        CombinationMode::ParallelHl,
    ];

    pub fn is_serial(self) -> bool {
        matches!(self, CombinationMode::SerialHl | CombinationMode::SerialLh)
    }

    pub fn uses_hfu(self) -> bool {
        self != CombinationMode::LOnly
    }

    pub fn uses_lfu(self) -> bool {
        self != CombinationMode::HOnly
    }
}

impl std::str::FromStr for CombinationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "h_only" | "h" => CombinationMode::HOnly,
            "l_only" | "l" => CombinationMode::LOnly,
            "serial_hl" | "h+l" => CombinationMode::SerialHl,
            "serial_lh" | "l+h" => CombinationMode::SerialLh,
            "parallel_hl" | "h&l" => CombinationMode::ParallelHl,
            _ => return Err(invalid(format!("unknown combination mode `{s}`"))),
        })
    }
}

/// Nominal grid used when selecting frequency indices; indices are checked
/// again against the actual feature extents at forward time.
pub const FREQUENCY_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub alpha: f64,
    /// Per-stage split ratios; empty means `alpha` everywhere.
    pub stage_alpha: Vec<f64>,
    pub stem_channels: usize,
    pub stages: usize,
    pub group_count: usize,
    pub frequency_policy: FrequencyPolicy,
    pub dct_normalization: Normalization,
    pub receptive_field: usize,
    pub branches: Vec<(usize, usize)>,
    pub combination_mode: CombinationMode,
    pub symmetric_css: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            alpha: 0.5,
            stage_alpha: Vec::new(),
            stem_channels: 16,
            stages: 3,
            group_count: 4,
            frequency_policy: FrequencyPolicy::ZigzagSkipDc,
            dct_normalization: Normalization::Unnormalized,
            receptive_field: lfu::DEFAULT_RF,
            branches: lfu::DEFAULT_BRANCHES.to_vec(),
            combination_mode: CombinationMode::ParallelHl,
            symmetric_css: false,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn alpha_at(&self, stage: usize) -> f64 {
        self.stage_alpha.get(stage).copied().unwrap_or(self.alpha)
    }

    /// Stride applied on entry to each stage (the stem's own stride excluded).
    pub fn stage_strides(&self) -> Vec<usize> {
        (0..self.stages).map(|s| if s == 0 { 1 } else { 2 }).collect()
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.stem_channels << stage
    }

    /// Total downsampling factor from image to last-stage features.
    pub fn cumulative_stride(&self) -> usize {
        2 * self.stage_strides().iter().product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(invalid("encoder needs at least one stage"));
        }
        if self.stem_channels == 0 {
            return Err(invalid("stem_channels must be positive"));
        }
        if !self.stage_alpha.is_empty() && self.stage_alpha.len() != self.stages {
            return Err(invalid(format!(
                "stage_alpha has {} entries for {} stages",
                self.stage_alpha.len(),
                self.stages
            )));
        }
        Ok(())
    }
}
