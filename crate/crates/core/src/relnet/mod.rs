//! Skeleton encoder: multi-head structural relation layers per graph level,
//! full-level collaborative relations between every level pair, relation-weighted
//! feature fusion, and frame averaging into a sequence embedding.
//!
//! Node features are row vectors, so a level's features form an `n_l × D_h`
//! matrix `F` and every learned map multiplies from the right:
//!
//! * head projection: `H = V W_v` with `W_v: 3 × D_h`
//! * relation logits: `e_ij = LeakyReLU([h_i ‖ h_j] · w_r)` with `w_r: 2D_h × 1`
//! * fusion: `F_a + λ Σ_{b ≥ a} Â_ab F_b W_c` with `W_c: D_h × D_h`

mod model;

pub use model::{FrameTrace, HeadTrace, Model, NodeFeatures, Relations, LEVEL_PAIRS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity applied to each head's aggregated features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "leaky_relu" => Ok(Self::LeakyRelu),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}` (expected tanh, leaky_relu or identity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Node feature width `D_h`.
    pub hidden: usize,
    /// Structural relation heads per level.
    pub heads: usize,
    /// Fusion coefficient shared by all level pairs.
    pub fusion_weight: f64,
    pub activation: Activation,
    pub leaky_slope: f64,
    /// Subtract the scheme's center node from every frame before encoding.
    pub center_frames: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            heads: 8,
            fusion_weight: 1.0,
            activation: Activation::Tanh,
            leaky_slope: 0.2,
            center_frames: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden ({}) and heads ({}) must be positive",
                self.hidden, self.heads
            )));
        }
        if !(self.fusion_weight >= 0.0 && self.fusion_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fusion weight must be finite and non-negative, got {}",
                self.fusion_weight
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

/// Flattened sequence representation with the tags of its source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding {
    pub values: Vec<f64>,
    pub identity: Option<String>,
    pub view: Option<String>,
}
