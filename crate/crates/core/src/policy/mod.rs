//! Transformer improvement policy.
//!
//! The encoder embeds each sequence position (coordinates plus a sinusoidal
//! position code) and runs `L` blocks of single-head self-attention and a
//! feed-forward sublayer, each followed by a residual connection and
//! per-instance normalization over the sequence. The decoder adds a linear
//! map of the max-pooled embedding to a per-position linear map, forms the
//! key/query compatibility matrix, squashes it to `[-C, C]` with `tanh`,
//! masks forbidden pairs, and takes one softmax over all remaining ordered
//! pairs.
//!
//! Gradients are derived by hand and verified against central finite
//! differences in the test suite.

mod critic;
mod grad;
pub mod network;
mod params;
mod sample;

use std::fmt;
use std::str::FromStr;

pub use critic::{accumulate_value_grad, critic_forward, value_estimate, CriticPass};
pub use grad::{actor_grad, critic_grad};
pub use network::{
    accumulate_encoder_grad, accumulate_log_prob_grad, decode_action_probs, encode, encode_pass, forward,
    node_feature_embedding, position_feature_embedding, self_attention, EncoderPass, ForwardPass,
};
pub use params::{CriticParameters, EncoderLayerParams, ParamTensors, PolicyParameters};
pub use sample::{sample_action, ActionProbs, PROB_SUM_TOL};

use crate::env::{ActionPolicy, PlacementState};
use crate::error::{domain, Error, Result};
use crate::seed;
use crate::spatial::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Any two sequence positions may be exchanged.
    Swap,
    /// Only a placed position and a candidate position may be exchanged.
    MaskSwap,
}

impl Variant {
    #[inline]
    pub fn allows(self, a: usize, b: usize, n_placed: usize) -> bool {
        a != b
            && match self {
                Variant::Swap => true,
                Variant::MaskSwap => (a < n_placed) != (b < n_placed),
            }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Swap => "swap",
            Variant::MaskSwap => "mask-swap",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap" => Ok(Variant::Swap),
            "mask-swap" => Ok(Variant::MaskSwap),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected swap or mask-swap)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Embedding width.
    pub d_h: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Encoder blocks.
    pub layers: usize,
    /// Logit bound `C`.
    pub clip: f64,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d_h: 128,
            d_ff: 256,
            layers: 3,
            clip: 10.0,
            variant: Variant::Swap,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h < 2 || !self.d_h.is_multiple_of(2) {
            return domain(format!("d_h must be even and at least 2, got {}", self.d_h));
        }
        if self.d_ff == 0 {
            return domain("d_ff must be positive");
        }
        if self.layers == 0 {
            return domain("at least one encoder layer is required");
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return domain(format!("clip must be positive, got {}", self.clip));
        }
        Ok(())
    }
}

/// Actor and critic bundled with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerPolicy {
    pub config: NetConfig,
    pub actor: PolicyParameters,
    pub critic: CriticParameters,
}

impl TransformerPolicy {
    pub fn init(config: NetConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            actor: PolicyParameters::init(&config, seed::derive(rng_seed, "actor", &[])),
            critic: CriticParameters::init(&config, seed::derive(rng_seed, "critic", &[])),
            config,
        })
    }
}

impl ActionPolicy for TransformerPolicy {
    fn action_probs(&self, instance: &ProblemInstance, state: &PlacementState) -> Result<ActionProbs> {
        Ok(forward(state, instance, &self.actor, &self.config)?.probs().clone())
    }

    fn value_estimate(&self, instance: &ProblemInstance, state: &PlacementState) -> Result<f64> {
        value_estimate(state, instance, &self.critic)
    }
}
