//! Convolution + TSLFN variational autoencoder over subword sequences.

mod model;
mod train;

pub use model::{position_indices, reparameterize, LatentCode, LossParts, Vae};
pub use train::{train_vae, VaeTraining};

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

pub use crate::nn::kl_divergence as kl_gaussian;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corpus of {got} sequences is smaller than one batch of {batch}")]
    CorpusTooSmall { got: usize, batch: usize },
    #[error("sequence length {got} does not match the configured {expected}")]
    SequenceLength { expected: usize, got: usize },
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("sequence has no real tokens")]
    AllPadding,
    #[error("model sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Masked mean cross-entropy against the input token ids.
    #[default]
    TokenCrossEntropy,
    /// Masked mean squared error against the (fixed) input embeddings.
    EmbeddingMse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Padded sequence length `L`.
    pub seq_len: usize,
    /// Model width `D`, shared by embeddings, convolutions and attention.
    pub width: usize,
    /// Latent size `dim_e`; must equal the pixel count of the image.
    pub latent_dim: usize,
    pub transformer_blocks: usize,
    pub heads: usize,
    pub conv_blocks: usize,
    pub conv_filter_width: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Fraction of sequences held out for validation.
    pub validation_ratio: f64,
    pub anneal_b: f64,
    /// Position offset `θ`.
    pub position_offset: usize,
    /// Position increment `δ`.
    pub position_step: usize,
    /// Drop every TSLFN block from encoder and decoder.
    pub conv_only: bool,
    pub reconstruction: Reconstruction,
    /// Reuse the tanh-gate input weights for the hidden path.
    pub share_tanh_weights: bool,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            seq_len: 64,
            width: 32,
            latent_dim: 512,
            transformer_blocks: 2,
            heads: 4,
            conv_blocks: 2,
            conv_filter_width: 3,
            dropout: 0.3,
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 15,
            patience: 2,
            validation_ratio: 0.2,
            anneal_b: 0.0,
            position_offset: 1,
            position_step: 1,
            conv_only: false,
            reconstruction: Reconstruction::TokenCrossEntropy,
            share_tanh_weights: false,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let positive = [
            ("seq_len", self.seq_len),
            ("width", self.width),
            ("latent_dim", self.latent_dim),
            ("heads", self.heads),
            ("conv_filter_width", self.conv_filter_width),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("position_step", self.position_step),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(VaeError::Config(format!("{name} must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(VaeError::Config(format!(
                "width {} is not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(VaeError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.validation_ratio > 0.0 && self.validation_ratio < 1.0) {
            return Err(VaeError::Config(format!(
                "validation_ratio {} outside (0, 1)",
                self.validation_ratio
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VaeError::Config("learning_rate must be positive".into()));
        }
        if !self.anneal_b.is_finite() {
            return Err(VaeError::Config("anneal_b must be finite".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            total_epochs: self.epochs,
            b: self.anneal_b,
        }
    }
}

/// Logistic KL weight over epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// `N`, at least 1.
    pub total_epochs: usize,
    pub b: f64,
}

impl AnnealSchedule {
    pub fn weight(&self, epoch: usize) -> f64 {
        anneal_weight(epoch, self.total_epochs, self.b)
    }
}

/// `W_a = 1 / (1 + e^{−(n/N + b)})`.
pub fn anneal_weight(n: usize, total_epochs: usize, b: f64) -> f64 {
    assert!(total_epochs >= 1, "anneal schedule needs N >= 1");
    1.0 / (1.0 + (-(n as f64 / total_epochs as f64 + b)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_reference_points() {
        assert_eq!(anneal_weight(0, 15, 0.0), 0.5);
        assert!((anneal_weight(15, 15, 0.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        let w: Vec<f64> = (0..=15).map(|n| anneal_weight(n, 15, 0.0)).collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn kl_reference_points() {
        assert_eq!(kl_gaussian(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_eq!(kl_gaussian(&[1.0], &[0.0]), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(VaeConfig::default().validate().is_ok());
        let bad = VaeConfig {
            width: 30,
            heads: 4,
            ..VaeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = VaeConfig {
            dropout: 1.0,
            ..VaeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
