//! Text → vector → image, bundling the vocabulary, the autoencoder and the
//! image settings that together define one encoding.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{clean_text_with, CleanOptions};
use crate::imager::{embedding_to_image, ImageError, ImageSpec, PixelImage, Quantization};
use crate::sts::{InputMode, StsInput};
use crate::tokenizer::{TokenSequence, TokenizerError, Vocabulary};
use crate::training::FitReport;
use crate::vae::{train_vae, Vae, VaeConfig, VaeError};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const SETTINGS_FILE: &str = "pipeline.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("text is empty after cleaning")]
    EmptyText,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("settings file: {0}")]
    Settings(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSettings {
    pub clean: CleanOptions,
    pub image: ImageSpec,
    pub quantization: Quantization,
}

pub struct TexImPipeline {
    pub vocab: Vocabulary,
    pub vae: Vae,
    pub settings: EncodingSettings,
}

impl TexImPipeline {
    pub fn new(vocab: Vocabulary, vae: Vae, settings: EncodingSettings) -> Result<Self, PipelineError> {
        check_image(&settings.image, vae.config().latent_dim)?;
        if vae.vocab_size() != vocab.size() {
            return Err(PipelineError::Config(format!(
                "model expects {} subwords, vocabulary has {}",
                vae.vocab_size(),
                vocab.size()
            )));
        }
        Ok(Self { vocab, vae, settings })
    }

    pub fn clean(&self, text: &str) -> String {
        clean_text_with(text, &self.settings.clean)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, PipelineError> {
        let cleaned = self.clean(text);
        if cleaned.is_empty() {
            return Err(PipelineError::EmptyText);
        }
        Ok(self.vocab.tokenize(&cleaned, self.vae.config().seq_len)?)
    }

    /// The fixed-length vector `E` (posterior mean).
    pub fn project(&self, text: &str) -> Result<Vec<f64>, PipelineError> {
        Ok(self.vae.project(&self.tokenize(text)?)?)
    }

    /// Image for `text` and whether its vector was constant.
    pub fn encode_image(&self, text: &str) -> Result<(PixelImage, bool), PipelineError> {
        let e = self.project(text)?;
        Ok(embedding_to_image(&e, self.settings.image, self.settings.quantization)?)
    }

    /// Classifier input for `text` in the given mode.
    pub fn sts_input(&self, text: &str, mode: InputMode) -> Result<StsInput, PipelineError> {
        Ok(match mode {
            InputMode::Image => StsInput::from_image(&self.encode_image(text)?.0),
            InputMode::FloatVector => StsInput::Vector(self.project(text)?),
            InputMode::Tokens => StsInput::Tokens(self.tokenize(text)?),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(VOCAB_FILE))?);
        self.vocab.write_tsv(&mut w)?;
        w.flush()?;
        self.vae.save(dir)?;
        fs::write(
            dir.join(SETTINGS_FILE),
            serde_json::to_string_pretty(&self.settings)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let vocab = Vocabulary::read_tsv(BufReader::new(File::open(dir.join(VOCAB_FILE))?))?;
        let vae = Vae::load(dir)?;
        let settings = serde_json::from_str(&fs::read_to_string(dir.join(SETTINGS_FILE))?)?;
        Self::new(vocab, vae, settings)
    }
}

fn check_image(spec: &ImageSpec, latent_dim: usize) -> Result<(), PipelineError> {
    spec.validate()?;
    if spec.num_values() != latent_dim {
        return Err(PipelineError::Config(format!(
            "image {}x{}x{} holds {} values but the latent size is {latent_dim}",
            spec.rows,
            spec.cols,
            spec.channels,
            spec.num_values()
        )));
    }
    Ok(())
}

pub struct PipelineTraining {
    pub pipeline: TexImPipeline,
    pub report: FitReport,
}

/// Clean `texts`, learn a vocabulary of at most `vocab_size` units and train
/// the autoencoder on the tokenised corpus.
pub fn train_pipeline<S: AsRef<str>>(
    texts: &[S],
    vocab_size: usize,
    vae_config: &VaeConfig,
    settings: EncodingSettings,
) -> Result<PipelineTraining, PipelineError> {
    vae_config.validate()?;
    check_image(&settings.image, vae_config.latent_dim)?;
    let cleaned: Vec<String> = texts
        .iter()
        .map(|t| clean_text_with(t.as_ref(), &settings.clean))
        .filter(|t| !t.is_empty())
        .collect();
    let vocab = Vocabulary::train(&cleaned, vocab_size)?;
    let seqs = cleaned
        .iter()
        .map(|t| vocab.tokenize(t, vae_config.seq_len))
        .collect::<Result<Vec<_>, _>>()?;
    let trained = train_vae(&seqs, vocab.size(), vae_config)?;
    Ok(PipelineTraining {
        pipeline: TexImPipeline::new(vocab, trained.model, settings)?,
        report: trained.report,
    })
}
