//! Run configuration: one TOML file with a section per component.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;
use texim_core::corpus::CleanOptions;
use texim_core::imager::{ImageSpec, MemoryReportParams, Quantization};
use texim_core::pipeline::EncodingSettings;
use texim_core::sts::{InputMode, StsConfig};
use texim_core::vae::VaeConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Autoencoder without TSLFN blocks.
    FastC,
    /// Classifier on unquantised vectors.
    TexFast,
    /// Classifier on token ids.
    Discrete,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Root for every output; created on demand.
    pub output: PathBuf,
    /// JSON-lines documents `{"id", "body", "summary"}`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Labelled pairs `text_a<TAB>text_b<TAB>label`; built from `corpus`
    /// when absent.
    #[serde(default)]
    pub pairs: Option<PathBuf>,
    /// One text per line for `encode`.
    #[serde(default)]
    pub encode_input: Option<PathBuf>,
    /// Labelled pairs to compare in `report`.
    #[serde(default)]
    pub report_pairs: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    pub lowercase: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            lowercase: CleanOptions::default().lowercase,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    /// Fraction of documents whose summary is swapped for another's.
    pub shuffle_ratio: f64,
}

impl Default for PairsSection {
    fn default() -> Self {
        Self { shuffle_ratio: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub quantization: Quantization,
}

impl Default for ImageSection {
    fn default() -> Self {
        let g = ImageSpec::GRAY_32X16;
        Self {
            rows: g.rows,
            cols: g.cols,
            channels: g.channels,
            quantization: Quantization::Truncate,
        }
    }
}

impl ImageSection {
    pub fn spec(&self) -> ImageSpec {
        ImageSpec {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into `[vae]` and `[sts]` and used for pair
    /// construction and splits.
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub pairs: PairsSection,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub sts: StsConfig,
    #[serde(default)]
    pub image: ImageSection,
    #[serde(default)]
    pub memory: MemoryReportParams,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {}", e.message())))
    }

    /// Read `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// Apply command-line overrides; the master seed reaches every stage.
    pub fn apply(&mut self, seed: Option<u64>, ablation: Option<Ablation>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.vae.seed = self.seed;
        self.sts.seed = self.seed;
        match ablation {
            Some(Ablation::FastC) => self.vae.conv_only = true,
            Some(Ablation::TexFast) => self.sts.input_mode = InputMode::FloatVector,
            Some(Ablation::Discrete) => self.sts.input_mode = InputMode::Tokens,
            None => {}
        }
    }

    /// Checks that need no file system access.
    pub fn validate(&self) -> Result<(), CliError> {
        self.vae
            .validate()
            .map_err(|e| CliError::config(format!("[vae] {e}")))?;
        self.sts
            .validate()
            .map_err(|e| CliError::config(format!("[sts] {e}")))?;
        let spec = self.image.spec();
        spec.validate().map_err(|e| CliError::config(format!("[image] {e}")))?;
        if spec.num_values() != self.vae.latent_dim {
            return Err(CliError::config(format!(
                "[image] {}x{}x{} holds {} values but [vae] latent_dim is {}",
                spec.rows,
                spec.cols,
                spec.channels,
                spec.num_values(),
                self.vae.latent_dim
            )));
        }
        if self.tokenizer.vocab_size < 2 {
            return Err(CliError::config("[tokenizer] vocab_size must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.pairs.shuffle_ratio) {
            return Err(CliError::config(format!(
                "[pairs] shuffle_ratio {} outside [0, 1]",
                self.pairs.shuffle_ratio
            )));
        }
        let m = &self.memory;
        if m.avg_text_bytes.is_nan() || m.avg_text_bytes <= 0.0 || m.sequence_tokens == 0 || m.float_bytes == 0 {
            return Err(CliError::config("[memory] sizes must be positive"));
        }
        Ok(())
    }

    pub fn encoding(&self) -> EncodingSettings {
        EncodingSettings {
            clean: CleanOptions {
                lowercase: self.preprocessing.lowercase,
            },
            image: self.image.spec(),
            quantization: self.image.quantization,
        }
    }

    fn variant_suffix(&self) -> &'static str {
        if self.vae.conv_only {
            "-fast-c"
        } else {
            ""
        }
    }

    pub fn encoder_dir(&self) -> PathBuf {
        self.paths.output.join(format!("encoder{}", self.variant_suffix()))
    }

    pub fn images_dir(&self) -> PathBuf {
        self.paths.output.join(format!("images{}", self.variant_suffix()))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.paths.output.join(format!("report{}", self.variant_suffix()))
    }

    pub fn sts_dir(&self) -> PathBuf {
        self.paths.output.join(format!(
            "sts-{}{}",
            mode_name(self.sts.input_mode),
            self.variant_suffix()
        ))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.paths.output.join(format!(
            "eval-{}{}",
            mode_name(self.sts.input_mode),
            self.variant_suffix()
        ))
    }

    pub fn memory_csv(&self) -> PathBuf {
        self.paths.output.join("memory_report.csv")
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        for p in [
            &mut self.corpus,
            &mut self.pairs,
            &mut self.encode_input,
            &mut self.report_pairs,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

pub fn mode_name(mode: InputMode) -> &'static str {
    match mode {
        InputMode::Image => "image",
        InputMode::FloatVector => "float_vector",
        InputMode::Tokens => "tokens",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\noutput = \"out\"\n";

    #[test]
    fn defaults_are_consistent() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.image.spec(), ImageSpec::GRAY_32X16);
        assert_eq!(cfg.vae.latent_dim, 512);
        assert!(cfg.preprocessing.lowercase);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[paths]\noutput = \"o\"\n[vae]\nwidht = 3\n").unwrap_err();
        assert!(err.message.contains("widht"), "{}", err.message);
    }

    #[test]
    fn image_must_hold_the_latent_vector() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.image.rows = 8;
        assert!(cfg.validate().unwrap_err().message.contains("latent_dim"));
    }

    #[test]
    fn overrides_reach_every_stage() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.apply(Some(9), Some(Ablation::FastC));
        assert_eq!((cfg.vae.seed, cfg.sts.seed), (9, 9));
        assert!(cfg.vae.conv_only);
        assert!(cfg.encoder_dir().ends_with("encoder-fast-c"));
        cfg.apply(None, Some(Ablation::Discrete));
        assert_eq!(cfg.sts.input_mode, InputMode::Tokens);
        assert!(cfg.sts_dir().ends_with("sts-tokens-fast-c"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[paths]\noutput = \"out\"\ncorpus = \"/abs/c.jsonl\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.output, dir.path().join("out"));
        assert_eq!(cfg.paths.corpus.as_deref(), Some(Path::new("/abs/c.jsonl")));
    }
}
