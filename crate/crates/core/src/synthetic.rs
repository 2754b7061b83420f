//! Seeded synthetic corpora and an end-to-end similarity benchmark.
//!
//! Documents are drawn from topics of invented words; each summary is a few
//! words from its document's topic, so bodies and summaries share meaning
//! but differ sharply in length.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_sts_pairs, split, CleanOptions, CorpusError, RawDocument, StsPair};
use crate::imager::{ImageSpec, Quantization};
use crate::pipeline::{train_pipeline, EncodingSettings, PipelineError, TexImPipeline};
use crate::sts::{evaluate, train_sts, InputMode, Metrics, StsConfig, StsError, StsExample};
use crate::training::mix_seed;
use crate::vae::VaeConfig;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// `n` distinct lowercase two-syllable words, in seeded order.
pub fn pseudo_words(n: usize, seed: u64) -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut words: Vec<String> = syllables
        .iter()
        .flat_map(|a| syllables.iter().map(move |b| format!("{a}{b}")))
        .collect();
    assert!(n <= words.len(), "at most {} pseudo-words available", words.len());
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    words.truncate(n);
    words
}

/// Uniformly random word sequences over a fixed word list.
pub fn random_texts(n: usize, vocab_words: usize, len: (usize, usize), seed: u64) -> Vec<String> {
    let words = pseudo_words(vocab_words, mix_seed(seed, 1, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2, 0));
    (0..n)
        .map(|_| {
            let k = rng.random_range(len.0..=len.1);
            (0..k)
                .map(|_| words[rng.random_range(0..words.len())].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicCorpus {
    pub topics: usize,
    pub words_per_topic: usize,
    /// Inclusive word-count range of document bodies.
    pub body_words: (usize, usize),
    /// Inclusive word-count range of summaries.
    pub summary_words: (usize, usize),
}

impl Default for TopicCorpus {
    fn default() -> Self {
        Self {
            topics: 40,
            words_per_topic: 6,
            body_words: (20, 40),
            summary_words: (2, 5),
        }
    }
}

impl TopicCorpus {
    /// `n` documents with summaries; document `i` has topic `i mod topics`
    /// after a seeded permutation.
    pub fn documents(&self, n: usize, seed: u64) -> Vec<RawDocument> {
        let words = pseudo_words(self.topics * self.words_per_topic, mix_seed(seed, 3, 0));
        let lexicon: Vec<&[String]> = words.chunks(self.words_per_topic).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4, 0));
        let mut topics: Vec<usize> = (0..n).map(|i| i % self.topics).collect();
        topics.shuffle(&mut rng);
        let sample = |topic: usize, range: (usize, usize), rng: &mut ChaCha8Rng| {
            let k = rng.random_range(range.0..=range.1);
            (0..k)
                .map(|_| lexicon[topic][rng.random_range(0..self.words_per_topic)].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        topics
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let body = sample(t, self.body_words, &mut rng);
                let summary = sample(t, self.summary_words, &mut rng);
                RawDocument {
                    id: format!("doc{i:04}"),
                    body,
                    summary: Some(summary),
                }
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sts(#[from] StsError),
}

/// Paired-sequence benchmark: build pairs, train an encoder on the training
/// texts, train a classifier on encoded pairs, score the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct StsBenchmark {
    pub pairs: usize,
    pub shuffle_ratio: f64,
    pub corpus: TopicCorpus,
    pub vocab_size: usize,
    pub vae: VaeConfig,
    pub sts: StsConfig,
    pub image: ImageSpec,
    pub seed: u64,
}

impl Default for StsBenchmark {
    fn default() -> Self {
        Self {
            pairs: 500,
            shuffle_ratio: 0.5,
            corpus: TopicCorpus {
                topics: 20,
                words_per_topic: 4,
                body_words: (20, 40),
                summary_words: (3, 6),
            },
            vocab_size: 400,
            vae: VaeConfig {
                seq_len: 48,
                width: 16,
                latent_dim: 64,
                dropout: 0.0,
                learning_rate: 0.003,
                epochs: 60,
                patience: 10,
                // W_a starts near zero; at 0.5 the posterior collapses
                anneal_b: -8.0,
                ..VaeConfig::default()
            },
            sts: StsConfig {
                learning_rate: 0.003,
                swap_augment: true,
                ..StsConfig::default()
            },
            image: ImageSpec {
                rows: 8,
                cols: 8,
                channels: 1,
            },
            seed: 0,
        }
    }
}

pub struct BenchmarkData {
    pub split: crate::corpus::CorpusSplit<StsPair>,
}

impl StsBenchmark {
    /// Same benchmark with every component reseeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut b = self.clone();
        b.seed = seed;
        b.vae.seed = mix_seed(seed, 10, 0);
        b.sts.seed = mix_seed(seed, 11, 0);
        b
    }

    pub fn data(&self) -> Result<BenchmarkData, BenchmarkError> {
        let docs = self.corpus.documents(self.pairs, mix_seed(self.seed, 20, 0));
        let pairs = build_sts_pairs(
            &docs,
            self.shuffle_ratio,
            mix_seed(self.seed, 21, 0),
            &CleanOptions::default(),
        )?;
        let split = split(pairs, &self.sts.split, mix_seed(self.seed, 22, 0))?;
        Ok(BenchmarkData { split })
    }

    /// Encoder trained on the distinct texts of the training pairs.
    pub fn encoder(&self, data: &BenchmarkData, conv_only: bool) -> Result<TexImPipeline, BenchmarkError> {
        let texts: BTreeSet<&str> = data
            .split
            .train
            .iter()
            .flat_map(|p| [p.text_a.as_str(), p.text_b.as_str()])
            .collect();
        let texts: Vec<&str> = texts.into_iter().collect();
        let cfg = VaeConfig {
            conv_only,
            latent_dim: self.image.num_values(),
            ..self.vae.clone()
        };
        let settings = EncodingSettings {
            clean: CleanOptions::default(),
            image: self.image,
            quantization: Quantization::Truncate,
        };
        Ok(train_pipeline(&texts, self.vocab_size, &cfg, settings)?.pipeline)
    }

    /// Test-split metrics of a classifier trained in `mode` on `encoder`.
    pub fn score(
        &self,
        data: &BenchmarkData,
        encoder: &TexImPipeline,
        mode: InputMode,
    ) -> Result<Metrics, BenchmarkError> {
        let encode = |pairs: &[StsPair]| -> Result<Vec<StsExample>, PipelineError> {
            pairs
                .iter()
                .map(|p| {
                    Ok(StsExample {
                        a: encoder.sts_input(&p.text_a, mode)?,
                        b: encoder.sts_input(&p.text_b, mode)?,
                        label: p.label,
                    })
                })
                .collect()
        };
        let train = encode(&data.split.train)?;
        let val = encode(&data.split.validation)?;
        let test = encode(&data.split.test)?;
        let (seq_len, vocab) = match mode {
            InputMode::Image => (self.image.num_values(), None),
            InputMode::FloatVector => (encoder.vae.config().latent_dim, None),
            InputMode::Tokens => (encoder.vae.config().seq_len, Some(encoder.vocab.size())),
        };
        let cfg = StsConfig {
            input_mode: mode,
            ..self.sts.clone()
        };
        let trained = train_sts(&train, &val, &cfg, seq_len, vocab)?;
        Ok(evaluate(&trained.model, &test, cfg.threshold)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct_letters() {
        let w = pseudo_words(300, 1);
        let set: BTreeSet<_> = w.iter().collect();
        assert_eq!(set.len(), 300);
        assert!(w.iter().all(|x| x.chars().all(|c| c.is_ascii_lowercase())));
        assert_eq!(w, pseudo_words(300, 1));
    }

    #[test]
    fn random_texts_respect_bounds() {
        let t = random_texts(50, 20, (3, 9), 7);
        let vocab: BTreeSet<&str> = t.iter().flat_map(|s| s.split(' ')).collect();
        assert!(vocab.len() <= 20);
        assert!(t.iter().all(|s| (3..=9).contains(&s.split(' ').count())));
    }

    #[test]
    fn summaries_share_topic_words() {
        let c = TopicCorpus::default();
        let docs = c.documents(80, 3);
        for d in &docs {
            let body: BTreeSet<&str> = d.body.split(' ').collect();
            let n = d.body.split(' ').count();
            assert!((20..=40).contains(&n));
            let summary = d.summary.as_deref().unwrap();
            let k = summary.split(' ').count();
            assert!((2..=5).contains(&k));
            // every summary word comes from the document's six-word topic
            let topic_words: BTreeSet<&str> = body.iter().copied().chain(summary.split(' ')).collect();
            assert!(topic_words.len() <= 6);
        }
    }
}
