use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Reconstruction, VaeConfig, VaeError};
use crate::nn::{
    checkpoint, mask_rows, Activation, ConvBlock, Linear, ParamId, ParamStore, RunMode, Tape, Tensor, TslfnBlock, Var,
};
use crate::tokenizer::TokenSequence;
use crate::training::mix_seed;

pub const CHECKPOINT_FILE: &str = "vae.ckpt";
pub const SIDECAR_FILE: &str = "vae.json";

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// Scalar pieces of one item's objective.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub kl: f64,
    pub reconstruction: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    vocab_size: usize,
    config: VaeConfig,
}

/// Position indices `θ + iδ` for real tokens and `−1` for padding.
pub fn position_indices(seq: &TokenSequence, offset: usize, step: usize) -> Vec<i64> {
    (0..seq.len())
        .map(|i| {
            if i < seq.true_length {
                (offset + i * step) as i64
            } else {
                -1
            }
        })
        .collect()
}

/// `z = exp(logvar/2) · ε + μ`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    assert_eq!(mu.len(), logvar.len());
    assert_eq!(mu.len(), eps.len());
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| (0.5 * lv).exp() * e + m)
        .collect()
}

pub struct Vae {
    config: VaeConfig,
    vocab_size: usize,
    store: ParamStore,
    token_embedding: ParamId,
    position_embedding: ParamId,
    enc_conv: Vec<ConvBlock>,
    enc_blocks: Vec<TslfnBlock>,
    mu_head: Linear,
    logvar_head: Linear,
    dec_input: Linear,
    dec_blocks: Vec<TslfnBlock>,
    dec_conv: Vec<ConvBlock>,
    dec_output: Linear,
}

impl Vae {
    /// Fresh model for a vocabulary of `vocab_size` units (ids `1..=|V|`).
    pub fn new(config: VaeConfig, vocab_size: usize) -> Result<Self, VaeError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(VaeError::Config("vocabulary is empty".into()));
        }
        let c = &config;
        let (d, l) = (c.width, c.seq_len);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, 0x5EED, 0));
        let mut store = ParamStore::new();

        let emb_bound = (3.0 / d as f64).sqrt();
        let token_embedding = store.add_uniform("embed.token", vec![vocab_size + 1, d], emb_bound, &mut rng);
        store.value_mut(token_embedding).data_mut()[..d].fill(0.0);
        let pos_rows = c.position_offset + (l - 1) * c.position_step + 1;
        let position_embedding = store.add_uniform("embed.position", vec![pos_rows, d], emb_bound, &mut rng);

        let blocks = if c.conv_only { 0 } else { c.transformer_blocks };
        let enc_conv = (0..c.conv_blocks)
            .map(|i| ConvBlock::new(&mut store, &format!("enc.conv{i}"), d, c.conv_filter_width, &mut rng))
            .collect();
        let enc_blocks = (0..blocks)
            .map(|i| {
                TslfnBlock::new(
                    &mut store,
                    &format!("enc.tslfn{i}"),
                    d,
                    c.heads,
                    c.share_tanh_weights,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mu_head = Linear::new(&mut store, "enc.mu", d, c.latent_dim, true, &mut rng);
        let logvar_head = Linear::new(&mut store, "enc.logvar", d, c.latent_dim, true, &mut rng);

        let dec_input = Linear::new(&mut store, "dec.input", c.latent_dim, l * d, true, &mut rng);
        let dec_blocks = (0..blocks)
            .map(|i| {
                TslfnBlock::new(
                    &mut store,
                    &format!("dec.tslfn{i}"),
                    d,
                    c.heads,
                    c.share_tanh_weights,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dec_conv = (0..c.conv_blocks)
            .map(|i| ConvBlock::new(&mut store, &format!("dec.conv{i}"), d, c.conv_filter_width, &mut rng))
            .collect();
        let out_width = match c.reconstruction {
            Reconstruction::TokenCrossEntropy => vocab_size + 1,
            Reconstruction::EmbeddingMse => d,
        };
        let dec_output = Linear::new(&mut store, "dec.output", d, out_width, true, &mut rng);

        Ok(Self {
            config,
            vocab_size,
            store,
            token_embedding,
            position_embedding,
            enc_conv,
            enc_blocks,
            mu_head,
            logvar_head,
            dec_input,
            dec_blocks,
            dec_conv,
            dec_output,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    /// `|V|`; decoder logits have `|V| + 1` columns.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn check_sequence(&self, seq: &TokenSequence) -> Result<Vec<bool>, VaeError> {
        if seq.len() != self.config.seq_len {
            return Err(VaeError::SequenceLength {
                expected: self.config.seq_len,
                got: seq.len(),
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize > self.vocab_size) {
            return Err(VaeError::TokenOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        if seq.true_length == 0 {
            return Err(VaeError::AllPadding);
        }
        Ok(seq.valid_mask())
    }

    /// Token plus position embeddings, `[L×D]`, with zero padding rows.
    pub fn embed(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<Var, VaeError> {
        if seq.len() != self.config.seq_len {
            return Err(VaeError::SequenceLength {
                expected: self.config.seq_len,
                got: seq.len(),
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize > self.vocab_size) {
            return Err(VaeError::TokenOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        let tokens: Vec<Option<usize>> = seq.ids.iter().map(|&id| (id != 0).then_some(id as usize)).collect();
        let positions: Vec<Option<usize>> =
            position_indices(seq, self.config.position_offset, self.config.position_step)
                .into_iter()
                .map(|p| usize::try_from(p).ok())
                .collect();
        let tok_table = tape.param(self.token_embedding);
        let pos_table = tape.param(self.position_embedding);
        let t = tape.gather(tok_table, &tokens);
        let p = tape.gather(pos_table, &positions);
        Ok(tape.add(t, p))
    }

    fn encode_embedded(
        &self,
        tape: &mut Tape<'_>,
        s: Var,
        valid: &[bool],
        mode: &mut RunMode,
    ) -> Result<(Var, Var), VaeError> {
        let c = &self.config;
        let mut x = s;
        for conv in &self.enc_conv {
            x = conv.forward(tape, x, valid, Activation::Gelu, c.dropout, mode)?;
        }
        for block in &self.enc_blocks {
            x = block.forward(tape, x, valid)?;
            x = mask_rows(tape, x, valid);
        }
        let pooled = tape.masked_mean_rows(x, valid);
        Ok((
            self.mu_head.forward(tape, pooled),
            self.logvar_head.forward(tape, pooled),
        ))
    }

    /// `(μ, log σ²)`, each `[1×dim_e]`.
    pub fn encode(&self, tape: &mut Tape<'_>, seq: &TokenSequence, mode: &mut RunMode) -> Result<(Var, Var), VaeError> {
        let valid = self.check_sequence(seq)?;
        let s = self.embed(tape, seq)?;
        self.encode_embedded(tape, s, &valid, mode)
    }

    pub fn reparameterize(&self, tape: &mut Tape<'_>, mu: Var, logvar: Var, eps: Vec<f64>) -> Var {
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let noise = tape.mul_const(sigma, eps);
        tape.add(noise, mu)
    }

    /// Per-position outputs `[L×(|V|+1)]` (or `[L×D]` in embedding mode).
    pub fn decode(&self, tape: &mut Tape<'_>, z: Var, mode: &mut RunMode) -> Result<Var, VaeError> {
        let c = &self.config;
        let all = vec![true; c.seq_len];
        let h = self.dec_input.forward(tape, z);
        let mut x = tape.reshape(h, vec![c.seq_len, c.width]);
        for block in &self.dec_blocks {
            x = block.forward(tape, x, &all)?;
        }
        for conv in &self.dec_conv {
            x = conv.forward(tape, x, &all, Activation::Gelu, c.dropout, mode)?;
        }
        Ok(self.dec_output.forward(tape, x))
    }

    /// `J′ = W_a · KL + reconstruction` for one sequence.
    ///
    /// `eps` of `None` uses `z = μ`; otherwise it must hold `dim_e` draws.
    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        seq: &TokenSequence,
        kl_weight: f64,
        eps: Option<Vec<f64>>,
        mode: &mut RunMode,
    ) -> Result<LossParts, VaeError> {
        let valid = self.check_sequence(seq)?;
        let s = self.embed(tape, seq)?;
        let (mu, logvar) = self.encode_embedded(tape, s, &valid, mode)?;
        let z = match eps {
            Some(e) => {
                if e.len() != self.config.latent_dim {
                    return Err(VaeError::Config(format!(
                        "eps has {} values, expected {}",
                        e.len(),
                        self.config.latent_dim
                    )));
                }
                self.reparameterize(tape, mu, logvar, e)
            }
            None => mu,
        };
        let out = self.decode(tape, z, mode)?;
        let recon = match self.config.reconstruction {
            Reconstruction::TokenCrossEntropy => {
                let targets: Vec<usize> = seq.ids.iter().map(|&id| id as usize).collect();
                tape.cross_entropy(out, &targets, &valid)
            }
            Reconstruction::EmbeddingMse => {
                let target = tape.tensor(s);
                let target = tape.constant(target);
                let diff = tape.sub(out, target);
                let diff = mask_rows(tape, diff, &valid);
                let sq = tape.mul(diff, diff);
                let total = tape.sum(sq);
                let count = seq.true_length * self.config.width;
                tape.scale(total, 1.0 / count as f64)
            }
        };
        let kl = tape.kl_gaussian(mu, logvar);
        let weighted = tape.scale(kl, kl_weight);
        let total = tape.add(weighted, recon);
        let (kl, reconstruction) = (tape.scalar(kl), tape.scalar(recon));
        Ok(LossParts {
            total,
            kl,
            reconstruction,
        })
    }

    /// Training-mode objective: dropout and `ε` both drawn from `seed`.
    pub fn training_loss(
        &self,
        tape: &mut Tape<'_>,
        seq: &TokenSequence,
        kl_weight: f64,
        seed: u64,
    ) -> Result<Var, VaeError> {
        let mut mode = RunMode::training(seed);
        let eps: Vec<f64> = (0..self.config.latent_dim)
            .map(|_| StandardNormal.sample(mode.rng()))
            .collect();
        Ok(self.loss(tape, seq, kl_weight, Some(eps), &mut mode)?.total)
    }

    /// Inference-mode `(μ, log σ²)` plus a `z` drawn with the given `eps`.
    pub fn latent(&self, seq: &TokenSequence, eps: Option<&[f64]>) -> Result<LatentCode, VaeError> {
        let mut tape = Tape::new(&self.store);
        let (mu, logvar) = self.encode(&mut tape, seq, &mut RunMode::inference())?;
        let mu = tape.value(mu).to_vec();
        let logvar = tape.value(logvar).to_vec();
        let z = match eps {
            Some(e) => reparameterize(&mu, &logvar, e),
            None => mu.clone(),
        };
        Ok(LatentCode { mu, logvar, z })
    }

    /// Deterministic fixed-length representation: the posterior mean.
    pub fn project(&self, seq: &TokenSequence) -> Result<Vec<f64>, VaeError> {
        let mut tape = Tape::new(&self.store);
        let (mu, _) = self.encode(&mut tape, seq, &mut RunMode::inference())?;
        let mu = tape.value(mu).to_vec();
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(crate::nn::NnError::NonFinite(format!("latent component {i}")).into());
        }
        Ok(mu)
    }

    /// Inference-mode decoder output for `z`.
    pub fn decode_logits(&self, z: &[f64]) -> Result<Tensor, VaeError> {
        let mut tape = Tape::new(&self.store);
        let zv = tape.constant(Tensor::row_vector(z.to_vec()));
        let out = self.decode(&mut tape, zv, &mut RunMode::inference())?;
        Ok(tape.tensor(out))
    }

    /// Writes the parameter checkpoint and a JSON sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), VaeError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CHECKPOINT_FILE), checkpoint::encode_store(&self.store))?;
        let sidecar = Sidecar {
            vocab_size: self.vocab_size,
            config: self.config.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| VaeError::Sidecar(e.to_string()))?;
        fs::write(dir.join(SIDECAR_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, VaeError> {
        let json = fs::read_to_string(dir.join(SIDECAR_FILE))?;
        let sidecar: Sidecar = serde_json::from_str(&json).map_err(|e| VaeError::Sidecar(e.to_string()))?;
        let mut vae = Self::new(sidecar.config, sidecar.vocab_size)?;
        let bytes = fs::read(dir.join(CHECKPOINT_FILE))?;
        vae.store.load_named(checkpoint::decode_tensors(&bytes)?)?;
        Ok(vae)
    }
}
