use super::{Vae, VaeConfig, VaeError};
use crate::corpus::split;
use crate::nn::{NnError, ParamStore};
use crate::tokenizer::TokenSequence;
use crate::training::{fit, mix_seed, FitConfig, FitReport};

pub struct VaeTraining {
    pub model: Vae,
    pub report: FitReport,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Self-supervised training on `sequences` (already padded to `seq_len`)
/// with a seeded train/validation split and early stopping.
pub fn train_vae(sequences: &[TokenSequence], vocab_size: usize, config: &VaeConfig) -> Result<VaeTraining, VaeError> {
    config.validate()?;
    if sequences.len() < config.batch_size {
        return Err(VaeError::CorpusTooSmall {
            got: sequences.len(),
            batch: config.batch_size,
        });
    }
    let mut model = Vae::new(config.clone(), vocab_size)?;
    for s in sequences {
        model.check_sequence(s)?;
    }
    let parts = split(
        sequences.to_vec(),
        &[1.0 - config.validation_ratio, config.validation_ratio],
        mix_seed(config.seed, 0x5917, 0),
    )?;
    if parts.validation.is_empty() {
        return Err(VaeError::CorpusTooSmall {
            got: sequences.len(),
            batch: config.batch_size,
        });
    }
    let schedule = config.schedule();
    let fit_cfg = FitConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        patience: config.patience,
        learning_rate: config.learning_rate,
        seed: mix_seed(config.seed, 0x7EA1, 0),
    };

    // Layers only hold parameter ids and read values through the tape, so
    // the store can be moved out while the model itself is borrowed.
    let mut store = std::mem::replace(model.store_mut(), ParamStore::new());
    let shape = &model;
    let report = fit(
        &mut store,
        &parts.train,
        &parts.validation,
        &fit_cfg,
        |tape, seq, ctx| {
            let w = schedule.weight(ctx.epoch);
            let out = match ctx.seed {
                Some(seed) => shape.training_loss(tape, seq, w, seed),
                None => shape
                    .loss(tape, seq, w, None, &mut crate::nn::RunMode::inference())
                    .map(|p| p.total),
            };
            out.map_err(|e| match e {
                VaeError::Nn(n) => n,
                other => NnError::Input(other.to_string()),
            })
        },
        |epoch| schedule.weight(epoch),
    );
    *model.store_mut() = store;
    let report = report?;
    Ok(VaeTraining {
        model,
        report,
        train_size: parts.train.len(),
        validation_size: parts.validation.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize, len: usize) -> Vec<TokenSequence> {
        (0..n)
            .map(|i| {
                let ids: Vec<u32> = (0..(2 + i % 5)).map(|k| 1 + ((i * 3 + k * 7) % 9) as u32).collect();
                TokenSequence::from_ids(ids, len).unwrap()
            })
            .collect()
    }

    fn cfg() -> VaeConfig {
        VaeConfig {
            seq_len: 8,
            width: 8,
            latent_dim: 4,
            heads: 2,
            transformer_blocks: 1,
            conv_blocks: 1,
            epochs: 4,
            batch_size: 8,
            seed: 5,
            ..VaeConfig::default()
        }
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        let Err(err) = train_vae(&corpus(5, 8), 10, &cfg()) else {
            panic!("accepted a tiny corpus")
        };
        assert!(matches!(err, VaeError::CorpusTooSmall { got: 5, batch: 8 }));
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = corpus(40, 8);
        let a = train_vae(&data, 10, &cfg()).unwrap();
        let b = train_vae(&data, 10, &cfg()).unwrap();
        assert_eq!(
            crate::nn::checkpoint::encode_store(a.model.store()),
            crate::nn::checkpoint::encode_store(b.model.store())
        );
        assert_eq!(a.report, b.report);
        assert!(a.report.records.len() <= 4);
        assert_eq!((a.train_size, a.validation_size), (32, 8));
    }
}
