//! Mini-batch Adam loop shared by the autoencoder and the classifier.
//!
//! Per-item gradients inside a batch are computed with [`crate::par::map`]
//! and summed in item order, so results do not depend on thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::nn::{Adam, Gradients, NnError, ParamStore, Tape, Tensor, Var};
use crate::par;

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Passed to the loss closure for every item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    /// Zero-based epoch.
    pub epoch: usize,
    /// `Some` in training mode (dropout, sampling); `None` for evaluation.
    pub seed: Option<u64>,
}

impl StepContext {
    pub fn eval(epoch: usize) -> Self {
        Self { epoch, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Schedule value reported by the caller (the KL weight for the VAE).
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Mean evaluation-mode training loss before the first update.
    pub initial_train_loss: f64,
    /// Same quantity for the restored parameters.
    pub final_train_loss: f64,
}

/// Patience counter over a validation loss. Only strict improvements reset it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stale
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn check_finite(loss: f64, what: &str) -> Result<f64, NnError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(NnError::NonFinite(format!("{what} is {loss}")))
    }
}

/// Mean loss and mean gradient over `items`.
pub fn batch_gradients<T, F>(store: &ParamStore, items: &[T], loss: F) -> Result<(f64, Gradients), NnError>
where
    T: Sync,
    F: Fn(&mut Tape<'_>, usize, &T) -> Result<Var, NnError> + Sync,
{
    let parts = par::map(items, |i, item| {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape, i, item)?;
        Ok::<_, NnError>((tape.scalar(l), tape.backward(l)))
    });
    let mut total = 0.0;
    let mut grads = Gradients::new(store.len());
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.accumulate(&g);
    }
    let n = items.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean forward-only loss over `items`.
pub fn mean_loss<T, F>(store: &ParamStore, items: &[T], loss: F) -> Result<f64, NnError>
where
    T: Sync,
    F: Fn(&mut Tape<'_>, usize, &T) -> Result<Var, NnError> + Sync,
{
    if items.is_empty() {
        return Ok(0.0);
    }
    let parts = par::map(items, |i, item| {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape, i, item)?;
        Ok::<_, NnError>(tape.scalar(l))
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / items.len() as f64)
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Train `store` on `train` with early stopping on `val`, then restore the
/// parameters of the best validation epoch.
///
/// `loss` builds the per-item objective; `weight` is only logged.
pub fn fit<T, F, W>(
    store: &mut ParamStore,
    train: &[T],
    val: &[T],
    cfg: &FitConfig,
    loss: F,
    weight: W,
) -> Result<FitReport, NnError>
where
    T: Sync,
    F: Fn(&mut Tape<'_>, &T, StepContext) -> Result<Var, NnError> + Sync,
    W: Fn(usize) -> f64,
{
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.patience == 0 {
        return Err(NnError::Config(
            "epochs, batch size and patience must be positive".into(),
        ));
    }
    if train.is_empty() || val.is_empty() {
        return Err(NnError::Input("training and validation sets must be non-empty".into()));
    }
    let eval_at = |store: &ParamStore, items: &[T], epoch: usize| {
        mean_loss(store, items, |tape, _, item| loss(tape, item, StepContext::eval(epoch)))
    };

    let initial_train_loss = check_finite(eval_at(store, train, 0)?, "initial training loss")?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = snapshot(store);
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&T> = chunk.iter().map(|&i| &train[i]).collect();
            let base = (b * cfg.batch_size) as u64;
            let (l, grads) = batch_gradients(store, &items, |tape, i, item| {
                let seed = mix_seed(cfg.seed, epoch as u64 + 1, base + i as u64);
                loss(
                    tape,
                    item,
                    StepContext {
                        epoch,
                        seed: Some(seed),
                    },
                )
            })?;
            check_finite(l, "training loss")?;
            epoch_total += l * chunk.len() as f64;
            store.set_grads(&grads);
            adam.step(store);
        }
        let train_loss = epoch_total / train.len() as f64;
        let val_loss = check_finite(eval_at(store, val, epoch)?, "validation loss")?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            weight: weight(epoch),
        });
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best_params = snapshot(store),
            Verdict::Stale => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    restore(store, best_params);
    let final_train_loss = eval_at(store, train, stopper.best_epoch())?;
    Ok(FitReport {
        records,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        stopped_early,
        initial_train_loss,
        final_train_loss,
    })
}

/// `epoch,train_loss,val_loss,<weight_name>` with one row per epoch.
pub fn write_log_csv<Wr: std::io::Write>(records: &[EpochRecord], weight_name: &str, mut w: Wr) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,{weight_name}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.10},{:.10},{:.10}",
            r.epoch, r.train_loss, r.val_loss, r.weight
        )?;
    }
    Ok(())
}
