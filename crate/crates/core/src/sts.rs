//! Twin-channel TSLFN similarity classifier.
//!
//! Each channel lifts its input to a `[L×D]` sequence, runs TSLFN blocks and
//! mean-pools; the two pooled vectors are concatenated and scored by a dense
//! layer and a single logit.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imager::PixelImage;
use crate::nn::{
    checkpoint, dropout, mask_rows, sigmoid, Activation, Linear, NnError, ParamId, ParamStore, RunMode, Tape, Tensor,
    TslfnBlock, Var,
};

use crate::tokenizer::TokenSequence;
use crate::training::{fit, mix_seed, FitConfig, FitReport, StepContext};

pub const CHECKPOINT_FILE: &str = "sts.ckpt";
pub const SIDECAR_FILE: &str = "sts.json";

#[derive(Debug, thiserror::Error)]
pub enum StsError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input does not match mode {0:?}")]
    ModeMismatch(InputMode),
    #[error("input length {got} does not match the model's {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("training set holds only label {0}")]
    SingleClass(u8),
    #[error("model sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Pixel sequences rescaled to `[0, 1]`.
    #[default]
    Image,
    /// Unquantised latent vectors.
    FloatVector,
    /// Embedded token ids.
    Tokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StsConfig {
    pub transformer_blocks: usize,
    pub heads: usize,
    pub width: usize,
    /// Units in the dense layer after concatenation.
    pub hidden: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_mode: InputMode,
    pub tie_channels: bool,
    pub threshold: f64,
    pub share_tanh_weights: bool,
    /// Also train on every pair with its two texts swapped.
    pub swap_augment: bool,
    pub seed: u64,
}

impl Default for StsConfig {
    fn default() -> Self {
        Self {
            transformer_blocks: 1,
            heads: 4,
            width: 16,
            hidden: 32,
            activation: Activation::LeakyRelu,
            dropout: 0.3,
            learning_rate: 0.01,
            split: [0.7, 0.15, 0.15],
            patience: 5,
            batch_size: 16,
            epochs: 50,
            input_mode: InputMode::Image,
            tie_channels: true,
            threshold: 0.5,
            share_tanh_weights: false,
            swap_augment: false,
            seed: 0,
        }
    }
}

impl StsConfig {
    pub fn validate(&self) -> Result<(), StsError> {
        for (name, v) in [
            ("heads", self.heads),
            ("width", self.width),
            ("hidden", self.hidden),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(StsError::Config(format!("{name} must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(StsError::Config(format!(
                "width {} is not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.split.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(StsError::Config(format!("split {:?} must sum to 1", self.split)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(StsError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(StsError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(StsError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StsInput {
    /// Pixel values already divided by 255.
    Pixels(Vec<f64>),
    Vector(Vec<f64>),
    Tokens(TokenSequence),
}

impl StsInput {
    pub fn from_image(img: &PixelImage) -> Self {
        StsInput::Pixels(img.pixels().iter().map(|&p| p as f64 / 255.0).collect())
    }

    pub fn mode(&self) -> InputMode {
        match self {
            StsInput::Pixels(_) => InputMode::Image,
            StsInput::Vector(_) => InputMode::FloatVector,
            StsInput::Tokens(_) => InputMode::Tokens,
        }
    }

    fn len(&self) -> usize {
        match self {
            StsInput::Pixels(v) | StsInput::Vector(v) => v.len(),
            StsInput::Tokens(t) => t.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StsExample {
    pub a: StsInput,
    pub b: StsInput,
    pub label: u8,
}

#[derive(Clone, Debug)]
enum Lift {
    /// Position `i` maps `x_i` to `x_i · weight[i] + bias`.
    Scalar {
        weight: ParamId,
        bias: ParamId,
    },
    Tokens {
        table: ParamId,
    },
}

#[derive(Clone, Debug)]
struct Channel {
    lift: Lift,
    position: ParamId,
    blocks: Vec<TslfnBlock>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: StsConfig,
    seq_len: usize,
    vocab_size: Option<usize>,
}

pub struct StsModel {
    config: StsConfig,
    seq_len: usize,
    vocab_size: Option<usize>,
    store: ParamStore,
    channels: Vec<Channel>,
    dense: Linear,
    output: Linear,
}

impl StsModel {
    /// `seq_len` is the pixel count, latent size or token length per input;
    /// `vocab_size` is required in token mode.
    pub fn new(config: StsConfig, seq_len: usize, vocab_size: Option<usize>) -> Result<Self, StsError> {
        config.validate()?;
        if seq_len == 0 {
            return Err(StsError::Config("sequence length must be positive".into()));
        }
        if config.input_mode == InputMode::Tokens && vocab_size.is_none() {
            return Err(StsError::Config("token mode needs a vocabulary size".into()));
        }
        let d = config.width;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x5EED, 1));
        let mut store = ParamStore::new();
        let n_channels = if config.tie_channels { 1 } else { 2 };
        // Unit-variance position and token tables, independent of width; the
        // per-position lift weights start three times wider.
        let bound = 3.0_f64.sqrt();
        let mut channels = Vec::with_capacity(n_channels);
        for c in 0..n_channels {
            let name = format!("channel{c}");
            let lift = match config.input_mode {
                InputMode::Tokens => {
                    let v = vocab_size.unwrap_or(0);
                    let table = store.add_uniform(format!("{name}.token"), vec![v + 1, d], bound, &mut rng);
                    store.value_mut(table).data_mut()[..d].fill(0.0);
                    Lift::Tokens { table }
                }
                _ => Lift::Scalar {
                    weight: store.add_uniform(format!("{name}.lift.weight"), vec![seq_len, d], 3.0 * bound, &mut rng),
                    bias: store.add_zeros(format!("{name}.lift.bias"), vec![1, d]),
                },
            };
            let position = store.add_uniform(format!("{name}.position"), vec![seq_len, d], bound, &mut rng);
            let blocks = (0..config.transformer_blocks)
                .map(|i| {
                    TslfnBlock::new(
                        &mut store,
                        &format!("{name}.tslfn{i}"),
                        d,
                        config.heads,
                        config.share_tanh_weights,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            channels.push(Channel { lift, position, blocks });
        }
        let dense = Linear::new(&mut store, "head.dense", 2 * d, config.hidden, true, &mut rng);
        let output = Linear::new(&mut store, "head.output", config.hidden, 1, true, &mut rng);
        mirror_halves(&mut store, dense.weight, d * config.hidden);
        Ok(Self {
            config,
            seq_len,
            vocab_size,
            store,
            channels,
            dense,
            output,
        })
    }

    pub fn config(&self) -> &StsConfig {
        &self.config
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check(&self, x: &StsInput) -> Result<(), StsError> {
        if x.mode() != self.config.input_mode {
            return Err(StsError::ModeMismatch(self.config.input_mode));
        }
        if x.len() != self.seq_len {
            return Err(StsError::InputLength {
                expected: self.seq_len,
                got: x.len(),
            });
        }
        if let (StsInput::Tokens(t), Some(v)) = (x, self.vocab_size) {
            if t.true_length == 0 || t.ids.iter().any(|&id| id as usize > v) {
                return Err(StsError::ModeMismatch(InputMode::Tokens));
            }
        }
        Ok(())
    }

    /// Pooled `[1×D]` representation of one input in channel `c`.
    fn channel(&self, tape: &mut Tape<'_>, c: usize, x: &StsInput) -> Result<Var, StsError> {
        let ch = &self.channels[c.min(self.channels.len() - 1)];
        let pos = tape.param(ch.position);
        let (seq, valid) = match (&ch.lift, x) {
            (Lift::Scalar { weight, bias }, StsInput::Pixels(v) | StsInput::Vector(v)) => {
                let d = self.config.width;
                let spread: Vec<f64> = v.iter().flat_map(|&x| std::iter::repeat_n(x, d)).collect();
                let spread = tape.constant(Tensor::new(vec![v.len(), d], spread)?);
                let w = tape.param(*weight);
                let b = tape.param(*bias);
                let lifted = tape.mul(spread, w);
                let lifted = tape.add_row(lifted, b);
                (tape.add(lifted, pos), vec![true; v.len()])
            }
            (Lift::Tokens { table }, StsInput::Tokens(t)) => {
                let ids: Vec<Option<usize>> = t.ids.iter().map(|&id| (id != 0).then_some(id as usize)).collect();
                let rows: Vec<Option<usize>> = (0..t.len()).map(|i| (i < t.true_length).then_some(i)).collect();
                let table = tape.param(*table);
                let e = tape.gather(table, &ids);
                let p = tape.gather(pos, &rows);
                (tape.add(e, p), t.valid_mask())
            }
            _ => return Err(StsError::ModeMismatch(self.config.input_mode)),
        };
        let mut h = seq;
        for block in &ch.blocks {
            h = block.forward(tape, h, &valid)?;
            h = mask_rows(tape, h, &valid);
        }
        Ok(tape.masked_mean_rows(h, &valid))
    }

    /// Similarity logit plus the two pooled channel vectors.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        a: &StsInput,
        b: &StsInput,
        mode: &mut RunMode,
    ) -> Result<(Var, Var, Var), StsError> {
        self.check(a)?;
        self.check(b)?;
        let ha = self.channel(tape, 0, a)?;
        let hb = self.channel(tape, 1, b)?;
        let joined = tape.concat_cols(&[ha, hb]);
        let h = self.dense.forward(tape, joined);
        let h = self.config.activation.forward(tape, h);
        let h = dropout(tape, h, self.config.dropout, mode);
        Ok((self.output.forward(tape, h), ha, hb))
    }

    pub fn loss(&self, tape: &mut Tape<'_>, ex: &StsExample, mode: &mut RunMode) -> Result<Var, StsError> {
        let (logit, _, _) = self.forward(tape, &ex.a, &ex.b, mode)?;
        Ok(tape.bce_with_logits(logit, ex.label as f64))
    }

    /// Inference-mode concatenated hidden vector `[h_a, h_b]`.
    pub fn hidden(&self, a: &StsInput, b: &StsInput) -> Result<Vec<f64>, StsError> {
        let mut tape = Tape::new(&self.store);
        let (_, ha, hb) = self.forward(&mut tape, a, b, &mut RunMode::inference())?;
        let mut out = tape.value(ha).to_vec();
        out.extend_from_slice(tape.value(hb));
        Ok(out)
    }

    pub fn probability(&self, a: &StsInput, b: &StsInput) -> Result<f64, StsError> {
        let mut tape = Tape::new(&self.store);
        let (logit, _, _) = self.forward(&mut tape, a, b, &mut RunMode::inference())?;
        Ok(sigmoid(tape.scalar(logit)))
    }

    pub fn save(&self, dir: &Path) -> Result<(), StsError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CHECKPOINT_FILE), checkpoint::encode_store(&self.store))?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            seq_len: self.seq_len,
            vocab_size: self.vocab_size,
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| StsError::Sidecar(e.to_string()))?;
        fs::write(dir.join(SIDECAR_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StsError> {
        let json = fs::read_to_string(dir.join(SIDECAR_FILE))?;
        let s: Sidecar = serde_json::from_str(&json).map_err(|e| StsError::Sidecar(e.to_string()))?;
        let mut model = Self::new(s.config, s.seq_len, s.vocab_size)?;
        let bytes = fs::read(dir.join(CHECKPOINT_FILE))?;
        model.store.load_named(checkpoint::decode_tensors(&bytes)?)?;
        Ok(model)
    }
}

/// Start each dense unit as a function of `h_a - h_b`: the rows reading the
/// second channel are the negated rows reading the first.
fn mirror_halves(store: &mut ParamStore, weight: ParamId, half: usize) {
    let (top, bottom) = store.value_mut(weight).data_mut().split_at_mut(half);
    for (b, t) in bottom.iter_mut().zip(top.iter()) {
        *b = -*t;
    }
}

pub struct StsTraining {
    pub model: StsModel,
    pub report: FitReport,
}

/// Adam on binary cross-entropy with early stopping on `validation`.
pub fn train_sts(
    train: &[StsExample],
    validation: &[StsExample],
    config: &StsConfig,
    seq_len: usize,
    vocab_size: Option<usize>,
) -> Result<StsTraining, StsError> {
    let mut model = StsModel::new(config.clone(), seq_len, vocab_size)?;
    if let Some(first) = train.first() {
        if train.iter().all(|e| e.label == first.label) {
            return Err(StsError::SingleClass(first.label));
        }
    }
    for ex in train.iter().chain(validation) {
        model.check(&ex.a)?;
        model.check(&ex.b)?;
    }
    let swapped: Vec<StsExample>;
    let train = if config.swap_augment {
        swapped = train
            .iter()
            .cloned()
            .chain(train.iter().map(|e| StsExample {
                a: e.b.clone(),
                b: e.a.clone(),
                label: e.label,
            }))
            .collect();
        &swapped[..]
    } else {
        train
    };
    let fit_cfg = FitConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        patience: config.patience,
        learning_rate: config.learning_rate,
        seed: mix_seed(config.seed, 0x7EA1, 1),
    };
    let mut store = std::mem::replace(&mut model.store, ParamStore::new());
    let shape = &model;
    let report = fit(
        &mut store,
        train,
        validation,
        &fit_cfg,
        |tape, ex, ctx: StepContext| {
            let mut mode = match ctx.seed {
                Some(s) => RunMode::training(s),
                None => RunMode::inference(),
            };
            shape.loss(tape, ex, &mut mode).map_err(|e| match e {
                StsError::Nn(n) => n,
                other => NnError::Input(other.to_string()),
            })
        },
        |_| 1.0,
    );
    model.store = store;
    Ok(StsTraining { model, report: report? })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    /// Ratios with an empty denominator are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn from_predictions(labels: &[u8], predicted: &[u8]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (0, 0) => tn += 1,
                _ => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub pair_id: usize,
    pub probability: f64,
    pub label: u8,
    pub prediction: u8,
}

pub fn evaluate(
    model: &StsModel,
    examples: &[StsExample],
    threshold: f64,
) -> Result<(Metrics, Vec<Prediction>), StsError> {
    let probs = crate::par::map(examples, |_, ex| model.probability(&ex.a, &ex.b));
    let mut preds = Vec::with_capacity(examples.len());
    for (i, (ex, p)) in examples.iter().zip(probs).enumerate() {
        let p = p?;
        preds.push(Prediction {
            pair_id: i,
            probability: p,
            label: ex.label,
            prediction: u8::from(p >= threshold),
        });
    }
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let predicted: Vec<u8> = preds.iter().map(|p| p.prediction).collect();
    Ok((Metrics::from_predictions(&labels, &predicted), preds))
}

/// `pair_id,probability,label,prediction`.
pub fn write_predictions_csv<W: Write>(preds: &[Prediction], mut w: W) -> std::io::Result<()> {
    writeln!(w, "pair_id,probability,label,prediction")?;
    for p in preds {
        writeln!(w, "{},{:.10},{},{}", p.pair_id, p.probability, p.label, p.prediction)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;

    fn cfg(mode: InputMode, tie: bool) -> StsConfig {
        StsConfig {
            width: 16,
            heads: 4,
            hidden: 8,
            input_mode: mode,
            tie_channels: tie,
            seed: 4,
            ..StsConfig::default()
        }
    }

    fn pixels(seed: usize, n: usize) -> StsInput {
        StsInput::Pixels((0..n).map(|i| ((i * 37 + seed * 11) % 256) as f64 / 255.0).collect())
    }

    #[test]
    fn metric_formulas() {
        let m = Metrics::from_counts(2, 1, 0, 1);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let perfect = Metrics::from_predictions(&[1, 0, 1], &[1, 0, 1]);
        assert_eq!((perfect.accuracy, perfect.f1), (1.0, 1.0));
        let none = Metrics::from_predictions(&[1, 0], &[0, 0]);
        assert_eq!((none.precision, none.f1, none.accuracy), (0.0, 0.0, 0.5));
    }

    #[test]
    fn tied_channels_swap_halves() {
        let m = StsModel::new(cfg(InputMode::Image, true), 8, None).unwrap();
        let (a, b) = (pixels(1, 8), pixels(2, 8));
        let ab = m.hidden(&a, &b).unwrap();
        let ba = m.hidden(&b, &a).unwrap();
        assert_eq!(ab[..16], ba[16..]);
        assert_eq!(ab[16..], ba[..16]);
        let aa = m.hidden(&a, &a).unwrap();
        assert_eq!(aa[..16], aa[16..]);
        let p = m.probability(&a, &b).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, m.probability(&a, &b).unwrap());
    }

    #[test]
    fn untied_channels_differ() {
        let m = StsModel::new(cfg(InputMode::Image, false), 8, None).unwrap();
        let a = pixels(1, 8);
        let aa = m.hidden(&a, &a).unwrap();
        assert_ne!(aa[..16], aa[16..]);
    }

    #[test]
    fn mode_and_length_are_checked() {
        let m = StsModel::new(cfg(InputMode::Image, true), 8, None).unwrap();
        let v = StsInput::Vector(vec![0.0; 8]);
        assert!(matches!(m.probability(&v, &v), Err(StsError::ModeMismatch(_))));
        assert!(matches!(
            m.probability(&pixels(0, 7), &pixels(0, 8)),
            Err(StsError::InputLength { expected: 8, got: 7 })
        ));
        assert!(StsModel::new(cfg(InputMode::Tokens, true), 8, None).is_err());
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let ex = StsExample {
            a: pixels(0, 8),
            b: pixels(1, 8),
            label: 1,
        };
        let err = train_sts(&[ex.clone(), ex.clone()], &[ex], &cfg(InputMode::Image, true), 8, None);
        assert!(matches!(err, Err(StsError::SingleClass(1))));
    }

    #[test]
    fn swap_augment_equals_explicit_swapped_copies() {
        let pairs: Vec<StsExample> = (0..6)
            .map(|k| StsExample {
                a: pixels(k, 8),
                b: pixels(k + 3, 8),
                label: (k % 2) as u8,
            })
            .collect();
        let swapped: Vec<StsExample> = pairs
            .iter()
            .map(|e| StsExample {
                a: e.b.clone(),
                b: e.a.clone(),
                label: e.label,
            })
            .collect();
        let explicit: Vec<StsExample> = pairs.iter().chain(&swapped).cloned().collect();
        let base = StsConfig {
            epochs: 2,
            batch_size: 4,
            ..cfg(InputMode::Image, true)
        };
        let aug = StsConfig {
            swap_augment: true,
            ..base.clone()
        };
        let a = train_sts(&pairs, &pairs, &aug, 8, None).unwrap();
        let b = train_sts(&explicit, &pairs, &base, 8, None).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        let toks = |ids: &[u32]| StsInput::Tokens(TokenSequence::from_ids(ids.to_vec(), 8).unwrap());
        let cases = [
            (InputMode::Image, pixels(3, 8), pixels(5, 8)),
            (
                InputMode::FloatVector,
                StsInput::Vector(vec![0.3, -1.2, 0.8, 2.0, -0.1, 0.0, 0.5, 1.5]),
                StsInput::Vector(vec![1.0; 8]),
            ),
            (InputMode::Tokens, toks(&[1, 4, 2, 9]), toks(&[3, 3])),
        ];
        for (mode, a, b) in cases {
            for tie in [true, false] {
                let m = StsModel::new(cfg(mode, tie), 8, Some(10)).unwrap();
                let ex = StsExample {
                    a: a.clone(),
                    b: b.clone(),
                    label: 1,
                };
                let report =
                    gradient_check(m.store(), |tape| m.loss(tape, &ex, &mut RunMode::training(9)), 1e-4).unwrap();
                assert!(report.max_relative_error < 1e-4, "{mode:?} tie={tie}");
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let m = StsModel::new(cfg(InputMode::Image, false), 8, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = StsModel::load(dir.path()).unwrap();
        let (a, b) = (pixels(1, 8), pixels(4, 8));
        assert_eq!(m.probability(&a, &b).unwrap(), back.probability(&a, &b).unwrap());
    }
}
