use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Model width `D`.
    pub width: usize,
    /// Head count `H`; must divide `width`.
    pub heads: usize,
    pub seq_len: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.width == 0 || self.heads == 0 || self.seq_len == 0 {
            return Err(NnError::Config(format!(
                "attention dimensions must be positive: {self:?}"
            )));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(NnError::Config(format!(
                "model width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

fn check_mask(tape: &Tape<'_>, z: Var, valid: &[bool]) -> Result<(), NnError> {
    let (l, _) = tape.dims(z);
    if valid.len() != l {
        return Err(NnError::Shape(format!(
            "mask length {} does not match sequence length {l}",
            valid.len()
        )));
    }
    if !valid.iter().any(|&v| v) {
        return Err(NnError::Input("every position is masked".into()));
    }
    if !tape.value(z).iter().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite("attention input".into()));
    }
    Ok(())
}

/// One scaled dot-product head: `softmax(Q Kᵀ / √D) V` with `Q = Z Wq` etc.
///
/// `valid[j] == false` marks padding; those key columns get zero weight.
/// The scale uses the full model width `D = cols(Z)`.
pub fn self_attention(tape: &mut Tape<'_>, z: Var, wq: Var, wk: Var, wv: Var, valid: &[bool]) -> Result<Var, NnError> {
    check_mask(tape, z, valid)?;
    Ok(attention_head(tape, z, wq, wk, wv, valid))
}

fn attention_head(tape: &mut Tape<'_>, z: Var, wq: Var, wk: Var, wv: Var, valid: &[bool]) -> Var {
    let width = tape.dims(z).1 as f64;
    let q = tape.matmul(z, wq);
    let k = tape.matmul(z, wk);
    let v = tape.matmul(z, wv);
    let logits = tape.matmul_t(q, k);
    let logits = tape.scale(logits, 1.0 / width.sqrt());
    let weights = tape.softmax_rows(logits, valid);
    tape.matmul(weights, v)
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// `H` independent heads concatenated along features and projected by `W^o`.
/// No bias terms.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    pub output: ParamId,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        AttentionConfig {
            width,
            heads,
            seq_len: 1,
        }
        .validate()?;
        let hw = width / heads;
        let heads = (0..heads)
            .map(|h| AttentionHead {
                query: store.add_glorot(format!("{name}.head{h}.wq"), width, hw, rng),
                key: store.add_glorot(format!("{name}.head{h}.wk"), width, hw, rng),
                value: store.add_glorot(format!("{name}.head{h}.wv"), width, hw, rng),
            })
            .collect();
        let output = store.add_glorot(format!("{name}.wo"), width, width, rng);
        Ok(Self { heads, output })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, z: Var, valid: &[bool]) -> Result<Var, NnError> {
        check_mask(tape, z, valid)?;
        let outs: Vec<Var> = self
            .heads
            .iter()
            .map(|h| {
                let (wq, wk, wv) = (tape.param(h.query), tape.param(h.key), tape.param(h.value));
                attention_head(tape, z, wq, wk, wv, valid)
            })
            .collect();
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        let wo = tape.param(self.output);
        Ok(tape.matmul(cat, wo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn single_position_returns_its_value_row() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(Tensor::from_rows(&[vec![0.3, -1.2]]).unwrap());
        let w = tape.constant(eye(2));
        let out = self_attention(&mut tape, z, w, w, w, &[true]).unwrap();
        assert_eq!(tape.value(out), &[0.3, -1.2]);
    }

    #[test]
    fn identical_keys_average_values() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        // Key projection zeroes everything, so all logits are equal.
        let z = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![-1.0, 0.0]]).unwrap());
        let wq = tape.constant(eye(2));
        let wk = tape.constant(Tensor::zeros(vec![2, 2]));
        let wv = tape.constant(eye(2));
        let out = self_attention(&mut tape, z, wq, wk, wv, &[true; 3]).unwrap();
        for row in tape.value(out).chunks(2) {
            assert!((row[0] - 1.0).abs() < 1e-12);
            assert!((row[1] - 7.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_hand_computation() {
        // Z = [[1,0],[0,1]], all W = I, D = 2.
        // logits = I/√2 ; row 0 weights = softmax([1/√2, 0]).
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(eye(2));
        let w = tape.constant(eye(2));
        let out = self_attention(&mut tape, z, w, w, w, &[true, true]).unwrap();
        let a = (1.0f64 / 2.0f64.sqrt()).exp();
        let p = a / (a + 1.0);
        let expected = [p, 1.0 - p, 1.0 - p, p];
        for (got, want) in tape.value(out).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        // p = e^{0.7071}/(e^{0.7071}+1) ≈ 0.66976
        assert!((p - 0.669_761_549_3).abs() < 1e-9);
    }

    #[test]
    fn rejects_indivisible_width_and_bad_inputs() {
        let mut store = ParamStore::new();
        let mut rng = rand::rng();
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "m", 6, 4, &mut rng),
            Err(NnError::Config(_))
        ));
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap());
        let w = tape.constant(eye(2));
        assert!(matches!(
            self_attention(&mut tape, z, w, w, w, &[true]),
            Err(NnError::NonFinite(_))
        ));
        let z = tape.constant(eye(2));
        assert!(self_attention(&mut tape, z, w, w, w, &[false, false]).is_err());
    }
}
