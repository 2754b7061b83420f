use rand::Rng;

use super::{dropout, Activation, NnError, ParamId, ParamStore, RunMode, Tape, Var};

/// Valid 1-D convolution of `x: [L×D]` with `filters: [nf×F×D]`.
///
/// Output row `i` holds, for each filter, the sum of the elementwise product of
/// that filter with `x[i..i+F]`; the result is `[(L−F+1) × nf]`.
pub fn conv1d(tape: &mut Tape<'_>, x: Var, filters: Var) -> Result<Var, NnError> {
    let (len, depth) = tape.dims(x);
    let shape = tape.shape(filters);
    if shape.len() != 3 || shape[2] != depth {
        return Err(NnError::Shape(format!(
            "filters {shape:?} incompatible with input depth {depth}"
        )));
    }
    let width = shape[1];
    if width == 0 || width > len {
        return Err(NnError::Shape(format!("filter width {width} must lie in 1..={len}")));
    }
    Ok(tape.conv1d(x, filters))
}

/// Convolution stage that keeps both sequence length and feature width:
/// the input is zero-extended by `F−1` rows at the end, convolved with `D`
/// filters, biased, activated, dropped out, and padding rows are re-zeroed.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub filters: ParamId,
    pub bias: ParamId,
    pub filter_width: usize,
}

impl ConvBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, filter_width: usize, rng: &mut R) -> Self {
        let fan_in = filter_width * width;
        let bound = (6.0 / (fan_in + width) as f64).sqrt();
        Self {
            filters: store.add_uniform(format!("{name}.filters"), vec![width, filter_width, width], bound, rng),
            bias: store.add_zeros(format!("{name}.bias"), vec![1, width]),
            filter_width,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        valid: &[bool],
        activation: Activation,
        dropout_rate: f64,
        mode: &mut RunMode,
    ) -> Result<Var, NnError> {
        let padded = tape.pad_rows(x, self.filter_width - 1);
        let filters = tape.param(self.filters);
        let y = conv1d(tape, padded, filters)?;
        let b = tape.param(self.bias);
        let y = tape.add_row(y, b);
        let y = activation.forward(tape, y);
        let y = dropout(tape, y, dropout_rate, mode);
        Ok(mask_rows(tape, y, valid))
    }
}

/// Zero the rows where `valid[i] == false`; identity when nothing is masked.
pub fn mask_rows(tape: &mut Tape<'_>, x: Var, valid: &[bool]) -> Var {
    if valid.iter().all(|&v| v) {
        return x;
    }
    let (rows, cols) = tape.dims(x);
    debug_assert_eq!(rows, valid.len());
    let mask = valid
        .iter()
        .flat_map(|&v| std::iter::repeat_n(if v { 1.0 } else { 0.0 }, cols))
        .collect();
    tape.mul_const(x, mask)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn full_width_filter_gives_one_value() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let f = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = conv1d(&mut tape, x, f).unwrap();
        assert_eq!(tape.shape(y), &[1, 1]);
        assert_eq!(tape.value(y), &[5.0]);
    }

    #[test]
    fn unit_filter_copies_input() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::new(vec![4, 1], vec![3.0, -1.0, 0.5, 8.0]).unwrap());
        let f = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = conv1d(&mut tape, x, f).unwrap();
        assert_eq!(tape.value(y), &[3.0, -1.0, 0.5, 8.0]);
    }

    #[test]
    fn four_by_two_hand_dot_products() {
        // x = [[1,2],[3,4],[5,6],[7,8]], filter rows [1,0],[0,-1]
        // F_m[i] = x[i][0] - x[i+1][1] → 1-4, 3-6, 5-8
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::new(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
        let f = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap());
        let y = conv1d(&mut tape, x, f).unwrap();
        assert_eq!(tape.shape(y), &[3, 1]);
        assert_eq!(tape.value(y), &[-3.0, -3.0, -3.0]);
    }

    #[test]
    fn filter_wider_than_sequence_is_an_error() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(vec![2, 1]));
        let f = tape.constant(Tensor::zeros(vec![1, 3, 1]));
        assert!(conv1d(&mut tape, x, f).is_err());
    }

    proptest! {
        #[test]
        fn output_length_is_l_minus_f_plus_one(l in 1usize..24, d in 1usize..5, nf in 1usize..4, f_frac in 0.0f64..1.0) {
            let f = 1 + ((l - 1) as f64 * f_frac) as usize;
            let store = ParamStore::new();
            let mut tape = Tape::new(&store);
            let x = tape.constant(Tensor::zeros(vec![l, d]));
            let w = tape.constant(Tensor::zeros(vec![nf, f, d]));
            let y = conv1d(&mut tape, x, w).unwrap();
            prop_assert_eq!(tape.shape(y), &[l - f + 1, nf]);
        }
    }
}
