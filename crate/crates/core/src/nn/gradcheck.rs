use std::fmt::Display;

use super::{NnError, ParamId, ParamStore, Tape, Var};
use crate::par;

/// Step of the five-point central difference.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub params: Vec<ParamCheck>,
    pub scalars_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compare reverse-mode gradients of `loss` with fourth-order central finite
/// differences for every scalar of every parameter in `store`.
///
/// Fails with [`NnError::GradientMismatch`] naming the worst parameter when
/// its relative error exceeds `tolerance`.
pub fn gradient_check<F, E>(store: &ParamStore, loss: F, tolerance: f64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E> + Sync,
    E: Display,
{
    gradient_check_where(store, loss, tolerance, |_| true)
}

/// [`gradient_check`] restricted to parameters whose name passes `include`.
pub fn gradient_check_where<F, E, P>(
    store: &ParamStore,
    loss: F,
    tolerance: f64,
    include: P,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E> + Sync,
    E: Display,
    P: Fn(&str) -> bool,
{
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new(s);
        let out = loss(&mut tape).map_err(|e| NnError::Input(e.to_string()))?;
        Ok(tape.scalar(out))
    };
    let analytic = {
        let mut tape = Tape::new(store);
        let out = loss(&mut tape).map_err(|e| NnError::Input(e.to_string()))?;
        tape.backward(out)
    };

    let ids: Vec<ParamId> = store.ids().filter(|&id| include(&store.get(id).name)).collect();
    let checks = par::map(&ids, |_, &id| -> Result<ParamCheck, NnError> {
        let mut local = store.clone();
        let n = local.value(id).len();
        let zeros = vec![0.0; n];
        let grad = analytic.get(id).unwrap_or(&zeros);
        let mut worst = ParamCheck {
            name: local.get(id).name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            let orig = local.value(id).data()[k];
            let mut at = |offset: f64| -> Result<f64, NnError> {
                local.value_mut(id).data_mut()[k] = orig + offset;
                eval(&local)
            };
            let h = FD_STEP;
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            local.value_mut(id).data_mut()[k] = orig;
            let err = relative_error(grad[k], numeric);
            if err > worst.max_relative_error || k == 0 {
                worst.max_relative_error = err;
                worst.worst_index = k;
                worst.analytic = grad[k];
                worst.numeric = numeric;
            }
        }
        Ok(worst)
    });
    let params = checks.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = GradCheckReport {
        max_relative_error: params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max),
        scalars_checked: store.num_scalars(),
        params,
    };
    if let Some(bad) = report
        .params
        .iter()
        .filter(|p| p.max_relative_error > tolerance)
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    {
        return Err(NnError::GradientMismatch {
            param: bad.name.clone(),
            index: bad.worst_index,
            relative_error: bad.max_relative_error,
            analytic: bad.analytic,
            numeric: bad.numeric,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{conv1d, Linear, Tensor, TslfnBlock};

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn linear_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "lin", 4, 3, true, &mut rng);
        store
            .value_mut(layer.bias.unwrap())
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = input(5, 4, 2);
        let report = gradient_check(
            &store,
            |tape| {
                let xv = tape.constant(x.clone());
                let y = layer.forward(tape, xv);
                let y2 = tape.mul(y, y);
                Ok::<_, NnError>(tape.sum(y2))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6);
    }

    #[test]
    fn convolution() {
        let mut store = ParamStore::new();
        let w = store.add("filters", input(3, 2 * 4, 9));
        let x = input(6, 4, 3);
        let report = gradient_check(
            &store,
            |tape| {
                let xv = tape.constant(x.clone());
                let wv = tape.param(w);
                let wv = tape.reshape(wv, vec![3, 2, 4]);
                let y = conv1d(tape, xv, wv)?;
                let y = tape.tanh(y);
                Ok::<_, NnError>(tape.sum(y))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6);
    }

    #[test]
    fn tslfn_block_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let block = TslfnBlock::new(&mut store, "t", 8, 4, false, &mut rng).unwrap();
        let x = input(5, 8, 11);
        let valid = [true, true, true, false, false];
        let report = gradient_check(
            &store,
            |tape| {
                let xv = tape.constant(x.clone());
                let y = block.forward(tape, xv, &valid)?;
                let m = tape.masked_mean_rows(y, &valid);
                let m2 = tape.mul(m, m);
                Ok::<_, NnError>(tape.sum(m2))
            },
            1e-4,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // Squares a detached copy, so the analytic gradient is zero.
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![0.5, 1.5]));
        let err = gradient_check(
            &store,
            |tape| {
                let v = tape.param(w);
                let frozen = tape.constant(Tensor::row_vector(tape.value(v).iter().map(|x| x * x).collect()));
                Ok::<_, NnError>(tape.sum(frozen))
            },
            1e-4,
        )
        .unwrap_err();
        match err {
            NnError::GradientMismatch { param, .. } => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
