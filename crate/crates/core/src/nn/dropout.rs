use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};

/// Training/inference switch plus the RNG that drives dropout masks.
pub struct RunMode {
    training: bool,
    rng: ChaCha8Rng,
}

impl RunMode {
    pub fn inference() -> Self {
        Self {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Inverted dropout: zero each element with probability `rate` and scale
/// survivors by `1/(1−rate)`. Identity outside training or at rate 0.
pub fn dropout(tape: &mut Tape<'_>, x: Var, rate: f64, mode: &mut RunMode) -> Var {
    if !mode.training || rate <= 0.0 {
        return x;
    }
    assert!(rate < 1.0, "dropout rate must be < 1");
    let keep = 1.0 / (1.0 - rate);
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if mode.rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, mask)
}
