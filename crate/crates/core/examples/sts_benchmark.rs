//! Runs the synthetic similarity benchmark for a few seeds and prints
//! test accuracy per variant.
//!
//! `cargo run --release -p texim-core --example sts_benchmark -- [seeds]`

use std::time::Instant;

use texim_core::sts::InputMode;
use texim_core::synthetic::StsBenchmark;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let base = StsBenchmark::default();
    for seed in 0..seeds {
        let b = base.with_seed(seed);
        let data = b.data()?;
        let t = Instant::now();
        let full = b.encoder(&data, false)?;
        let fast_c = b.encoder(&data, true)?;
        let encoders = t.elapsed();
        let image = b.score(&data, &full, InputMode::Image)?;
        let float = b.score(&data, &full, InputMode::FloatVector)?;
        let conv = b.score(&data, &fast_c, InputMode::Image)?;
        let tokens = b.score(&data, &full, InputMode::Tokens)?;
        println!(
            "seed {seed}: image {:.3} fast-c {:.3} float {:.3} tokens {:.3} (encoders {:.1?}, total {:.1?})",
            image.accuracy,
            conv.accuracy,
            float.accuracy,
            tokens.accuracy,
            encoders,
            t.elapsed()
        );
    }
    Ok(())
}
