//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p texim-cli --test acceptance --release`; the
//! similarity benchmark (criteria 8 and 9) trains ten encoders.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texim_core::corpus::{write_documents_jsonl, CleanOptions};
use texim_core::imager::{
    embedding_to_image, memory_report, normalize, reshape, standard_comparisons, ImageSpec, MemoryReportParams,
    PixelImage, Quantization,
};
use texim_core::nn::checkpoint::{decode_tensors, encode_store, encode_tensors};
use texim_core::nn::{gradient_check, ParamStore, RunMode, Tensor};
use texim_core::pipeline::{EncodingSettings, TexImPipeline};
use texim_core::sts::{InputMode, StsConfig, StsExample, StsInput, StsModel};
use texim_core::synthetic::{random_texts, StsBenchmark, TopicCorpus};
use texim_core::tokenizer::{TokenSequence, Vocabulary};
use texim_core::vae::{anneal_weight, kl_gaussian, train_vae, Vae, VaeConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn anneal_schedule() -> Outcome {
    let mut worst = 0.0_f64;
    for n_total in [1usize, 5, 15, 50, 200] {
        if anneal_weight(0, n_total, 0.0) != 0.5 {
            return Err(format!("W_a(0, {n_total}, 0) = {}", anneal_weight(0, n_total, 0.0)));
        }
        let end = anneal_weight(n_total, n_total, 0.0);
        worst = worst.max((end - 1.0 / (1.0 + (-1.0_f64).exp())).abs());
        for n in 0..n_total {
            if anneal_weight(n + 1, n_total, 0.0) <= anneal_weight(n, n_total, 0.0) {
                return Err(format!("not increasing at n = {n}, N = {n_total}"));
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("|W_a(N,N,0) - 1/(1+e^-1)| <= {worst:.1e}, strictly increasing"),
    )
}

/// Composite Simpson rule for one dimension of KL(N(mu, e^lv) || N(0, 1)).
fn kl_quadrature_1d(mu: f64, logvar: f64) -> f64 {
    let sigma = (0.5 * logvar).exp();
    let (lo, hi) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 4000;
    let h = (hi - lo) / n as f64;
    let integrand = |x: f64| {
        let log_p = -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_q = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        log_p.exp() * (log_p - log_q)
    };
    let mut sum = integrand(lo) + integrand(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(lo + i as f64 * h);
    }
    sum * h / 3.0
}

fn kl_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let dim = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logvar: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..2.0)).collect();
        let numeric: f64 = mu.iter().zip(&logvar).map(|(&m, &lv)| kl_quadrature_1d(m, lv)).sum();
        worst = worst.max((kl_gaussian(&mu, &logvar) - numeric).abs());
    }
    let at_prior = kl_gaussian(&[0.0; 16], &[0.0; 16]);
    check(
        worst <= 1e-6 && at_prior == 0.0,
        format!("max |closed - quadrature| = {worst:.2e} over 100 Gaussians; KL at prior = {at_prior}"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = VaeConfig {
        seq_len: 8,
        width: 16,
        heads: 4,
        latent_dim: 8,
        seed: 3,
        ..VaeConfig::default()
    };
    let vae = Vae::new(cfg, 20).map_err(|e| e.to_string())?;
    let seq = TokenSequence::from_ids(vec![3, 17, 5, 9, 12, 1], 8).map_err(|e| e.to_string())?;
    let eps = vec![0.4, -1.2, 0.3, 0.9, -0.5, 1.6, -0.1, 0.7];
    let vae_report = gradient_check(
        vae.store(),
        |tape| {
            vae.loss(tape, &seq, 0.6, Some(eps.clone()), &mut RunMode::training(5))
                .map(|p| p.total)
        },
        1e-4,
    )
    .map_err(|e| format!("VAE: {e}"))?;

    let mut sts_worst = 0.0_f64;
    let mut sts_params = 0;
    let pixels = |k: usize| StsInput::Pixels((0..8).map(|i| ((i * 37 + k * 11) % 256) as f64 / 255.0).collect());
    let tokens = |ids: &[u32]| StsInput::Tokens(TokenSequence::from_ids(ids.to_vec(), 8).unwrap());
    let cases = [
        (InputMode::Image, pixels(1), pixels(5)),
        (
            InputMode::FloatVector,
            StsInput::Vector(vec![0.3, -1.0, 0.5, 2.0, -0.2, 0.1, 0.9, -0.7]),
            StsInput::Vector(vec![1.1, 0.4, -0.6, 0.2, 0.8, -1.3, 0.0, 0.5]),
        ),
        (InputMode::Tokens, tokens(&[4, 9, 2]), tokens(&[7, 1, 19, 3, 3])),
    ];
    for (mode, a, b) in cases {
        let cfg = StsConfig {
            width: 16,
            heads: 4,
            hidden: 8,
            input_mode: mode,
            seed: 6,
            ..StsConfig::default()
        };
        let model = StsModel::new(cfg, 8, Some(20)).map_err(|e| e.to_string())?;
        let ex = StsExample { a, b, label: 1 };
        let report = gradient_check(
            model.store(),
            |tape| model.loss(tape, &ex, &mut RunMode::training(9)),
            1e-4,
        )
        .map_err(|e| format!("STS {mode:?}: {e}"))?;
        sts_worst = sts_worst.max(report.max_relative_error);
        sts_params += report.params.len();
    }
    let elapsed = start.elapsed();
    check(
        vae_report.max_relative_error < 1e-4 && sts_worst < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "VAE {} tensors max rel {:.1e}; STS {} tensors max rel {:.1e}; {:.1?}",
            vae_report.params.len(),
            vae_report.max_relative_error,
            sts_params,
            sts_worst,
            elapsed
        ),
    )
}

fn fixed_length() -> Outcome {
    let texts = random_texts(60, 50, (3, 30), 4);
    let vocab = Vocabulary::train(&texts, 200).map_err(|e| e.to_string())?;
    let cfg = VaeConfig::default();
    let vae = Vae::new(cfg.clone(), vocab.size()).map_err(|e| e.to_string())?;
    let settings = EncodingSettings {
        clean: CleanOptions::default(),
        image: ImageSpec::new(32, 16, 1).map_err(|e| e.to_string())?,
        quantization: Quantization::Truncate,
    };
    let pipeline = TexImPipeline::new(vocab, vae, settings).map_err(|e| e.to_string())?;
    let words: Vec<&str> = texts.iter().flat_map(|t| t.split(' ')).collect();
    let short = words[..5].join(" ");
    let long = words.iter().cycle().take(400).copied().collect::<Vec<_>>().join(" ");
    let (es, el) = (pipeline.project(&short), pipeline.project(&long));
    let (es, el) = (es.map_err(|e| e.to_string())?, el.map_err(|e| e.to_string())?);
    let (is, _) = pipeline.encode_image(&short).map_err(|e| e.to_string())?;
    let (il, _) = pipeline.encode_image(&long).map_err(|e| e.to_string())?;
    check(
        es.len() == cfg.latent_dim
            && el.len() == cfg.latent_dim
            && is.spec() == il.spec()
            && is.pixels().len() == il.pixels().len(),
        format!(
            "5 words -> {} values, {}x{}; 400 words -> {} values, {}x{}",
            es.len(),
            is.spec().rows,
            is.spec().cols,
            el.len(),
            il.spec().rows,
            il.spec().cols
        ),
    )
}

fn compression() -> Outcome {
    let spec = ImageSpec::new(32, 16, 1).map_err(|e| e.to_string())?;
    let img = reshape(vec![7; 512], spec).map_err(|e| e.to_string())?;
    let bytes = img.to_pnm_bytes();
    let header = b"P5\n16 32\n255\n".len();
    let payload = bytes.len() - header;
    let rows = memory_report(spec, &standard_comparisons(&MemoryReportParams::default(), spec));
    let pct = |name: &str| {
        rows.iter()
            .find(|r| r.representation == name)
            .map(|r| r.compression_pct)
    };
    let (Some(seq), Some(text)) = (pct("sequence_embedding"), pct("plain_text")) else {
        return Err("missing comparison rows".into());
    };
    check(
        bytes.starts_with(b"P5\n16 32\n255\n") && payload == 512 && seq == 75.0 && (text - 75.89).abs() <= 0.01,
        format!("payload {payload} B; vs 2048 B {seq}%; vs 2123.57 B {text:.4}%"),
    )
}

fn quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for k in 0..1000 {
        let n = rng.random_range(2..=128);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let normalized = normalize(&e).map_err(|e| e.to_string())?.values;
        let spec = ImageSpec::new(1, n, 1).map_err(|e| e.to_string())?;
        let (img, _) = embedding_to_image(&e, spec, Quantization::Truncate).map_err(|e| e.to_string())?;
        for (v, &p) in normalized.iter().zip(img.pixels()) {
            worst = worst.max((v - p as f64 / 255.0).abs());
        }
        for i in 0..n {
            for j in 0..n {
                if e[i] < e[j] && img.pixels()[i] > img.pixels()[j] {
                    return Err(format!("vector {k}: order of components {i} and {j} reversed"));
                }
            }
        }
    }
    check(
        worst <= 1.0 / 255.0,
        format!(
            "max reconstruction error {worst:.5} (bound {:.5}); order preserved",
            1.0 / 255.0
        ),
    )
}

fn training_sanity() -> Outcome {
    let start = Instant::now();
    let texts = random_texts(200, 40, (4, 14), 7);
    let vocab = Vocabulary::train(&texts, 64).map_err(|e| e.to_string())?;
    let seqs = texts
        .iter()
        .map(|t| vocab.tokenize(t, 16))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = VaeConfig {
        seq_len: 16,
        width: 16,
        latent_dim: 16,
        heads: 4,
        epochs: 200,
        patience: 2,
        seed: 8,
        ..VaeConfig::default()
    };
    let trained = train_vae(&seqs, vocab.size(), &cfg).map_err(|e| e.to_string())?;
    let r = &trained.report;
    let elapsed = start.elapsed();
    let stop_at = r.records.len();
    check(
        vocab.size() <= 64
            && r.final_train_loss < r.initial_train_loss
            && r.stopped_early
            && stop_at == r.best_epoch + 1 + cfg.patience
            && elapsed < Duration::from_secs(600),
        format!(
            "|V| {}; J' {:.3} -> {:.3}; stopped after {} epochs, best epoch {}; {:.1?}",
            vocab.size(),
            r.initial_train_loss,
            r.final_train_loss,
            stop_at,
            r.best_epoch,
            elapsed
        ),
    )
}

struct SeedScores {
    image: f64,
    conv_only: f64,
    float_vector: f64,
}

fn benchmark_scores() -> Result<Vec<SeedScores>, String> {
    (0..5u64)
        .map(|seed| {
            let start = Instant::now();
            let bench = StsBenchmark::default().with_seed(seed);
            let data = bench.data().map_err(|e| e.to_string())?;
            let full = bench.encoder(&data, false).map_err(|e| e.to_string())?;
            let conv = bench.encoder(&data, true).map_err(|e| e.to_string())?;
            let score = |enc: &TexImPipeline, mode| bench.score(&data, enc, mode).map(|m| m.accuracy);
            let s = SeedScores {
                image: score(&full, InputMode::Image).map_err(|e| e.to_string())?,
                conv_only: score(&conv, InputMode::Image).map_err(|e| e.to_string())?,
                float_vector: score(&full, InputMode::FloatVector).map_err(|e| e.to_string())?,
            };
            eprintln!(
                "  seed {seed}: image {:.3}, conv-only {:.3}, float {:.3} ({:.0?})",
                s.image,
                s.conv_only,
                s.float_vector,
                start.elapsed()
            );
            Ok(s)
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn sts_capability(scores: &[SeedScores]) -> Outcome {
    let image = mean(scores.iter().map(|s| s.image));
    let wins = scores.iter().filter(|s| s.image >= s.conv_only).count();
    let per_seed: Vec<String> = scores
        .iter()
        .map(|s| format!("{:.3}/{:.3}", s.image, s.conv_only))
        .collect();
    check(
        image >= 0.95 && wins >= 3,
        format!(
            "mean image accuracy {image:.3} (need 0.95); image >= conv-only in {wins}/5 seeds [{}]",
            per_seed.join(" ")
        ),
    )
}

fn ablation_order(scores: &[SeedScores]) -> Outcome {
    let image = mean(scores.iter().map(|s| s.image));
    let float = mean(scores.iter().map(|s| s.float_vector));
    check(
        float >= image - 0.05,
        format!("mean float_vector {float:.3} vs image {image:.3}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 21

[paths]
output = "out"
corpus = "corpus.jsonl"
encode_input = "texts.txt"

[tokenizer]
vocab_size = 120

[vae]
seq_len = 16
width = 8
latent_dim = 32
heads = 2
epochs = 3
batch_size = 8

[image]
rows = 8
cols = 4
"#;

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

fn cli_run(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    fs::write(root.join("run.toml"), DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let docs = TopicCorpus::default().documents(60, 9);
    let mut buf = Vec::new();
    write_documents_jsonl(&docs, &mut buf).map_err(|e| e.to_string())?;
    fs::write(root.join("corpus.jsonl"), buf).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = docs.iter().take(12).map(|d| d.body.as_str()).collect();
    fs::write(root.join("texts.txt"), lines.join("\n")).map_err(|e| e.to_string())?;
    let config = root.join("run.toml");
    for cmd in ["train-vae", "encode"] {
        let out = Command::new(env!("CARGO_BIN_EXE_texim"))
            .args([cmd, "--config"])
            .arg(&config)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{cmd}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let mut files = BTreeMap::new();
    let out = root.join("out");
    collect_files(&out, &out, &mut files).map_err(|e| e.to_string())?;
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let first = cli_run(a.path())?;
    let second = cli_run(b.path())?;
    let images = first.keys().filter(|k| k.ends_with(".pgm")).count();
    let has_ckpt = first.keys().any(|k| k.ends_with("vae.ckpt"));
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    check(
        has_ckpt && images == 12 && differing.is_empty() && first.len() == second.len(),
        format!(
            "{} files compared ({images} images, checkpoint included); differing: {differing:?}",
            first.len()
        ),
    )
}

fn round_trips() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 64,
        ..PropConfig::default()
    });
    // 14 onsets and 5 vowels give at most 38 word-initial and continuation units
    let vocab = (any::<u64>(), 3usize..40, 40usize..200);
    runner
        .run(&vocab, |(seed, words, target)| {
            let texts = random_texts(20, words, (1, 8), seed);
            let vocab = Vocabulary::train(&texts, target).unwrap();
            let mut buf = Vec::new();
            vocab.write_tsv(&mut buf).unwrap();
            prop_assert_eq!(Vocabulary::read_tsv(buf.as_slice()).unwrap(), vocab);
            Ok(())
        })
        .map_err(|e| format!("vocabulary: {e}"))?;

    let shapes = (
        prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..5),
        any::<u64>(),
    );
    runner
        .run(&shapes, |(shapes, seed)| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (i, s) in shapes.iter().enumerate() {
                store.add_uniform(format!("p{i}"), s.clone(), 3.0, &mut rng);
            }
            let bytes = encode_store(&store);
            let decoded = decode_tensors(&bytes).unwrap();
            let refs: Vec<(&str, &Tensor)> = decoded.iter().map(|(n, t)| (n.as_str(), t)).collect();
            prop_assert_eq!(encode_tensors(&refs), bytes.clone());
            let mut other = ParamStore::new();
            for (i, s) in shapes.iter().enumerate() {
                other.add_zeros(format!("p{i}"), s.clone());
            }
            other.load_named(decoded).unwrap();
            prop_assert_eq!(encode_store(&other), bytes);
            Ok(())
        })
        .map_err(|e| format!("checkpoint: {e}"))?;

    let images = (
        1usize..20,
        1usize..20,
        any::<bool>(),
        prop::collection::vec(any::<u8>(), 1200),
    );
    runner
        .run(&images, |(rows, cols, rgb, pool)| {
            let spec = ImageSpec::new(rows, cols, if rgb { 3 } else { 1 }).unwrap();
            let img = reshape(pool[..spec.num_values()].to_vec(), spec).unwrap();
            prop_assert_eq!(PixelImage::from_pnm_bytes(&img.to_pnm_bytes()).unwrap(), img);
            Ok(())
        })
        .map_err(|e| format!("pnm: {e}"))?;
    Ok("vocabulary, checkpoint and PGM/PPM round trips hold on 64 generated cases each".into())
}

fn run(outcome: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(outcome)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail}");
    };
    report(1, "anneal schedule", run(anneal_schedule));
    report(2, "KL closed form", run(kl_closed_form));
    report(3, "gradient fidelity", run(gradients));
    report(4, "fixed length", run(fixed_length));
    report(5, "compression arithmetic", run(compression));
    report(6, "quantization bound", run(quantization));
    report(7, "training sanity", run(training_sanity));
    let scores = catch_unwind(benchmark_scores).unwrap_or_else(|_| Err("benchmark panicked".into()));
    match &scores {
        Ok(s) => {
            report(8, "similarity capability", sts_capability(s));
            report(9, "ablation order", ablation_order(s));
        }
        Err(e) => {
            report(8, "similarity capability", Err(e.clone()));
            report(9, "ablation order", Err(e.clone()));
        }
    }
    report(10, "determinism", run(determinism));
    report(11, "round trips", run(round_trips));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
