//! The six commands. Each one checks its inputs and output targets, then
//! reads and computes everything, and only then writes under `paths.output`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use texim_core::corpus::{build_sts_pairs, read_documents_jsonl, read_pairs_tsv, split, CorpusSplit, StsPair};
use texim_core::imager::{
    mean_abs_pixel_diff, memory_report, standard_comparisons, write_image, write_memory_csv, PixelImage,
};
use texim_core::pipeline::{train_pipeline, PipelineError, TexImPipeline, SETTINGS_FILE};
use texim_core::sts::{
    evaluate, train_sts, write_predictions_csv, InputMode, Metrics, StsExample, StsModel, CHECKPOINT_FILE,
};
use texim_core::training::{mix_seed, write_log_csv};

use crate::config::{mode_name, RunConfig};
use crate::error::{CliError, Context, ErrorKind};
use crate::plot::{line_plot, Series};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "train_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::config(format!("[paths] {key} is required by this command")))?;
    if !p.is_file() {
        return Err(CliError::new(
            ErrorKind::MissingInput,
            format!("{key} {} does not exist", p.display()),
        ));
    }
    Ok(p)
}

fn check_output(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::new(
            ErrorKind::OutputExists,
            format!("{} already exists; pass --force to overwrite", path.display()),
        ));
    }
    Ok(())
}

/// Empty directory at `dir`, replacing any previous run's contents.
fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir).context(ErrorKind::Io, format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).context(ErrorKind::Io, format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).context(ErrorKind::Io, format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context(ErrorKind::Io, "serialising JSON")?;
    fs::write(path, text + "\n").context(ErrorKind::Io, format!("writing {}", path.display()))
}

fn encoder_required(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.encoder_dir();
    if !dir.join(SETTINGS_FILE).is_file() {
        return Err(CliError::new(
            ErrorKind::MissingInput,
            format!("no trained encoder in {}; run train-vae first", dir.display()),
        ));
    }
    Ok(dir)
}

/// Load the encoder and make sure it was trained with this configuration.
fn load_encoder(cfg: &RunConfig, dir: &Path) -> Result<TexImPipeline, CliError> {
    let p = TexImPipeline::load(dir).context(ErrorKind::InvalidInput, format!("encoder in {}", dir.display()))?;
    let mut saved = p.vae.config().clone();
    saved.seed = cfg.vae.seed;
    if saved != cfg.vae || p.settings != cfg.encoding() {
        return Err(CliError::config(format!(
            "encoder in {} was trained with different [vae], [image] or [preprocessing] settings; rerun train-vae",
            dir.display()
        )));
    }
    Ok(p)
}

fn image_extension(img: &PixelImage) -> &'static str {
    if img.spec().channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

pub fn train_vae(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let corpus = required(&cfg.paths.corpus, "corpus")?;
    let out = cfg.encoder_dir();
    check_output(&out, force)?;

    let file = File::open(&corpus).context(ErrorKind::Io, format!("opening {}", corpus.display()))?;
    let docs = read_documents_jsonl(BufReader::new(file)).context(ErrorKind::InvalidInput, "corpus")?;
    let texts: Vec<&str> = docs
        .iter()
        .flat_map(|d| std::iter::once(d.body.as_str()).chain(d.summary.as_deref()))
        .collect();
    let trained = train_pipeline(&texts, cfg.tokenizer.vocab_size, &cfg.vae, cfg.encoding()).map_err(|e| match e {
        PipelineError::Vae(v) => CliError::new(ErrorKind::Training, v.to_string()),
        other => CliError::new(ErrorKind::InvalidInput, other.to_string()),
    })?;

    fresh_dir(&out)?;
    trained.pipeline.save(&out).context(ErrorKind::Io, "saving encoder")?;
    let mut log = create(&out.join(LOG_FILE))?;
    write_log_csv(&trained.report.records, "kl_weight", &mut log)?;
    log.flush()?;
    write_json(&out.join(REPORT_FILE), &trained.report)?;
    Ok(json!({
        "command": "train-vae",
        "output": out,
        "texts": texts.len(),
        "vocab_size": trained.pipeline.vocab.size(),
        "epochs": trained.report.records.len(),
        "best_epoch": trained.report.best_epoch,
        "stopped_early": trained.report.stopped_early,
    }))
}

pub fn encode(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let input = required(&cfg.paths.encode_input, "encode_input")?;
    let enc_dir = encoder_required(cfg)?;
    let out = cfg.images_dir();
    check_output(&out, force)?;

    let encoder = load_encoder(cfg, &enc_dir)?;
    let file = File::open(&input).context(ErrorKind::Io, format!("opening {}", input.display()))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .context(ErrorKind::InvalidInput, format!("reading {}", input.display()))?;
    let encoded = texim_core::par::map(&lines, |_, line| match encoder.encode_image(line) {
        Ok(img) => Ok(Some(img)),
        Err(PipelineError::EmptyText) => Ok(None),
        Err(e) => Err(e),
    });

    let mut rows = Vec::with_capacity(lines.len());
    for (i, r) in encoded.into_iter().enumerate() {
        let r = r.context(ErrorKind::InvalidInput, format!("line {}", i + 1))?;
        rows.push(r);
    }
    fresh_dir(&out)?;
    let mut manifest = create(&out.join(MANIFEST_FILE))?;
    writeln!(manifest, "line,file,status,degenerate")?;
    let mut written = 0;
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        match row {
            Some((img, degenerate)) => {
                let name = format!("line{line:05}.{}", image_extension(img));
                write_image(img, out.join(&name)).context(ErrorKind::Io, &name)?;
                writeln!(manifest, "{line},{name},ok,{degenerate}")?;
                written += 1;
            }
            None => writeln!(manifest, "{line},,skipped_empty,false")?,
        }
    }
    manifest.flush()?;
    Ok(json!({
        "command": "encode",
        "output": out,
        "lines": rows.len(),
        "images": written,
        "skipped": rows.len() - written,
    }))
}

fn load_pairs(cfg: &RunConfig) -> Result<Vec<StsPair>, CliError> {
    if let Some(p) = &cfg.paths.pairs {
        let path = required(&Some(p.clone()), "pairs")?;
        let file = File::open(&path).context(ErrorKind::Io, format!("opening {}", path.display()))?;
        return read_pairs_tsv(BufReader::new(file)).context(ErrorKind::InvalidInput, "pairs");
    }
    let corpus = required(&cfg.paths.corpus, "corpus (or pairs)")?;
    let file = File::open(&corpus).context(ErrorKind::Io, format!("opening {}", corpus.display()))?;
    let docs = read_documents_jsonl(BufReader::new(file)).context(ErrorKind::InvalidInput, "corpus")?;
    build_sts_pairs(
        &docs,
        cfg.pairs.shuffle_ratio,
        mix_seed(cfg.seed, 1, 0),
        &cfg.encoding().clean,
    )
    .context(ErrorKind::InvalidInput, "building pairs")
}

fn pair_split(cfg: &RunConfig) -> Result<CorpusSplit, CliError> {
    let pairs = load_pairs(cfg)?;
    split(pairs, &cfg.sts.split, mix_seed(cfg.seed, 2, 0)).context(ErrorKind::InvalidInput, "splitting pairs")
}

fn examples(
    encoder: &TexImPipeline,
    pairs: &[StsPair],
    mode: InputMode,
    part: &str,
) -> Result<Vec<StsExample>, CliError> {
    let encoded = texim_core::par::map(pairs, |_, p| -> Result<StsExample, PipelineError> {
        Ok(StsExample {
            a: encoder.sts_input(&p.text_a, mode)?,
            b: encoder.sts_input(&p.text_b, mode)?,
            label: p.label,
        })
    });
    encoded
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.context(ErrorKind::InvalidInput, format!("{part} pair {i}")))
        .collect()
}

/// Sequence length and vocabulary the classifier needs for `mode`.
fn sts_shape(encoder: &TexImPipeline, mode: InputMode) -> (usize, Option<usize>) {
    match mode {
        InputMode::Image => (encoder.settings.image.num_values(), None),
        InputMode::FloatVector => (encoder.vae.config().latent_dim, None),
        InputMode::Tokens => (encoder.vae.config().seq_len, Some(encoder.vocab.size())),
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    mode: &'a str,
    split: &'a str,
    pairs: usize,
    threshold: f64,
    #[serde(flatten)]
    metrics: Metrics,
}

pub fn train_sts_cmd(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let enc_dir = encoder_required(cfg)?;
    let out = cfg.sts_dir();
    check_output(&out, force)?;

    let encoder = load_encoder(cfg, &enc_dir)?;
    let data = pair_split(cfg)?;
    let mode = cfg.sts.input_mode;
    let train = examples(&encoder, &data.train, mode, "train")?;
    let val = examples(&encoder, &data.validation, mode, "validation")?;
    let (seq_len, vocab) = sts_shape(&encoder, mode);
    let trained = train_sts(&train, &val, &cfg.sts, seq_len, vocab).context(ErrorKind::Training, "training")?;
    let (val_metrics, _) =
        evaluate(&trained.model, &val, cfg.sts.threshold).context(ErrorKind::Training, "validation")?;

    fresh_dir(&out)?;
    trained.model.save(&out).context(ErrorKind::Io, "saving classifier")?;
    let mut log = create(&out.join(LOG_FILE))?;
    write_log_csv(&trained.report.records, "loss_weight", &mut log)?;
    log.flush()?;
    write_json(&out.join(REPORT_FILE), &trained.report)?;
    write_json(
        &out.join("validation_metrics.json"),
        &MetricsFile {
            mode: mode_name(mode),
            split: "validation",
            pairs: val.len(),
            threshold: cfg.sts.threshold,
            metrics: val_metrics,
        },
    )?;
    Ok(json!({
        "command": "train-sts",
        "output": out,
        "mode": mode_name(mode),
        "train_pairs": train.len(),
        "validation_pairs": val.len(),
        "best_epoch": trained.report.best_epoch,
        "validation_accuracy": val_metrics.accuracy,
    }))
}

pub fn eval_sts(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let enc_dir = encoder_required(cfg)?;
    let model_dir = cfg.sts_dir();
    if !model_dir.join(CHECKPOINT_FILE).is_file() {
        return Err(CliError::new(
            ErrorKind::MissingInput,
            format!("no trained classifier in {}; run train-sts first", model_dir.display()),
        ));
    }
    let out = cfg.eval_dir();
    check_output(&out, force)?;

    let encoder = load_encoder(cfg, &enc_dir)?;
    let model = StsModel::load(&model_dir).context(ErrorKind::InvalidInput, "classifier")?;
    let mut saved = model.config().clone();
    saved.seed = cfg.sts.seed;
    if saved != cfg.sts {
        return Err(CliError::config(format!(
            "classifier in {} was trained with different [sts] settings; rerun train-sts",
            model_dir.display()
        )));
    }
    let data = pair_split(cfg)?;
    let mode = cfg.sts.input_mode;
    let test = examples(&encoder, &data.test, mode, "test")?;
    let (metrics, preds) = evaluate(&model, &test, cfg.sts.threshold).context(ErrorKind::Training, "evaluation")?;

    fresh_dir(&out)?;
    write_json(
        &out.join(METRICS_FILE),
        &MetricsFile {
            mode: mode_name(mode),
            split: "test",
            pairs: test.len(),
            threshold: cfg.sts.threshold,
            metrics,
        },
    )?;
    let mut w = create(&out.join(PREDICTIONS_FILE))?;
    write_predictions_csv(&preds, &mut w)?;
    w.flush()?;
    Ok(json!({
        "command": "eval-sts",
        "output": out,
        "mode": mode_name(mode),
        "test_pairs": test.len(),
        "accuracy": metrics.accuracy,
        "f1": metrics.f1,
    }))
}

#[derive(Serialize)]
struct ReportSummary {
    pairs: usize,
    mean_abs_diff_all: f64,
    /// `None` when no pair carries the label.
    mean_abs_diff_similar: Option<f64>,
    mean_abs_diff_dissimilar: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn report(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let pairs_path = required(&cfg.paths.report_pairs, "report_pairs")?;
    let enc_dir = encoder_required(cfg)?;
    let out = cfg.report_dir();
    check_output(&out, force)?;

    let encoder = load_encoder(cfg, &enc_dir)?;
    let file = File::open(&pairs_path).context(ErrorKind::Io, format!("opening {}", pairs_path.display()))?;
    let pairs = read_pairs_tsv(BufReader::new(file)).context(ErrorKind::InvalidInput, "report pairs")?;
    let images = texim_core::par::map(&pairs, |_, p| -> Result<_, PipelineError> {
        Ok((encoder.encode_image(&p.text_a)?.0, encoder.encode_image(&p.text_b)?.0))
    })
    .into_iter()
    .enumerate()
    .map(|(i, r)| r.context(ErrorKind::InvalidInput, format!("report pair {i}")))
    .collect::<Result<Vec<_>, _>>()?;
    let diffs: Vec<f64> = images
        .iter()
        .map(|(a, b)| mean_abs_pixel_diff(a, b).expect("images share one spec"))
        .collect();

    fresh_dir(&out)?;
    let mut hist = create(&out.join("histograms.csv"))?;
    writeln!(hist, "pair,side,intensity,count")?;
    let mut series = create(&out.join("pixel_series.csv"))?;
    writeln!(series, "pair,index,a,b")?;
    let mut per_pair = create(&out.join("pair_summary.csv"))?;
    writeln!(per_pair, "pair,label,mean_abs_diff")?;
    for (k, ((a, b), p)) in images.iter().zip(&pairs).enumerate() {
        let ext = image_extension(a);
        for (side, img) in [("a", a), ("b", b)] {
            let name = format!("pair{k:04}_{side}.{ext}");
            write_image(img, out.join(&name)).context(ErrorKind::Io, &name)?;
        }
        let (ha, hb) = (a.histogram(), b.histogram());
        for (side, h) in [("a", &ha), ("b", &hb)] {
            for (bin, count) in h.iter().enumerate() {
                writeln!(hist, "{k},{side},{bin},{count}")?;
            }
        }
        for (i, (x, y)) in a.pixels().iter().zip(b.pixels()).enumerate() {
            writeln!(series, "{k},{i},{x},{y}")?;
        }
        writeln!(per_pair, "{k},{},{:.6}", p.label, diffs[k])?;

        let to_f = |h: &[u64; 256]| h.iter().map(|&c| c as f64).collect::<Vec<_>>();
        let svg = line_plot(
            &format!("pair {k}: intensity histograms"),
            "intensity",
            "count",
            &[Series::new("a", &to_f(&ha)), Series::new("b", &to_f(&hb))],
            None,
        );
        fs::write(out.join(format!("pair{k:04}_histogram.svg")), svg)?;
        let to_px = |img: &PixelImage| img.pixels().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let svg = line_plot(
            &format!("pair {k}: pixel values (mean |diff| {:.2})", diffs[k]),
            "pixel index",
            "value",
            &[Series::new("a", &to_px(a)), Series::new("b", &to_px(b))],
            Some((0.0, 255.0)),
        );
        fs::write(out.join(format!("pair{k:04}_pixels.svg")), svg)?;
    }
    for w in [&mut hist, &mut series, &mut per_pair] {
        w.flush()?;
    }
    let by_label = |l: u8| {
        let v: Vec<f64> = pairs
            .iter()
            .zip(&diffs)
            .filter(|(p, _)| p.label == l)
            .map(|(_, &d)| d)
            .collect();
        mean(&v)
    };
    let summary = ReportSummary {
        pairs: pairs.len(),
        mean_abs_diff_all: mean(&diffs).unwrap_or(0.0),
        mean_abs_diff_similar: by_label(1),
        mean_abs_diff_dissimilar: by_label(0),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(json!({
        "command": "report",
        "output": out,
        "pairs": summary.pairs,
        "mean_abs_diff_similar": summary.mean_abs_diff_similar,
        "mean_abs_diff_dissimilar": summary.mean_abs_diff_dissimilar,
    }))
}

pub fn memory_report_cmd(cfg: &RunConfig, force: bool) -> Result<Value, CliError> {
    let out = cfg.memory_csv();
    check_output(&out, force)?;
    let spec = cfg.image.spec();
    let rows = memory_report(spec, &standard_comparisons(&cfg.memory, spec));
    fs::create_dir_all(&cfg.paths.output)?;
    let mut w = create(&out)?;
    write_memory_csv(&rows, &mut w).context(ErrorKind::Io, "memory report")?;
    w.flush()?;
    let mut table = String::new();
    for r in &rows {
        let _ = write!(table, "{}={:.2}% ", r.representation, r.compression_pct);
    }
    Ok(json!({
        "command": "memory-report",
        "output": out,
        "image_bytes": spec.num_values(),
        "rows": rows.len(),
        "compression": table.trim_end(),
    }))
}
