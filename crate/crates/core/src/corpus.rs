//! Text cleaning, similarity-pair construction and seeded splits.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("document {0} has no summary")]
    MissingSummary(String),
    #[error("need at least 2 documents to shuffle summaries, got {0}")]
    TooFewDocuments(usize),
    #[error("invalid ratio: {0}")]
    InvalidRatio(String),
    #[error("nothing to split: input is empty")]
    Empty,
    #[error("text of {0} is empty after cleaning")]
    EmptyText(String),
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub body: String,
    #[serde(default)]
    pub summary: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsPair {
    pub text_a: String,
    pub text_b: String,
    /// 1 = similar, 0 = dissimilar.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit<T = StsPair> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T> CorpusSplit<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOptions {
    pub lowercase: bool,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S*").expect("valid regex"));

/// Strip a text down to ASCII letters separated by single spaces.
///
/// Order: line breaks and tabs, URLs, digits, non-ASCII, punctuation,
/// then whitespace collapse. Case is preserved.
pub fn clean_text(raw: &str) -> String {
    let spaced: String = raw.chars().map(|c| if c.is_whitespace() { ' ' } else { c }).collect();
    let no_urls = URL.replace_all(&spaced, " ");
    let kept: String = no_urls
        .chars()
        .filter(|c| c.is_ascii_alphabetic() || *c == ' ')
        .collect();
    kept.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
}

pub fn clean_text_with(raw: &str, opts: &CleanOptions) -> String {
    let cleaned = clean_text(raw);
    if opts.lowercase {
        cleaned.to_ascii_lowercase()
    } else {
        cleaned
    }
}

fn clean_nonempty(raw: &str, what: &str, opts: &CleanOptions) -> Result<String, CorpusError> {
    let text = clean_text_with(raw, opts);
    if text.is_empty() {
        return Err(CorpusError::EmptyText(what.to_string()));
    }
    Ok(text)
}

/// Pair each document body with a summary. `⌊ratio·n⌋` randomly chosen
/// documents receive another document's summary (label 0); the rest keep
/// their own (label 1). Output follows input document order.
pub fn build_sts_pairs(
    docs: &[RawDocument],
    shuffle_ratio: f64,
    seed: u64,
    opts: &CleanOptions,
) -> Result<Vec<StsPair>, CorpusError> {
    if !(0.0..=1.0).contains(&shuffle_ratio) {
        return Err(CorpusError::InvalidRatio(format!(
            "shuffle ratio {shuffle_ratio} outside [0, 1]"
        )));
    }
    let n = docs.len();
    if shuffle_ratio > 0.0 && n < 2 {
        return Err(CorpusError::TooFewDocuments(n));
    }
    let mut ids = HashSet::new();
    for d in docs {
        if !ids.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateId(d.id.clone()));
        }
    }
    let summaries = docs
        .iter()
        .map(|d| {
            d.summary
                .as_deref()
                .ok_or_else(|| CorpusError::MissingSummary(d.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffled_count = (shuffle_ratio * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let chosen = &order[..shuffled_count];

    // source[i] = index of the document whose summary pairs with body i
    let mut source: Vec<usize> = (0..n).collect();
    match chosen.len() {
        0 => {}
        1 => {
            let i = chosen[0];
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            source[i] = j;
        }
        k => {
            // Sattolo's algorithm: a uniformly random single cycle, hence no fixed points.
            let mut perm: Vec<usize> = chosen.to_vec();
            for i in (1..k).rev() {
                let j = rng.random_range(0..i);
                perm.swap(i, j);
            }
            for (&target, &src) in chosen.iter().zip(&perm) {
                source[target] = src;
            }
        }
    }

    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            Ok(StsPair {
                text_a: clean_nonempty(&d.body, &format!("{} body", d.id), opts)?,
                text_b: clean_nonempty(summaries[source[i]], &format!("{} summary", docs[source[i]].id), opts)?,
                label: u8::from(source[i] == i),
            })
        })
        .collect()
}

/// Seeded shuffle then partition by `ratios` (two or three fractions summing
/// to 1). With two ratios the test partition is empty.
pub fn split<T>(mut items: Vec<T>, ratios: &[f64], seed: u64) -> Result<CorpusSplit<T>, CorpusError> {
    if items.is_empty() {
        return Err(CorpusError::Empty);
    }
    if !(2..=3).contains(&ratios.len()) || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CorpusError::InvalidRatio(format!("{ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatio(format!(
            "ratios {ratios:?} sum to {total}, not 1"
        )));
    }
    let n = items.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);

    let mut sizes = Vec::with_capacity(ratios.len());
    let mut assigned = 0;
    for r in &ratios[..ratios.len() - 1] {
        let k = ((r * n as f64).round() as usize).min(n - assigned);
        sizes.push(k);
        assigned += k;
    }
    sizes.push(n - assigned);

    let mut rest = items;
    let test = if sizes.len() == 3 {
        rest.split_off(sizes[0] + sizes[1])
    } else {
        Vec::new()
    };
    let validation = rest.split_off(sizes[0].min(rest.len()));
    Ok(CorpusSplit {
        train: rest,
        validation,
        test,
        seed,
    })
}

pub fn read_documents_jsonl<R: BufRead>(reader: R) -> Result<Vec<RawDocument>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if doc.body.trim().is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: format!("document {} has an empty body", doc.id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_documents_jsonl<W: Write>(docs: &[RawDocument], mut w: W) -> Result<(), CorpusError> {
    for d in docs {
        let line = serde_json::to_string(d).map_err(|e| CorpusError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// `text_a<TAB>text_b<TAB>label` per line.
pub fn read_pairs_tsv<R: BufRead>(reader: R) -> Result<Vec<StsPair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| CorpusError::Parse { line: i + 1, message };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let label = match fields[2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
        };
        pairs.push(StsPair {
            text_a: fields[0].to_string(),
            text_b: fields[1].to_string(),
            label,
        });
    }
    Ok(pairs)
}

pub fn write_pairs_tsv<W: Write>(pairs: &[StsPair], mut w: W) -> Result<(), CorpusError> {
    for (i, p) in pairs.iter().enumerate() {
        if [&p.text_a, &p.text_b].iter().any(|t| t.contains(['\t', '\n', '\r'])) {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: "pair text contains a tab or line break".into(),
            });
        }
        writeln!(w, "{}\t{}\t{}", p.text_a, p.text_b, p.label)?;
    }
    Ok(())
}
