//! Subword vocabulary and fixed-length token sequences.
//!
//! The vocabulary is learned by frequency-greedy pair merging over the words
//! of a cleaned corpus. Word-initial units are plain (`walk`), continuation
//! units carry a `##` prefix (`##ing`). Ids run `1..=|V|` with `<unk>`
//! reserved at `|V|`; id 0 is padding and never appears in the table.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const UNK: &str = "<unk>";
pub const CONTINUATION: &str = "##";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the {needed} units needed for the alphabet and <unk>")]
    TargetTooSmall { target: usize, needed: usize },
    #[error("text is empty after cleaning")]
    EmptyText,
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    // tokens[i] has id i + 1
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

/// Right-padded id sequence of fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenSequence {
    /// Pad (or truncate) raw ids to `len`.
    pub fn from_ids(mut ids: Vec<u32>, len: usize) -> Result<Self, TokenizerError> {
        if len == 0 {
            return Err(TokenizerError::ZeroLength);
        }
        if ids.is_empty() {
            return Err(TokenizerError::EmptyText);
        }
        ids.truncate(len);
        let true_length = ids.len();
        ids.resize(len, PAD_ID);
        Ok(Self { ids, true_length })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `true` at real-token positions.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.true_length).collect()
    }

    /// Same tokens re-padded to a different length.
    pub fn repadded(&self, len: usize) -> Result<Self, TokenizerError> {
        Self::from_ids(self.ids[..self.true_length].to_vec(), len)
    }
}

fn split_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            }
        })
        .collect()
}

fn merge_symbols(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b))
}

impl Vocabulary {
    /// Learn at most `target_size` units (including `<unk>`) from `corpus`.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self, TokenizerError> {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for text in corpus {
            for w in text.as_ref().split_whitespace() {
                *freq.entry(w).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut words: Vec<(Vec<String>, usize)> = freq.iter().map(|(w, &c)| (split_symbols(w), c)).collect();

        let mut alphabet: Vec<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
        alphabet.sort();
        alphabet.dedup();
        let needed = alphabet.len() + 1;
        if target_size < needed {
            return Err(TokenizerError::TargetTooSmall {
                target: target_size,
                needed,
            });
        }

        let mut tokens = alphabet;
        let mut known: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        while tokens.len() + 1 < target_size {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            let mut unit_counts: HashMap<&str, usize> = HashMap::new();
            for (syms, c) in &words {
                for s in syms {
                    *unit_counts.entry(s.as_str()).or_default() += c;
                }
                for pair in syms.windows(2) {
                    *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += c;
                }
            }
            // Likelihood score count(ab) / (count(a) count(b)); ties go to
            // the lexicographically smallest pair. Scores are compared as
            // exact cross products to stay platform independent.
            let score = |(a, b): &(&str, &str), c: usize| (c, unit_counts[a] * unit_counts[b]);
            let Some((best, _)) =
                counts
                    .iter()
                    .map(|(p, &c)| (*p, score(p, c)))
                    .max_by(|(pa, (ca, da)), (pb, (cb, db))| {
                        (*ca as u128 * *db as u128)
                            .cmp(&(*cb as u128 * *da as u128))
                            .then_with(|| pb.cmp(pa))
                    })
            else {
                break;
            };
            let (left, right) = (best.0.to_string(), best.1.to_string());
            let merged = merge_symbols(&left, &right);
            for (syms, _) in &mut words {
                let mut i = 0;
                while i + 1 < syms.len() {
                    if syms[i] == left && syms[i + 1] == right {
                        syms[i] = merged.clone();
                        syms.remove(i + 1);
                    }
                    i += 1;
                }
            }
            if known.insert(merged.clone()) {
                tokens.push(merged);
            }
        }
        tokens.push(UNK.to_string());
        Ok(Self::from_tokens_unchecked(tokens))
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self { tokens, lookup }
    }

    /// `|V|`, including `<unk>`.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn unk_id(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id == PAD_ID {
            return None;
        }
        self.tokens.get(id as usize - 1).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens.iter().enumerate().map(|(i, t)| (i as u32 + 1, t.as_str()))
    }

    /// Greedy longest-match segmentation of one word; `None` if some suffix
    /// cannot be matched.
    pub fn segment_word(&self, word: &str) -> Option<Vec<u32>> {
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let piece: String = chars[start..end].iter().collect();
                let key = if start == 0 {
                    piece
                } else {
                    format!("{CONTINUATION}{piece}")
                };
                if let Some(id) = self.id(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            ids.push(id);
            start = end;
        }
        Some(ids)
    }

    /// Ids for every word in `text`, unsegmentable words becoming `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .flat_map(|w| self.segment_word(w).unwrap_or_else(|| vec![self.unk_id()]))
            .collect()
    }

    /// Segment, truncate to `len` (prefix kept) and right-pad with 0.
    pub fn tokenize(&self, text: &str, len: usize) -> Result<TokenSequence, TokenizerError> {
        if len == 0 {
            return Err(TokenizerError::ZeroLength);
        }
        TokenSequence::from_ids(self.encode(text), len)
    }

    /// Inverse lookup, joining `##` units onto the preceding unit.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for &id in &seq.ids[..seq.true_length] {
            let tok = self.token(id).unwrap_or(UNK);
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }

    /// One `subword<TAB>id` line per unit, in id order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), TokenizerError> {
        for (id, tok) in self.tokens() {
            writeln!(w, "{tok}\t{id}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let err = |message: String| TokenizerError::Format { line: i + 1, message };
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| err("expected subword<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|_| err(format!("bad id {id:?}")))?;
            if id != tokens.len() + 1 {
                return Err(err(format!("expected id {}, found {id}", tokens.len() + 1)));
            }
            if tok.is_empty() {
                return Err(err("empty subword".into()));
            }
            tokens.push(tok.to_string());
        }
        if tokens.last().map(String::as_str) != Some(UNK) {
            return Err(TokenizerError::Format {
                line: tokens.len(),
                message: format!("last entry must be {UNK}"),
            });
        }
        let vocab = Self::from_tokens_unchecked(tokens);
        if vocab.lookup.len() != vocab.tokens.len() {
            return Err(TokenizerError::Format {
                line: 0,
                message: "duplicate subwords".into(),
            });
        }
        Ok(vocab)
    }
}
