//! Vector-to-image conversion: min-max normalisation, 8-bit scaling,
//! row-major reshaping, binary PGM/PPM I/O, and memory accounting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("empty vector")]
    Empty,
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("image spec {rows}x{cols}x{channels} holds {expected} values, got {got}")]
    SizeMismatch {
        rows: usize,
        cols: usize,
        channels: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid image spec: {0}")]
    Spec(String),
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSpec {
    /// Image length `I_l` (rows).
    pub rows: usize,
    /// Image breadth `I_b` (columns).
    pub cols: usize,
    #[serde(default = "one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

impl ImageSpec {
    pub const GRAY_32X16: ImageSpec = ImageSpec {
        rows: 32,
        cols: 16,
        channels: 1,
    };

    pub fn new(rows: usize, cols: usize, channels: usize) -> Result<Self, ImageError> {
        let spec = Self { rows, cols, channels };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ImageError::Spec(format!("{}x{} has a zero side", self.rows, self.cols)));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(ImageError::Spec(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// `I_l · I_b · channels`, which must equal the embedding dimension.
    pub fn num_values(&self) -> usize {
        self.rows * self.cols * self.channels
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    /// Cast semantics: drop the fractional part.
    #[default]
    Truncate,
    RoundNearest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelImage {
    spec: ImageSpec,
    /// Row-major, channel-interleaved.
    pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Set when every component was equal and the output is all zeros.
    pub degenerate: bool,
}

/// Min-max scale into `[0, 1]`. A constant vector maps to zeros.
pub fn normalize(e: &[f64]) -> Result<Normalized, ImageError> {
    if e.is_empty() {
        return Err(ImageError::Empty);
    }
    if let Some(i) = e.iter().position(|v| !v.is_finite()) {
        return Err(ImageError::NonFinite(i));
    }
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(Normalized {
            values: vec![0.0; e.len()],
            degenerate: true,
        });
    }
    Ok(Normalized {
        values: e.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect(),
        degenerate: false,
    })
}

/// `v · 255` cast to `u8`.
pub fn scale_quantize(normalized: &[f64], mode: Quantization) -> Vec<u8> {
    normalized
        .iter()
        .map(|&v| {
            let scaled = (v * 255.0).clamp(0.0, 255.0);
            match mode {
                Quantization::Truncate => scaled as u8,
                Quantization::RoundNearest => scaled.round() as u8,
            }
        })
        .collect()
}

/// Fill `spec` row by row, columns fastest (channels innermost).
pub fn reshape(values: Vec<u8>, spec: ImageSpec) -> Result<PixelImage, ImageError> {
    spec.validate()?;
    if values.len() != spec.num_values() {
        return Err(ImageError::SizeMismatch {
            rows: spec.rows,
            cols: spec.cols,
            channels: spec.channels,
            expected: spec.num_values(),
            got: values.len(),
        });
    }
    Ok(PixelImage { spec, pixels: values })
}

/// Normalise, quantise and reshape in one go; also reports degeneracy.
pub fn embedding_to_image(e: &[f64], spec: ImageSpec, mode: Quantization) -> Result<(PixelImage, bool), ImageError> {
    let n = normalize(e)?;
    let img = reshape(scale_quantize(&n.values, mode), spec)?;
    Ok((img, n.degenerate))
}

impl PixelImage {
    pub fn spec(&self) -> ImageSpec {
        self.spec
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        let c = self.spec.channels;
        self.pixels[(row * self.spec.cols + col) * c + channel]
    }

    fn magic(&self) -> &'static str {
        if self.spec.channels == 1 {
            "P5"
        } else {
            "P6"
        }
    }

    /// Binary PGM (`P5`) for one channel, PPM (`P6`) for three.
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let header = format!("{}\n{} {}\n255\n", self.magic(), self.spec.cols, self.spec.rows);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pnm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        w.write_all(&self.to_pnm_bytes())?;
        Ok(())
    }

    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Header("unexpected end of header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| ImageError::Header("non-ASCII header".into()))?
                    .to_string(),
            );
        }
        // exactly one whitespace byte separates maxval from the payload
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(ImageError::Header("missing separator before payload".into()));
        }
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(ImageError::Header(format!("unsupported magic {other:?}"))),
        };
        let parse = |s: &str, what: &str| -> Result<usize, ImageError> {
            s.parse().map_err(|_| ImageError::Header(format!("bad {what} {s:?}")))
        };
        let cols = parse(&fields[1], "width")?;
        let rows = parse(&fields[2], "height")?;
        if parse(&fields[3], "maxval")? != 255 {
            return Err(ImageError::Header(format!("maxval must be 255, got {}", fields[3])));
        }
        let spec = ImageSpec::new(rows, cols, channels)?;
        let payload = &bytes[pos..];
        let expected = spec.num_values();
        if payload.len() < expected {
            return Err(ImageError::Truncated {
                expected,
                got: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(ImageError::Header(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        reshape(payload.to_vec(), spec)
    }

    pub fn read_pnm<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_pnm_bytes(&bytes)
    }

    /// 256-bin intensity histogram over every channel value.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }
}

pub fn write_image(img: &PixelImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut w = BufWriter::new(File::create(path)?);
    img.write_pnm(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<PixelImage, ImageError> {
    PixelImage::read_pnm(BufReader::new(File::open(path)?))
}

/// Mean absolute per-index difference between two images of equal spec.
pub fn mean_abs_pixel_diff(a: &PixelImage, b: &PixelImage) -> Result<f64, ImageError> {
    if a.spec != b.spec {
        return Err(ImageError::Spec(format!(
            "cannot compare {:?} with {:?}",
            a.spec, b.spec
        )));
    }
    let total: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(total as f64 / a.pixels.len() as f64)
}

/// One storage baseline to compare against the image payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub conventional_bytes: f64,
    /// Figure quoted for this baseline in published results, if any.
    pub reference_bytes: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRow {
    pub representation: String,
    pub conventional_bytes: f64,
    pub image_bytes: f64,
    pub compression_pct: f64,
    pub reference_bytes: Option<f64>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryReportParams {
    /// Average characters per plain-text sequence (one byte each).
    pub avg_text_bytes: f64,
    pub sequence_tokens: usize,
    pub word2vec_dims: usize,
    pub bert_dims: usize,
    pub sequence_embedding_dims: usize,
    pub float_bytes: usize,
}

impl Default for MemoryReportParams {
    fn default() -> Self {
        Self {
            avg_text_bytes: 2123.57,
            sequence_tokens: 512,
            word2vec_dims: 300,
            bert_dims: 768,
            sequence_embedding_dims: 512,
            float_bytes: 4,
        }
    }
}

/// Plain text, two word-embedding stores, a float sequence embedding and a
/// three-channel image of the configured size.
pub fn standard_comparisons(p: &MemoryReportParams, spec: ImageSpec) -> Vec<Comparison> {
    let tokens = p.sequence_tokens as f64;
    let fb = p.float_bytes as f64;
    vec![
        Comparison {
            name: "plain_text".into(),
            conventional_bytes: p.avg_text_bytes,
            reference_bytes: Some(2123.57),
        },
        Comparison {
            name: "word_embedding_word2vec".into(),
            conventional_bytes: tokens * p.word2vec_dims as f64 * fb,
            reference_bytes: Some(61440.0),
        },
        Comparison {
            name: "word_embedding_bert".into(),
            conventional_bytes: tokens * p.bert_dims as f64 * fb,
            reference_bytes: Some(1_572_864.0),
        },
        Comparison {
            name: "sequence_embedding".into(),
            conventional_bytes: p.sequence_embedding_dims as f64 * fb,
            reference_bytes: Some(2048.0),
        },
        Comparison {
            name: "rgb_image".into(),
            conventional_bytes: (spec.rows * spec.cols * 3) as f64,
            reference_bytes: Some(1536.0),
        },
    ]
}

pub fn compression_pct(conventional: f64, image: f64) -> f64 {
    (1.0 - image / conventional) * 100.0
}

pub fn memory_report(spec: ImageSpec, comparisons: &[Comparison]) -> Vec<MemoryRow> {
    let image = spec.num_values() as f64;
    comparisons
        .iter()
        .map(|c| {
            let note = match c.reference_bytes {
                Some(r) if (r - c.conventional_bytes).abs() > 0.005 => {
                    format!("published figure {r}B differs from computed {}B", c.conventional_bytes)
                }
                _ => String::new(),
            };
            MemoryRow {
                representation: c.name.clone(),
                conventional_bytes: c.conventional_bytes,
                image_bytes: image,
                compression_pct: compression_pct(c.conventional_bytes, image),
                reference_bytes: c.reference_bytes,
                note,
            }
        })
        .collect()
}

pub fn write_memory_csv<W: Write>(rows: &[MemoryRow], mut w: W) -> Result<(), ImageError> {
    writeln!(
        w,
        "representation,conventional_bytes,image_bytes,compression_pct,reference_bytes,note"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.2},{},{}",
            r.representation,
            r.conventional_bytes,
            r.image_bytes,
            r.compression_pct,
            r.reference_bytes.map(|v| v.to_string()).unwrap_or_default(),
            r.note
        )?;
    }
    Ok(())
}
