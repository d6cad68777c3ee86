//! Word vectors in the plain text format `token v1 ... vK`, one per line.
//!
//! Embeddings are frozen inputs: they are looked up at the leaves of the
//! composition trees and never trained. Unknown tokens map to an all-zero
//! vector, which after standardization is the vocabulary mean.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

/// Token substituted for numerals when numeric mapping is enabled.
pub const NUM_TOKEN: &str = "<num>";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: malformed number {text:?}")]
    MalformedNumber { line: usize, text: String },
    #[error("embedding file contains no vectors")]
    EmptyFile,
    #[error("standardization needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a lookup of an unknown token returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnkPolicy {
    /// All-zero vector.
    #[default]
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Array2<f64>,
    unk: Array1<f64>,
    unk_policy: UnkPolicy,
    duplicates: usize,
    zero_variance_dims: Vec<usize>,
}

impl WordEmbeddings {
    /// Build from rows; later duplicates of a token are dropped and counted.
    pub fn from_rows<I, S>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut vocab = HashMap::new();
        let mut tokens = Vec::new();
        let mut data = Vec::new();
        let mut duplicates = 0;
        for (token, row) in rows {
            assert_eq!(row.len(), dim, "row length must equal the embedding dimension");
            let token = token.into();
            if vocab.contains_key(&token) {
                duplicates += 1;
                continue;
            }
            vocab.insert(token.clone(), tokens.len());
            tokens.push(token);
            data.extend(row);
        }
        let matrix = Array2::from_shape_vec((tokens.len(), dim), data).unwrap();
        WordEmbeddings {
            vocab,
            tokens,
            matrix,
            unk: Array1::zeros(dim),
            unk_policy: UnkPolicy::Zero,
            duplicates,
            zero_variance_dims: Vec::new(),
        }
    }

    pub fn read<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<Self, EmbeddingError> {
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut dim = expected_dim;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (line_no == 1 && is_header(line)) {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let token = parts.next().unwrap().to_string();
            let row = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| EmbeddingError::MalformedNumber {
                        line: line_no,
                        text: p.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            match dim {
                Some(k) if k != row.len() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: line_no,
                        expected: k,
                        found: row.len(),
                    })
                }
                None if row.is_empty() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: line_no,
                        expected: 1,
                        found: 0,
                    })
                }
                None => dim = Some(row.len()),
                _ => {}
            }
            rows.push((token, row));
        }
        if rows.is_empty() {
            return Err(EmbeddingError::EmptyFile);
        }
        Ok(Self::from_rows(rows, dim.unwrap()))
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self, EmbeddingError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), expected_dim)
    }

    /// Write in the text format. `f64` display is shortest-round-trip, so a
    /// write/read cycle reproduces every value exactly.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (token, row) in self.tokens.iter().zip(self.matrix.rows()) {
            write!(w, "{token}")?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn unk_policy(&self) -> UnkPolicy {
        self.unk_policy
    }

    /// Number of duplicate tokens dropped while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Dimensions that were constant over the vocabulary when standardized.
    pub fn zero_variance_dims(&self) -> &[usize] {
        &self.zero_variance_dims
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> ArrayView1<'_, f64> {
        match self.vocab.get(token) {
            Some(&row) => self.matrix.row(row),
            None => self.unk.view(),
        }
    }

    /// Shift every dimension to zero mean and unit population variance over
    /// the vocabulary. Constant dimensions become all zeros and are recorded
    /// in [`zero_variance_dims`](Self::zero_variance_dims).
    pub fn standardize(&self) -> Result<Self, EmbeddingError> {
        let v = self.len();
        if v < 2 {
            return Err(EmbeddingError::TooFewRows(v));
        }
        let mut out = self.clone();
        out.zero_variance_dims.clear();
        let n = v as f64;
        for (k, mut col) in out.matrix.columns_mut().into_iter().enumerate() {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                col.fill(0.0);
                out.zero_variance_dims.push(k);
            } else {
                col.mapv_inplace(|x| (x - mean) / sd);
            }
        }
        Ok(out)
    }
}

/// True for tokens that look like numerals: digits with optional sign,
/// separators and decimal point.
/// A leading `count dim` line.
fn is_header(line: &str) -> bool {
    let parts: Vec<&str> = line.split_ascii_whitespace().collect();
    parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok())
}

pub fn is_numeric_token(token: &str) -> bool {
    let body = token.trim_start_matches(['-', '+']);
    body.chars().any(|c| c.is_ascii_digit())
        && body.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',' || c == '/')
}
