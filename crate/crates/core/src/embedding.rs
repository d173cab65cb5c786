//! Keyed embedding tables and their text format.
//!
//! The format is the usual word2vec text layout: a header line
//! `count dimension`, then one `key v1 ... vd` line per entry. Values are
//! written in shortest round-trip form, so a write/read cycle is lossless.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    keys: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(keys: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if keys.len() != vectors.nrows() {
            return Err(Error::ShapeMismatch(format!("{} keys for {} vectors", keys.len(), vectors.nrows())));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if k.is_empty() || k.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("embedding key `{k}` is empty or has whitespace")));
            }
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate embedding key `{k}`")));
            }
        }
        Ok(EmbeddingTable { keys, index, vectors })
    }

    pub fn dimension(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, key: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(key).map(|i| self.vectors.row(i))
    }

    /// Elementwise mean of the vectors of the known keys; unknown keys are
    /// skipped and the zero vector is returned when none is known.
    pub fn mean_of<S: AsRef<str>>(&self, keys: &[S]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dimension());
        let mut n = 0usize;
        for k in keys {
            if let Some(v) = self.get(k.as_ref()) {
                acc += &v;
                n += 1;
            }
        }
        if n > 0 {
            acc /= n as f64;
        }
        acc
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.len(), self.dimension()).map_err(io)?;
        for (key, row) in self.keys.iter().zip(self.vectors.rows()) {
            write!(w, "{key}").map_err(io)?;
            for v in row {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let bad = |line: usize, reason: &str| Error::Format { line, reason: reason.to_string() };
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?.map_err(|e| Error::io(path, e))?;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (count, dim) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(c)), Some(Ok(d)), None) => (c, d),
            _ => return Err(bad(1, "header must be `count dimension`")),
        };
        let mut keys = Vec::with_capacity(count);
        let mut vectors = Array2::zeros((count, dim));
        for row in 0..count {
            let lineno = row + 2;
            let line = lines
                .next()
                .ok_or_else(|| bad(lineno, "fewer rows than the header declares"))?
                .map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let key = parts.next().ok_or_else(|| bad(lineno, "empty row"))?;
            let values: Vec<f64> =
                parts.map(|p| p.parse::<f64>().map_err(|e| bad(lineno, &e.to_string()))).collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(bad(lineno, &format!("expected {dim} values, got {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(lineno, "non-finite component"));
            }
            vectors.row_mut(row).assign(&Array1::from(values));
            keys.push(key.to_string());
        }
        Self::new(keys, vectors)
    }
}
