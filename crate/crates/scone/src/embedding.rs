//! Object-phrase embeddings: averaged per-token vectors from an optional
//! pretrained table, with a deterministic hash-seeded fallback for unknown
//! tokens. Embeddings are frozen (never updated by training).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SconeError};
use crate::nn::normal_sample;

#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in s.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize) -> Self {
        Self { dim, table: BTreeMap::new() }
    }

    /// Load a GloVe-style text file: `token v1 v2 ... vdim` per line.
    pub fn from_file(path: &Path, dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut table = BTreeMap::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_string();
            let values: std::result::Result<Vec<f64>, _> =
                parts.map(|v| v.parse::<f64>()).collect();
            let values = values.map_err(|e| SconeError::ParseError {
                index,
                message: e.to_string(),
            })?;
            if values.len() != dim {
                return Err(SconeError::ParseError {
                    index,
                    message: format!("expected {dim} values, got {}", values.len()),
                });
            }
            table.insert(token, values);
        }
        Ok(Self { dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, token: &str) -> Array1<f64> {
        if let Some(values) = self.table.get(token) {
            return Array1::from_vec(values.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token));
        let scale = 1.0 / (self.dim as f64).sqrt();
        Array1::from_shape_fn(self.dim, |_| normal_sample(&mut rng) * scale)
    }

    /// Average of per-token vectors over whitespace-split, lowercased tokens.
    pub fn embed_phrase(&self, phrase: &str) -> Array1<f64> {
        let tokens: Vec<String> = phrase
            .split_whitespace()
            .map(|t| t.to_ascii_lowercase())
            .collect();
        if tokens.is_empty() {
            return Array1::zeros(self.dim);
        }
        let mut out = Array1::zeros(self.dim);
        for token in &tokens {
            out += &self.token_vector(token);
        }
        out / tokens.len() as f64
    }
}
