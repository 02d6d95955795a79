use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FALLBACK_SIGMA: f64 = 0.1;

/// One row per vocabulary token (attributes, then objects).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Tensor,
    pub frozen: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.rows.row(index)
    }
}

/// FNV-1a, so fallback rows depend only on the token and the seed.
fn token_hash(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn fallback_row(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ token_hash(token));
    let normal = Normal::new(0.0, FALLBACK_SIGMA).expect("valid sigma");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Table with every row drawn from the seeded fallback distribution.
pub fn random_embeddings(vocab: &Vocab, dim: usize, seed: u64, frozen: bool) -> EmbeddingTable {
    let data = vocab
        .tokens()
        .flat_map(|t| fallback_row(t, dim, seed))
        .collect();
    EmbeddingTable {
        rows: Tensor::from_parts(vec![vocab.n_tokens(), dim], data),
        frozen,
    }
}

/// Parses `token v1 ... vD` lines. Tokens missing from the text receive
/// seeded random rows.
pub fn parse_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocab,
    seed: u64,
    frozen: bool,
) -> Result<EmbeddingTable> {
    let wanted: HashMap<&str, ()> = vocab.tokens().map(|t| (t, ())).collect();
    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.is_empty() {
            return Err(Error::Format(format!("line {}: no vector values", lineno + 1)));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format(format!(
                    "line {}: dimension {} differs from {d}",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        if wanted.contains_key(token) {
            let parsed = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Format(format!("line {}: bad value `{v}`", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            found.insert(token.to_string(), parsed);
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("embedding file is empty".into()))?;
    let mut data = Vec::with_capacity(vocab.n_tokens() * dim);
    let mut missing = 0;
    for token in vocab.tokens() {
        match found.get(token) {
            Some(v) => data.extend_from_slice(v),
            None => {
                missing += 1;
                data.extend(fallback_row(token, dim, seed));
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} vocabulary tokens missing from embeddings; using seeded random rows");
    }
    Ok(EmbeddingTable {
        rows: Tensor::new(vec![vocab.n_tokens(), dim], data)?,
        frozen,
    })
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, seed: u64, frozen: bool) -> Result<EmbeddingTable> {
    let file = File::open(path)?;
    parse_embeddings(BufReader::new(file), vocab, seed, frozen)
}
