//! Hypothesis path: tokenizer, frozen embedding table, sinusoidal positional
//! encoding, and the text encoder entry point.

use std::collections::HashMap;

use crate::attention::AttEncParams;
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_MAX_LEN: usize = 64;

/// Frozen token-to-vector table. Vectors are stored as f32 (the on-disk
/// precision) and converted on lookup; the optimizer never sees this table.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    vectors: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut vocab = HashMap::new();
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (token, vector) in entries {
            if vector.len() != dim {
                return Err(Error::Config(format!(
                    "embedding for {token:?} has dim {} but table dim is {dim}",
                    vector.len()
                )));
            }
            if vocab.contains_key(&token) {
                // First occurrence wins.
                continue;
            }
            vocab.insert(token, vectors.len() / dim.max(1));
            vectors.extend_from_slice(&vector);
        }
        Ok(EmbeddingTable { vocab, vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, token: &str) -> Option<&[f32]> {
        self.vocab
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Raw table bytes, used to assert the table stays frozen.
    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }
}

/// Lowercases, splits on whitespace, peels leading and trailing ASCII
/// punctuation into their own tokens, and truncates to `max_len`.
pub fn tokenize(text: &str, max_len: usize) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        let mut trailing = Vec::new();
        while start < end && chars[start].is_ascii_punctuation() {
            leading.push(chars[start].to_string());
            start += 1;
        }
        while end > start && chars[end - 1].is_ascii_punctuation() {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        tokens.extend(leading);
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        trailing.reverse();
        tokens.extend(trailing);
    }
    tokens.truncate(max_len);
    Ok(tokens)
}

/// Looks up one row per token; out-of-vocabulary tokens map to the zero
/// vector. The result is a plain (gradient-free) n×d_h tensor.
pub fn embed<T: Scalar>(tokens: &[String], table: &EmbeddingTable) -> Result<Tensor<T>> {
    if tokens.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    let d = table.dim();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for token in tokens {
        match table.row(token) {
            Some(row) => data.extend(row.iter().map(|&v| T::from_f32(v))),
            None => data.extend(std::iter::repeat(T::ZERO).take(d)),
        }
    }
    Tensor::new(vec![tokens.len(), d], data)
}

/// Sinusoidal positional encoding: PE[pos][2i] = sin(pos / 10000^(2i/d)),
/// PE[pos][2i+1] = cos of the same argument. Requires an even dimension.
pub fn positional_encoding<T: Scalar>(len: usize, dim: usize) -> Result<Tensor<T>> {
    if dim % 2 != 0 {
        return Err(Error::OddPositionalDim(dim));
    }
    let mut data = vec![T::ZERO; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = T::from_f64(angle.sin());
            data[pos * dim + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    Tensor::new(vec![len, dim], data)
}

/// Full hypothesis path: tokenize, embed, add positional encoding, encode.
pub fn encode_hypothesis<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams<T>,
    encoder: &AttEncParams,
    text: &str,
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<Tensor<T>> {
    let tokens = tokenize(text, max_len)?;
    let embedded = embed::<T>(&tokens, table)?;
    let pe = positional_encoding::<T>(tokens.len(), table.dim())?;
    let with_positions = tape.add(&embedded, &pe)?;
    encoder.forward(tape, bound, &with_positions)
}
