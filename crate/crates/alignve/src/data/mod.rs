//! File formats and dataset plumbing: AVEF feature files, AVCK checkpoints,
//! JSON-lines manifests, text embedding tables, and the synthetic toy
//! dataset generator.

pub mod checkpoint;
pub mod embeddings;
pub mod features;
pub mod manifest;
pub mod toy;

pub use checkpoint::{config_digest, Checkpoint, CheckpointEntry, OptimizerSnapshot, SchedulerSnapshot};
pub use embeddings::{load_embeddings, save_embeddings};
pub use features::{read_feature_file, read_features, write_feature_file, write_features};
pub use manifest::{label_index, label_name, load_dataset, Dataset, Example, ManifestEntry, LABELS};
pub use toy::{generate_toy_dataset, ToyConfig, ToyOutput};

use crate::error::{Error, Result};

/// Bounds-checked little-endian reader over an in-memory byte slice. Every
/// read validates the remaining length first, so corrupt or truncated files
/// fail with a diagnostic instead of panicking or over-allocating.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], path: &str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path: path.to_string(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::bad_format(&self.path, format!("{} at byte {}", message.into(), self.pos))
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.fail(format!(
                "truncated: need {n} bytes, have {}",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// Reads `n` f32 values after verifying they are actually present.
    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let byte_len = n
            .checked_mul(4)
            .ok_or_else(|| self.fail("element count overflows"))?;
        let raw = self.take(byte_len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("name is not valid UTF-8"))
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.fail(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    pub fn checked_product(&self, dims: &[usize]) -> Result<usize> {
        let mut product = 1usize;
        for &d in dims {
            product = product
                .checked_mul(d)
                .ok_or_else(|| self.fail("dimension product overflows"))?;
        }
        Ok(product)
    }
}

/// Little-endian writer mirror of `ByteReader`.
pub(crate) struct ByteWriter {
    bytes: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        ByteWriter { bytes: Vec::new() }
    }

    pub fn magic(&mut self, m: &[u8; 4]) {
        self.bytes.extend_from_slice(m);
    }

    pub fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes.extend_from_slice(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}
