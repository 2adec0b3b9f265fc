//! AVCK checkpoint files.
//!
//! Binary, little-endian: magic "AVCK", u32 version (1), u64 config digest,
//! u32 parameter count, then per parameter: name (u32 length + UTF-8),
//! u32 rank, rank×u32 dims, f32 data. Optimizer state follows in the same
//! entry layout after a u8 kind tag (0 sgd_momentum, 1 adam) and a u64 step
//! count, then the scheduler state: f64 best validation loss, u32 epochs
//! since improvement, f64 current learning rate.
//!
//! Tensor payloads are always f32, the training precision; loading into an
//! f64 model widens them. The digest is the FNV-1a hash of the model
//! config's canonical JSON and is informational: loading validates entry
//! names and shapes against the config it is given.

use std::path::Path;

use super::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{OptimizerHyper, OptimizerKind, OptimizerState};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::schedule::PlateauScheduler;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub kind: OptimizerKind,
    pub step: u64,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerSnapshot {
    pub best_val_loss: f64,
    pub epochs_since_improvement: u32,
    pub current_lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: u64,
    pub params: Vec<CheckpointEntry>,
    pub optimizer: OptimizerSnapshot,
    pub scheduler: SchedulerSnapshot,
}

/// FNV-1a over the canonical JSON of the model config.
pub fn config_digest(config: &ModelConfig) -> u64 {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn tensor_entry<T: Scalar>(name: &str, tensor: &Tensor<T>) -> CheckpointEntry {
    CheckpointEntry {
        name: name.to_string(),
        shape: tensor.shape().to_vec(),
        data: tensor.to_f32_vec(),
    }
}

fn buffer_entry<T: Scalar>(name: String, shape: &[usize], data: &[T]) -> CheckpointEntry {
    CheckpointEntry {
        name,
        shape: shape.to_vec(),
        data: data.iter().map(|v| v.to_f32()).collect(),
    }
}

impl Checkpoint {
    /// Snapshots the live training state.
    pub fn capture<T: Scalar>(
        store: &ParamStore<T>,
        optimizer: &OptimizerState<T>,
        scheduler: &PlateauScheduler,
        config: &ModelConfig,
    ) -> Self {
        let params: Vec<CheckpointEntry> =
            store.iter().map(|(name, t)| tensor_entry(name, t)).collect();
        let shapes: Vec<(&str, &[usize])> =
            store.iter().map(|(name, t)| (name, t.shape())).collect();
        let optimizer = match optimizer {
            OptimizerState::SgdMomentum { velocity, .. } => OptimizerSnapshot {
                kind: OptimizerKind::SgdMomentum,
                step: 0,
                entries: shapes
                    .iter()
                    .zip(velocity)
                    .map(|((name, shape), v)| buffer_entry(format!("velocity.{name}"), shape, v))
                    .collect(),
            },
            OptimizerState::Adam {
                step,
                first_moment,
                second_moment,
                ..
            } => {
                let mut entries = Vec::with_capacity(shapes.len() * 2);
                for (((name, shape), m), v) in
                    shapes.iter().zip(first_moment).zip(second_moment)
                {
                    entries.push(buffer_entry(format!("m.{name}"), shape, m));
                    entries.push(buffer_entry(format!("v.{name}"), shape, v));
                }
                OptimizerSnapshot {
                    kind: OptimizerKind::Adam,
                    step: *step,
                    entries,
                }
            }
        };
        Checkpoint {
            config_digest: config_digest(config),
            params,
            optimizer,
            scheduler: SchedulerSnapshot {
                best_val_loss: scheduler.best_val_loss(),
                epochs_since_improvement: scheduler.epochs_since_improvement() as u32,
                current_lr: scheduler.current_lr(),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(MAGIC);
        w.u32(VERSION);
        w.u64(self.config_digest);
        let write_entries = |w: &mut ByteWriter, entries: &[CheckpointEntry]| {
            w.u32(entries.len() as u32);
            for entry in entries {
                w.string(&entry.name);
                w.u32(entry.shape.len() as u32);
                for &d in &entry.shape {
                    w.u32(d as u32);
                }
                w.f32_slice(&entry.data);
            }
        };
        write_entries(&mut w, &self.params);
        w.u8(match self.optimizer.kind {
            OptimizerKind::SgdMomentum => 0,
            OptimizerKind::Adam => 1,
        });
        w.u64(self.optimizer.step);
        write_entries(&mut w, &self.optimizer.entries);
        w.f64(self.scheduler.best_val_loss);
        w.u32(self.scheduler.epochs_since_improvement);
        w.f64(self.scheduler.current_lr);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                got: version,
                expected: VERSION,
            });
        }
        let config_digest = r.u64()?;
        let read_entries = |r: &mut ByteReader| -> Result<Vec<CheckpointEntry>> {
            let count = r.u32()? as usize;
            let mut entries = Vec::new();
            for _ in 0..count {
                let name = r.string()?;
                let rank = r.u32()? as usize;
                if rank > 8 {
                    return Err(Error::bad_format(path, format!("rank {rank} is implausible")));
                }
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u32()? as usize);
                }
                let numel = r.checked_product(&shape)?;
                let data = r.f32_vec(numel)?;
                entries.push(CheckpointEntry { name, shape, data });
            }
            Ok(entries)
        };
        let params = read_entries(&mut r)?;
        let kind = match r.u8()? {
            0 => OptimizerKind::SgdMomentum,
            1 => OptimizerKind::Adam,
            other => {
                return Err(Error::bad_format(path, format!("unknown optimizer kind {other}")))
            }
        };
        let step = r.u64()?;
        let entries = read_entries(&mut r)?;
        let scheduler = SchedulerSnapshot {
            best_val_loss: r.f64()?,
            epochs_since_improvement: r.u32()?,
            current_lr: r.f64()?,
        };
        r.expect_end()?;
        Ok(Checkpoint {
            config_digest,
            params,
            optimizer: OptimizerSnapshot { kind, step, entries },
            scheduler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Rebuilds the parameter store in the config's canonical order,
    /// validating every entry's shape against the config-derived schema.
    pub fn into_param_store<T: Scalar>(&self, config: &ModelConfig) -> Result<ParamStore<T>> {
        let (_, reference) = Model::init::<f32>(*config, 0)?;
        let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
            self.params.iter().map(|e| (e.name.as_str(), e)).collect();
        if self.params.len() != reference.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} parameters, config expects {}",
                self.params.len(),
                reference.len()
            )));
        }
        let mut store = ParamStore::new();
        for (name, expected) in reference.iter() {
            let entry = by_name.get(name).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint is missing parameter {name:?}"))
            })?;
            if entry.shape != expected.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {name:?} has shape {:?} but config expects {:?}",
                    entry.shape,
                    expected.shape()
                )));
            }
            let data: Vec<T> = entry.data.iter().map(|&v| T::from_f32(v)).collect();
            store.insert(name, Tensor::new(entry.shape.clone(), data)?);
        }
        Ok(store)
    }

    /// Rebuilds optimizer buffers aligned to `params`.
    pub fn restore_optimizer<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        hyper: &OptimizerHyper,
    ) -> Result<OptimizerState<T>> {
        let by_name: std::collections::HashMap<&str, &CheckpointEntry> = self
            .optimizer
            .entries
            .iter()
            .map(|e| (e.name.as_str(), e))
            .collect();
        let pull = |prefix: &str, name: &str, numel: usize| -> Result<Vec<T>> {
            let key = format!("{prefix}.{name}");
            let entry = by_name.get(key.as_str()).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint is missing optimizer entry {key:?}"))
            })?;
            if entry.data.len() != numel {
                return Err(Error::ConfigMismatch(format!(
                    "optimizer entry {key:?} has {} values, parameter has {numel}",
                    entry.data.len()
                )));
            }
            Ok(entry.data.iter().map(|&v| T::from_f32(v)).collect())
        };
        match self.optimizer.kind {
            OptimizerKind::SgdMomentum => {
                let mut velocity = Vec::with_capacity(params.len());
                for (name, t) in params.iter() {
                    velocity.push(pull("velocity", name, t.numel())?);
                }
                Ok(OptimizerState::SgdMomentum {
                    momentum: hyper.momentum,
                    velocity,
                })
            }
            OptimizerKind::Adam => {
                let mut first = Vec::with_capacity(params.len());
                let mut second = Vec::with_capacity(params.len());
                for (name, t) in params.iter() {
                    first.push(pull("m", name, t.numel())?);
                    second.push(pull("v", name, t.numel())?);
                }
                Ok(OptimizerState::Adam {
                    beta1: hyper.adam_beta1,
                    beta2: hyper.adam_beta2,
                    eps: hyper.adam_eps,
                    step: self.optimizer.step,
                    first_moment: first,
                    second_moment: second,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::EncoderConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            premise_dim: 6,
            embedding_dim: 4,
            encoder: EncoderConfig {
                model_dim: 4,
                heads: 2,
                layers: 1,
                layer_norm_eps: 1e-5,
                scale: Default::default(),
            },
            pool_rows: 10,
            pool_cols: 15,
            max_len: 64,
        }
    }

    fn fixture() -> (ModelConfig, Checkpoint) {
        let config = tiny_config();
        let (_, store) = Model::init::<f32>(config, 12345).unwrap();
        let optimizer = OptimizerState::new(
            OptimizerKind::Adam,
            &store,
            &OptimizerHyper::default(),
        );
        let scheduler = PlateauScheduler::new(1e-4, 0.1, 2);
        let checkpoint = Checkpoint::capture(&store, &optimizer, &scheduler, &config);
        (config, checkpoint)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (_, checkpoint) = fixture();
        let bytes = checkpoint.to_bytes();
        let parsed = Checkpoint::from_bytes(&bytes, "test").unwrap();
        assert_eq!(parsed, checkpoint);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn restored_store_matches_original() {
        let config = tiny_config();
        let (_, store) = Model::init::<f32>(config, 99).unwrap();
        let optimizer =
            OptimizerState::new(OptimizerKind::SgdMomentum, &store, &OptimizerHyper::default());
        let scheduler = PlateauScheduler::new(1e-3, 0.1, 2);
        let checkpoint = Checkpoint::capture(&store, &optimizer, &scheduler, &config);
        let restored: ParamStore<f32> = checkpoint.into_param_store(&config).unwrap();
        assert_eq!(restored.len(), store.len());
        for (name, tensor) in store.iter() {
            assert_eq!(restored.get(name).unwrap().data(), tensor.data());
        }
    }

    #[test]
    fn wrong_model_dim_is_a_shape_mismatch() {
        let (_, checkpoint) = fixture();
        let mut wrong = tiny_config();
        wrong.premise_dim = 8;
        let err = checkpoint.into_param_store::<f32>(&wrong).unwrap_err();
        match err {
            Error::ConfigMismatch(msg) => assert!(msg.contains("shape"), "message: {msg}"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncation_is_rejected_everywhere() {
        let (_, checkpoint) = fixture();
        let bytes = checkpoint.to_bytes();
        for cut in [0, 4, 12, 20, 50, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut], "test").is_err());
        }
    }

    #[test]
    fn optimizer_round_trips() {
        let config = tiny_config();
        let (_, mut store) = Model::init::<f32>(config, 3).unwrap();
        let mut optimizer =
            OptimizerState::new(OptimizerKind::Adam, &store, &OptimizerHyper::default());
        // Take a step so the moments are non-trivial.
        let grads: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.01; t.numel()]).collect();
        optimizer.step(&mut store, &grads, 1e-3).unwrap();
        let scheduler = PlateauScheduler::new(1e-4, 0.1, 2);
        let checkpoint = Checkpoint::capture(&store, &optimizer, &scheduler, &config);
        let bytes = checkpoint.to_bytes();
        let parsed = Checkpoint::from_bytes(&bytes, "test").unwrap();
        let restored: OptimizerState<f32> = parsed
            .restore_optimizer(&store, &OptimizerHyper::default())
            .unwrap();
        match (&optimizer, &restored) {
            (
                OptimizerState::Adam { step: s1, first_moment: m1, .. },
                OptimizerState::Adam { step: s2, first_moment: m2, .. },
            ) => {
                assert_eq!(s1, s2);
                assert_eq!(m1, m2);
            }
            _ => panic!("optimizer kind changed"),
        }
    }
}
