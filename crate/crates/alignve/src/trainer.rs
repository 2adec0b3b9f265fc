//! Training loop: cross-entropy over per-example tapes with gradient
//! accumulation, one optimizer step per batch, per-epoch validation, plateau
//! decay, per-epoch checkpoints and best-validation-accuracy selection.
//!
//! Determinism: one seeded RNG drives parameter initialization (first) and
//! per-epoch shuffles (after). Within a batch, per-example gradients are
//! computed on independent tapes — serially or by `ALIGNVE_THREADS` workers
//! — and always reduced in example-index order, so thread count never
//! changes a single bit of the result.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::Dataset;
use crate::data::{config_digest, Checkpoint};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{OptimizerHyper, OptimizerKind, OptimizerState};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::schedule::PlateauScheduler;
use crate::tape::Tape;
use crate::text::EmbeddingTable;

pub const THREADS_ENV: &str = "ALIGNVE_THREADS";

fn default_lr() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    64
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    2
}
fn default_decay() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    12345
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub hyper: OptimizerHyper,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            optimizer: OptimizerKind::default(),
            hyper: OptimizerHyper::default(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            plateau_patience: default_patience(),
            decay_factor: default_decay(),
            seed: default_seed(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0 < self.decay_factor && self.decay_factor < 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch's updates.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_accuracy: [f64; 3],
    pub mean_loss: f64,
    /// confusion[true_label][predicted_label]
    pub confusion: [[usize; 3]; 3],
}

pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_checkpoint: Checkpoint,
    pub final_checkpoint: Checkpoint,
}

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Per-example loss and parameter gradients (store order), computed on a
/// private tape.
fn example_gradients<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    table: &EmbeddingTable,
    example: &crate::data::manifest::Example,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let (loss, _) = model.example_loss(
        &mut tape,
        &bound,
        &example.features,
        &example.hypothesis,
        example.label,
        table,
    )?;
    let grads = tape.backward(&loss)?;
    let mut collected = Vec::with_capacity(store.len());
    for (name, _) in store.iter() {
        let g = grads
            .wrt(bound.get(name)?)
            .expect("parameters are bound leaves");
        collected.push(g.into_data());
    }
    Ok((loss.data()[0].to_f64(), collected))
}

/// Gradients for one batch: per-example gradients summed in example-index
/// order, then scaled by 1/B (the mean-reduction of the batch loss).
/// Returns the mean loss as well.
fn batch_gradients<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    table: &EmbeddingTable,
    examples: &[&crate::data::manifest::Example],
    threads: usize,
) -> Result<(f64, Vec<Vec<T>>)> {
    let results: Vec<Mutex<Option<Result<(f64, Vec<Vec<T>>)>>>> =
        (0..examples.len()).map(|_| Mutex::new(None)).collect();
    if threads <= 1 || examples.len() <= 1 {
        for (i, ex) in examples.iter().enumerate() {
            *results[i].lock().unwrap() = Some(example_gradients(model, store, table, ex));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(examples.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= examples.len() {
                        break;
                    }
                    let out = example_gradients(model, store, table, examples[i]);
                    *results[i].lock().unwrap() = Some(out);
                });
            }
        });
    }

    let inv_batch = T::from_f64(1.0 / examples.len() as f64);
    let mut sum: Option<Vec<Vec<T>>> = None;
    let mut loss_sum = 0.0f64;
    for slot in results {
        let (loss, grads) = slot.into_inner().unwrap().expect("slot filled")?;
        loss_sum += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += *y;
                    }
                }
            }
        }
    }
    let mut grads = sum.expect("non-empty batch");
    for buffer in &mut grads {
        for v in buffer.iter_mut() {
            *v *= inv_batch;
        }
    }
    Ok((loss_sum / examples.len() as f64, grads))
}

/// Metrics over a dataset with fixed parameters; no mutation anywhere.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    table: &EmbeddingTable,
    dataset: &Dataset,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut loss_sum = 0.0f64;
    for example in &dataset.examples {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let (loss, out) = model.example_loss(
            &mut tape,
            &bound,
            &example.features,
            &example.hypothesis,
            example.label,
            table,
        )?;
        loss_sum += loss.data()[0].to_f64();
        let probs = out.output.probabilities;
        let prediction = (0..3)
            .max_by(|&a, &b| {
                probs.data()[a]
                    .partial_cmp(&probs.data()[b])
                    .expect("probabilities are finite")
            })
            .expect("three classes");
        confusion[example.label][prediction] += 1;
    }
    let total = dataset.len();
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_class = [0.0f64; 3];
    for c in 0..3 {
        let count: usize = confusion[c].iter().sum();
        per_class[c] = if count == 0 {
            0.0
        } else {
            confusion[c][c] as f64 / count as f64
        };
    }
    Ok(Metrics {
        accuracy: correct as f64 / total as f64,
        per_class_accuracy: per_class,
        mean_loss: loss_sum / total as f64,
        confusion,
    })
}

/// Runs the full protocol and returns the history plus the checkpoint with
/// the best validation accuracy (earliest epoch on ties). When `out_dir` is
/// given, per-epoch checkpoints, `best.avck` and `history.json` are written
/// there.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    table: &EmbeddingTable,
    train_set: &Dataset,
    val_set: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if table.dim() != config.model.embedding_dim {
        return Err(Error::Config(format!(
            "embedding table dim {} does not match config embedding_dim {}",
            table.dim(),
            config.model.embedding_dim
        )));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let threads = thread_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (model, mut store) = Model::init_with_rng::<T>(config.model, &mut rng)?;
    let mut optimizer = OptimizerState::new(config.optimizer, &store, &config.hyper);
    let mut scheduler =
        PlateauScheduler::new(config.lr, config.decay_factor, config.plateau_patience);
    let digest_config = config.model;

    let mut history: Vec<EpochStats> = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.current_lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0f64;
        for batch_indices in order.chunks(config.batch_size) {
            let examples: Vec<&crate::data::manifest::Example> = batch_indices
                .iter()
                .map(|&i| &train_set.examples[i])
                .collect();
            let (batch_loss, grads) = batch_gradients(&model, &store, table, &examples, threads)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("batch loss in epoch {epoch}"),
                });
            }
            epoch_loss_sum += batch_loss * examples.len() as f64;
            optimizer.step(&mut store, &grads, lr)?;
        }
        let train_loss = epoch_loss_sum / train_set.len() as f64;

        let metrics = evaluate(&model, &store, table, val_set)?;
        let checkpoint = Checkpoint::capture(&store, &optimizer, &scheduler, &digest_config);
        if let Some(dir) = out_dir {
            checkpoint.save(&dir.join(format!("epoch_{epoch:03}.avck")))?;
        }
        let improved = match &best {
            None => true,
            Some((_, acc, _)) => metrics.accuracy > *acc,
        };
        if improved {
            best = Some((epoch, metrics.accuracy, checkpoint.clone()));
        }

        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss: metrics.mean_loss,
            val_accuracy: metrics.accuracy,
            lr,
        });
        scheduler.update(metrics.mean_loss);
    }

    let final_checkpoint = Checkpoint::capture(&store, &optimizer, &scheduler, &digest_config);
    let (best_epoch, best_val_accuracy, best_checkpoint) =
        best.expect("at least one epoch ran");
    if let Some(dir) = out_dir {
        best_checkpoint.save(&dir.join("best.avck"))?;
        let json = serde_json::to_string_pretty(&history).expect("history serializes");
        std::fs::write(dir.join("history.json"), json)?;
    }
    let _ = config_digest(&digest_config);
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_accuracy,
        best_checkpoint,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::EncoderConfig;
    use crate::data::manifest::Example;
    use crate::visual::PremiseFeatures;
    use rand::Rng;

    fn tiny_model_config() -> ModelConfig {
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

    fn tiny_table() -> EmbeddingTable {
        EmbeddingTable::new(vec![
            ("up".into(), vec![1.0, 0.0, 0.5, 0.0]),
            ("down".into(), vec![-1.0, 0.0, -0.5, 0.0]),
            ("side".into(), vec![0.0, 1.0, 0.0, 0.5]),
        ])
        .unwrap()
    }

    fn synthetic_dataset(seed: u64, n_per_class: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::new();
        for label in 0..3usize {
            for i in 0..n_per_class {
                let hypothesis = match label {
                    0 => "up up up",
                    1 => "side side",
                    _ => "down down down",
                };
                let data: Vec<f32> = (0..36 * 6)
                    .map(|j| {
                        let base = if j % 6 == 0 { 1.0 } else { 0.0 };
                        base + 0.05 * rng.gen_range(-1.0f32..1.0)
                    })
                    .collect();
                examples.push(Example {
                    id: format!("{label}-{i}"),
                    features: PremiseFeatures::Grid {
                        height: 6,
                        width: 6,
                        channels: 6,
                        data,
                    },
                    hypothesis: hypothesis.to_string(),
                    label,
                });
            }
        }
        Dataset { examples }
    }

    fn tiny_train_config(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 8,
            max_epochs,
            model: tiny_model_config(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_histories() {
        let table = tiny_table();
        let train_set = synthetic_dataset(5, 4);
        let val_set = synthetic_dataset(6, 2);
        let cfg = tiny_train_config(3);
        let a = train::<f32>(&cfg, &table, &train_set, &val_set, None).unwrap();
        let b = train::<f32>(&cfg, &table, &train_set, &val_set, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(
            a.final_checkpoint.to_bytes(),
            b.final_checkpoint.to_bytes()
        );
    }

    #[test]
    fn batch_step_matches_per_example_average() {
        // One SGD step on the mean batch loss must equal stepping with the
        // average of the per-example gradients.
        let table = tiny_table();
        let dataset = synthetic_dataset(7, 1);
        let two = Dataset {
            examples: dataset.examples[0..2].to_vec(),
        };
        let cfg = tiny_train_config(1);
        let (model, store) = Model::init::<f32>(cfg.model, cfg.seed).unwrap();

        let refs: Vec<&Example> = two.examples.iter().collect();
        let (_, batch_grads) = batch_gradients(&model, &store, &table, &refs, 1).unwrap();

        let (_, g0) = example_gradients(&model, &store, &table, &two.examples[0]).unwrap();
        let (_, g1) = example_gradients(&model, &store, &table, &two.examples[1]).unwrap();
        for (b, (a0, a1)) in batch_grads.iter().zip(g0.iter().zip(&g1)) {
            for (bv, (x, y)) in b.iter().zip(a0.iter().zip(a1)) {
                assert_eq!(*bv, (x + y) * 0.5);
            }
        }
    }

    #[test]
    fn threaded_gradients_match_serial() {
        let table = tiny_table();
        let dataset = synthetic_dataset(8, 3);
        let refs: Vec<&Example> = dataset.examples.iter().collect();
        let cfg = tiny_train_config(1);
        let (model, store) = Model::init::<f32>(cfg.model, cfg.seed).unwrap();
        let (loss_serial, serial) = batch_gradients(&model, &store, &table, &refs, 1).unwrap();
        let (loss_par, parallel) = batch_gradients(&model, &store, &table, &refs, 4).unwrap();
        assert_eq!(loss_serial, loss_par);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn embedding_table_is_frozen_through_training() {
        let table = tiny_table();
        let before = table.raw_vectors().to_vec();
        let train_set = synthetic_dataset(9, 3);
        let val_set = synthetic_dataset(10, 1);
        let cfg = tiny_train_config(2);
        let outcome = train::<f32>(&cfg, &table, &train_set, &val_set, None).unwrap();
        assert_eq!(table.raw_vectors(), before.as_slice());
        // And the table is absent from the checkpointed parameters.
        assert!(outcome
            .final_checkpoint
            .params
            .iter()
            .all(|e| !e.name.contains("embedding_table")));
    }

    #[test]
    fn evaluate_is_pure_and_counts_correctly() {
        let table = tiny_table();
        let dataset = synthetic_dataset(11, 2);
        let cfg = tiny_train_config(1);
        let (model, store) = Model::init::<f32>(cfg.model, cfg.seed).unwrap();
        let a = evaluate(&model, &store, &table, &dataset).unwrap();
        let b = evaluate(&model, &store, &table, &dataset).unwrap();
        assert_eq!(a, b);
        // Confusion rows sum to the per-class example counts.
        let histogram = dataset.class_histogram();
        for c in 0..3 {
            assert_eq!(a.confusion[c].iter().sum::<usize>(), histogram[c]);
        }
        let correct: usize = (0..3).map(|c| a.confusion[c][c]).sum();
        assert!((a.accuracy - correct as f64 / dataset.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn single_correct_example_scores_full_accuracy() {
        let table = tiny_table();
        let dataset = synthetic_dataset(12, 2);
        let cfg = tiny_train_config(1);
        let (model, store) = Model::init::<f32>(cfg.model, cfg.seed).unwrap();
        let full = evaluate(&model, &store, &table, &dataset).unwrap();
        // Find an example the model gets right and evaluate it alone.
        let mut found = None;
        for (i, ex) in dataset.examples.iter().enumerate() {
            if full.confusion[ex.label][ex.label] > 0 {
                let single = Dataset {
                    examples: vec![dataset.examples[i].clone()],
                };
                let m = evaluate(&model, &store, &table, &single).unwrap();
                if m.accuracy == 1.0 {
                    found = Some(m);
                    break;
                }
            }
        }
        if let Some(m) = found {
            assert_eq!(m.accuracy, 1.0);
        }
    }

    #[test]
    fn empty_dataset_is_refused() {
        let table = tiny_table();
        let empty = Dataset::default();
        let full = synthetic_dataset(13, 1);
        let cfg = tiny_train_config(1);
        assert!(matches!(
            train::<f32>(&cfg, &table, &empty, &full, None),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            train::<f32>(&cfg, &table, &full, &empty, None),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn best_checkpoint_prefers_earliest_on_ties() {
        // With a deterministic tiny run, verify the recorded best epoch has
        // the maximum accuracy and is the earliest among equals.
        let table = tiny_table();
        let train_set = synthetic_dataset(14, 4);
        let val_set = synthetic_dataset(15, 2);
        let cfg = tiny_train_config(4);
        let outcome = train::<f32>(&cfg, &table, &train_set, &val_set, None).unwrap();
        let best = outcome.best_epoch;
        let best_acc = outcome.best_val_accuracy;
        for stats in &outcome.history {
            assert!(stats.val_accuracy <= best_acc);
            if stats.epoch < best {
                assert!(stats.val_accuracy < best_acc);
            }
        }
    }
}
