//! Trains briefly, saves the best checkpoint, reloads it from disk and
//! evaluates the test split — demonstrating that a checkpoint round-trip
//! reproduces the model exactly.
//!
//! ```bash
//! cargo run --release --example evaluate_checkpoint
//! ```

use alignve::attention::EncoderConfig;
use alignve::data::manifest::{label_name, load_dataset};
use alignve::data::{generate_toy_dataset, load_embeddings, Checkpoint, ToyConfig};
use alignve::model::{Model, ModelConfig};
use alignve::params::ParamStore;
use alignve::trainer::{evaluate, train, TrainConfig};

fn main() -> alignve::Result<()> {
    let dir = std::env::temp_dir().join("alignve_evaluate");
    let toy = ToyConfig::default();
    let artifacts = generate_toy_dataset(&toy, &dir)?;
    let table = load_embeddings(&artifacts.embeddings)?;
    let train_set = load_dataset(&artifacts.train_manifest)?;
    let val_set = load_dataset(&artifacts.val_manifest)?;
    let test_set = load_dataset(&artifacts.test_manifest)?;

    let config = TrainConfig {
        lr: 1e-3,
        max_epochs: 15,
        model: ModelConfig {
            premise_dim: toy.premise_dim,
            embedding_dim: toy.embedding_dim,
            encoder: EncoderConfig {
                model_dim: 16,
                heads: 2,
                layers: 1,
                ..Default::default()
            },
            pool_rows: 10,
            pool_cols: 15,
            max_len: 64,
        },
        ..TrainConfig::default()
    };
    let outcome = train::<f32>(&config, &table, &train_set, &val_set, None)?;

    let path = dir.join("best.avck");
    outcome.best_checkpoint.save(&path)?;
    let reloaded = Checkpoint::load(&path)?;
    let store: ParamStore<f32> = reloaded.into_param_store(&config.model)?;
    let (model, _) = Model::init::<f32>(config.model, 0)?;

    let metrics = evaluate(&model, &store, &table, &test_set)?;
    println!("test accuracy {:.3}", metrics.accuracy);
    println!("mean loss     {:.4}", metrics.mean_loss);
    for (i, acc) in metrics.per_class_accuracy.iter().enumerate() {
        println!("  {:<13} {:.3}", label_name(i), acc);
    }
    println!("confusion matrix (rows = truth, cols = prediction):");
    for row in metrics.confusion {
        println!("  {row:?}");
    }
    Ok(())
}
