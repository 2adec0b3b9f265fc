//! Trains the model on freshly generated toy data and reports the best
//! checkpoint. The whole run is seeded, so repeated invocations print the
//! same numbers.
//!
//! ```bash
//! cargo run --release --example train_toy
//! ```

use alignve::attention::EncoderConfig;
use alignve::data::{generate_toy_dataset, load_embeddings, ToyConfig};
use alignve::data::manifest::load_dataset;
use alignve::model::ModelConfig;
use alignve::optim::OptimizerKind;
use alignve::trainer::{train, TrainConfig};

fn main() -> alignve::Result<()> {
    let dir = std::env::temp_dir().join("alignve_train_toy");
    let toy = ToyConfig::default();
    let artifacts = generate_toy_dataset(&toy, &dir)?;
    let table = load_embeddings(&artifacts.embeddings)?;
    let train_set = load_dataset(&artifacts.train_manifest)?;
    let val_set = load_dataset(&artifacts.val_manifest)?;

    let config = TrainConfig {
        lr: 1e-3,
        optimizer: OptimizerKind::Adam,
        batch_size: 64,
        max_epochs: 20,
        seed: 12345,
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

    let run_dir = dir.join("run");
    let outcome = train::<f32>(&config, &table, &train_set, &val_set, Some(&run_dir))?;
    for stats in &outcome.history {
        println!(
            "epoch {:2}  train_loss {:.4}  val_loss {:.4}  val_acc {:.3}  lr {:.1e}",
            stats.epoch, stats.train_loss, stats.val_loss, stats.val_accuracy, stats.lr
        );
    }
    println!(
        "best checkpoint: epoch {} at {:.1}% validation accuracy",
        outcome.best_epoch,
        100.0 * outcome.best_val_accuracy
    );
    println!("artifacts under {}", run_dir.display());
    Ok(())
}
