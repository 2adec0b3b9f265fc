//! Verifies every analytic gradient in the full model against central
//! finite differences in f64, end to end through both encoders, the
//! alignment matrix, the pooled classifier and the cross-entropy loss.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use alignve::attention::EncoderConfig;
use alignve::cli::{run_gradcheck, GRADCHECK_THRESHOLD};
use alignve::model::ModelConfig;
use alignve::trainer::TrainConfig;

fn main() -> alignve::Result<()> {
    let config = TrainConfig {
        seed: 12345,
        model: ModelConfig {
            premise_dim: 12,
            embedding_dim: 8,
            encoder: EncoderConfig {
                model_dim: 8,
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
    let started = std::time::Instant::now();
    let error = run_gradcheck(&config, 5)?;
    println!(
        "max relative error {error:.3e} over all parameters ({:?})",
        started.elapsed()
    );
    println!(
        "{}",
        if error < GRADCHECK_THRESHOLD {
            "gradients check out"
        } else {
            "GRADIENTS DO NOT MATCH"
        }
    );
    Ok(())
}
