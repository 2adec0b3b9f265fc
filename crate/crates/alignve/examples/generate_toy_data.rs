//! Generates the synthetic visual-entailment dataset: feature files, an
//! embedding table and train/val/test manifests.
//!
//! ```bash
//! cargo run --example generate_toy_data -- [out_dir]
//! ```

use std::path::PathBuf;

use alignve::data::manifest::load_dataset;
use alignve::data::{generate_toy_dataset, ToyConfig};

fn main() -> alignve::Result<()> {
    let out_dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "toy_data".to_string()),
    );
    let config = ToyConfig::default();
    let output = generate_toy_dataset(&config, &out_dir)?;
    println!(
        "generated {} examples per class (seed {}) under {}",
        config.examples_per_class,
        config.seed,
        out_dir.display()
    );
    for manifest in [
        &output.train_manifest,
        &output.val_manifest,
        &output.test_manifest,
    ] {
        let dataset = load_dataset(manifest)?;
        println!(
            "  {}: {} examples, class histogram {:?}",
            manifest.file_name().unwrap().to_string_lossy(),
            dataset.len(),
            dataset.class_histogram()
        );
    }
    println!("embedding table: {}", output.embeddings.display());
    Ok(())
}
