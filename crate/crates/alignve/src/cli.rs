//! Command-line entry point: `train`, `eval`, `gradcheck`, `gen-toy` and
//! `visualize` subcommands over a JSON config file, with flag overrides.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error,
//! 3 numerical failure (non-finite loss or a failed gradient check).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, load_embeddings, generate_toy_dataset, Checkpoint, ToyConfig};
use crate::error::{Error, Result};
use crate::gradcheck::finite_difference_check;
use crate::model::Model;
use crate::optim::OptimizerKind;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::text::positional_encoding;
use crate::trainer::{evaluate, train, TrainConfig};
use crate::visual::{encode_premise, PREMISE_REGIONS};
use crate::viz::render_heatmaps;

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// JSON config file: training hyperparameters plus the file paths a run
/// needs. Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CliConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub embeddings: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Synthetic hypothesis length used by `gradcheck`.
    #[serde(default = "default_gradcheck_tokens")]
    pub gradcheck_tokens: usize,
}

fn default_gradcheck_tokens() -> usize {
    5
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<CliConfig> {
        let content = std::fs::read_to_string(path)?;
        let mut config: CliConfig = serde_json::from_str(&content).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for slot in [
            &mut config.embeddings,
            &mut config.train_manifest,
            &mut config.val_manifest,
            &mut config.test_manifest,
            &mut config.out_dir,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(config)
    }
}

#[derive(Parser, Debug)]
#[command(name = "alignve", about = "Alignment-based visual entailment", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the optimizer.
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    /// Override the learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the pooling bin shape, e.g. 10x15.
    #[arg(long, value_parser = parse_pool_shape)]
    pool_shape: Option<(usize, usize)>,
}

fn parse_optimizer(value: &str) -> std::result::Result<OptimizerKind, String> {
    match value {
        "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
    }
}

fn parse_pool_shape(value: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("pool shape {value:?} is not HxW"))?;
    let h = h.parse().map_err(|_| format!("bad pool rows {h:?}"))?;
    let w = w.parse().map_err(|_| format!("bad pool cols {w:?}"))?;
    Ok((h, w))
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the configured manifests.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test (or validation) split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of the full model in f64.
    Gradcheck(CommonArgs),
    /// Generate the synthetic toy dataset plus a ready-to-train config.
    GenToy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        examples_per_class: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Render per-token alignment heatmaps for one example.
    Visualize {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        example_id: String,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn load_config(common: &CommonArgs) -> Result<CliConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut config = CliConfig::load(path)?;
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(lr) = common.lr {
        config.train.lr = lr;
    }
    if let Some(optimizer) = common.optimizer {
        config.train.optimizer = optimizer;
    }
    if let Some((rows, cols)) = common.pool_shape {
        config.train.model.pool_rows = rows;
        config.train.model.pool_cols = cols;
    }
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("config is missing {what}")))
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    config.train.validate()?;
    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("alignve_run"));
    std::fs::create_dir_all(&out_dir)?;
    // Freeze the fully resolved config into the run directory first.
    let resolved = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(out_dir.join("config.json"), resolved)?;

    let table = load_embeddings(require(&config.embeddings, "embeddings")?)?;
    let train_set = load_dataset(require(&config.train_manifest, "train_manifest")?)?;
    let val_set = load_dataset(require(&config.val_manifest, "val_manifest")?)?;
    let outcome = train::<f32>(&config.train, &table, &train_set, &val_set, Some(&out_dir))?;
    for stats in &outcome.history {
        println!(
            "epoch {:3}  train_loss {:.6}  val_loss {:.6}  val_acc {:.4}  lr {:.2e}",
            stats.epoch, stats.train_loss, stats.val_loss, stats.val_accuracy, stats.lr
        );
    }
    println!(
        "best epoch {} with validation accuracy {:.4}; artifacts in {}",
        outcome.best_epoch,
        outcome.best_val_accuracy,
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path) -> Result<()> {
    let config = load_config(common)?;
    let table = load_embeddings(require(&config.embeddings, "embeddings")?)?;
    let manifest = config
        .test_manifest
        .as_deref()
        .or(config.val_manifest.as_deref())
        .ok_or_else(|| Error::Config("config is missing test_manifest or val_manifest".into()))?;
    let dataset = load_dataset(manifest)?;
    let loaded = Checkpoint::load(checkpoint)?;
    let store: ParamStore<f32> = loaded.into_param_store(&config.train.model)?;
    let (model, _) = Model::init::<f32>(config.train.model, 0)?;
    let metrics = evaluate(&model, &store, &table, &dataset)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    Ok(())
}

/// Full-model finite-difference check on synthetic inputs, in f64.
pub fn run_gradcheck(config: &TrainConfig, tokens: usize) -> Result<f64> {
    let (model, store) = Model::init::<f64>(config.model, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x67d2c0de);
    let premise = Tensor::new(
        vec![PREMISE_REGIONS, config.model.premise_dim],
        (0..PREMISE_REGIONS * config.model.premise_dim)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect(),
    )?;
    let embeddings = Tensor::new(
        vec![tokens, config.model.embedding_dim],
        (0..tokens * config.model.embedding_dim)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect(),
    )?;
    let pe = positional_encoding::<f64>(tokens, config.model.embedding_dim)?;
    let label = rng.gen_range(0..3);
    finite_difference_check(
        |bound, tape| {
            let encoded_premise = encode_premise(tape, bound, model.premise_encoder(), &premise)?;
            let with_positions = tape.add(&embeddings, &pe)?;
            let encoded_hypothesis = model
                .hypothesis_encoder()
                .forward(tape, bound, &with_positions)?;
            let out = model.head(tape, bound, &encoded_premise, &encoded_hypothesis)?;
            tape.cross_entropy(&out.output.logits, label)
        },
        &store,
        1e-5,
    )
}

fn cmd_gradcheck(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    config.train.validate()?;
    let error = run_gradcheck(&config.train, config.gradcheck_tokens)?;
    println!("max relative error: {error:.3e}");
    if error >= GRADCHECK_THRESHOLD {
        return Err(Error::NonFinite {
            context: format!("gradient check failed: {error:.3e} >= {GRADCHECK_THRESHOLD:.0e}"),
        });
    }
    Ok(())
}

fn cmd_gen_toy(common: &CommonArgs, examples_per_class: usize, noise: f64) -> Result<()> {
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("toy_data"));
    let toy = ToyConfig {
        examples_per_class,
        noise,
        seed: common.seed.unwrap_or(12345),
        ..ToyConfig::default()
    };
    let output = generate_toy_dataset(&toy, &out_dir)?;
    // A config tuned for the toy scale, ready for `train --config`.
    let config = CliConfig {
        train: TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            seed: toy.seed,
            model: crate::model::ModelConfig {
                premise_dim: toy.premise_dim,
                embedding_dim: toy.embedding_dim,
                encoder: crate::attention::EncoderConfig {
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
        },
        embeddings: Some(PathBuf::from("embeddings.txt")),
        train_manifest: Some(PathBuf::from("train.jsonl")),
        val_manifest: Some(PathBuf::from("val.jsonl")),
        test_manifest: Some(PathBuf::from("test.jsonl")),
        out_dir: Some(PathBuf::from("run")),
        gradcheck_tokens: default_gradcheck_tokens(),
    };
    let json = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(out_dir.join("toy_config.json"), json)?;
    println!(
        "wrote {} examples per class under {} (train/val/test manifests, embeddings.txt, toy_config.json)",
        examples_per_class,
        out_dir.display()
    );
    let _ = output;
    Ok(())
}

fn cmd_visualize(common: &CommonArgs, checkpoint: &Path, example_id: &str) -> Result<()> {
    let config = load_config(common)?;
    let table = load_embeddings(require(&config.embeddings, "embeddings")?)?;
    let loaded = Checkpoint::load(checkpoint)?;
    let store: ParamStore<f32> = loaded.into_param_store(&config.train.model)?;
    let (model, _) = Model::init::<f32>(config.train.model, 0)?;
    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("heatmaps"));

    let mut example = None;
    for manifest in [
        &config.train_manifest,
        &config.val_manifest,
        &config.test_manifest,
    ]
    .into_iter()
    .flatten()
    {
        let dataset = load_dataset(manifest)?;
        if let Some(found) = dataset.find(example_id) {
            example = Some(found.clone());
            break;
        }
    }
    let example = example
        .ok_or_else(|| Error::Config(format!("example id {example_id:?} not found in manifests")))?;
    let rendered = render_heatmaps(&model, &store, &table, &example, &out_dir)?;
    println!(
        "wrote {} heatmaps and {} for example {example_id}",
        rendered.images.len(),
        rendered.csv.display()
    );
    Ok(())
}

/// Parses argv and dispatches. Returns the process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successful exits.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(common) => cmd_train(common),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::Gradcheck(common) => cmd_gradcheck(common),
        Command::GenToy {
            common,
            examples_per_class,
            noise,
        } => cmd_gen_toy(common, *examples_per_class, *noise),
        Command::Visualize {
            common,
            checkpoint,
            example_id,
        } => cmd_visualize(common, checkpoint, example_id),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
