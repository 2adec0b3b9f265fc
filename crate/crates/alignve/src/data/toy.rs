//! Synthetic, verifiably separable visual-entailment data.
//!
//! Each concept family draws a unit vector c and an orthogonal unit vector
//! c⊥ in the shared low dimensions of the premise and embedding spaces. A
//! premise always contains a handful of rows near c plus noise rows; the
//! hypothesis tokens embed near c for entailment, near −c for contradiction
//! and near c⊥ for neutral. The dot-product alignment signal therefore
//! separates the classes by construction, which a nearest-concept oracle in
//! the tests verifies at better than 99% agreement for small noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::save_embeddings;
use super::features::write_feature_file;
use super::manifest::{label_name, ManifestEntry};
use crate::error::Result;
use crate::visual::{PremiseFeatures, GRID_SIZE};

const TOKENS_PER_GROUP: usize = 3;
const CONCEPT_ROWS: usize = 9;

/// Token embeddings are scaled concept directions. Word-vector tables have
/// norms well above one; keeping that here stops the positional encoding
/// from drowning the content signal.
pub const EMBEDDING_SCALE: f64 = 4.0;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ToyConfig {
    pub examples_per_class: usize,
    pub premise_dim: usize,
    pub embedding_dim: usize,
    /// Noise standard deviation applied to premise rows and embeddings.
    pub noise: f64,
    /// Approximate vocabulary size; rounded to 9 tokens per family.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            examples_per_class: 100,
            premise_dim: 32,
            embedding_dim: 16,
            noise: 0.1,
            vocab_size: 45,
            seed: 12345,
        }
    }
}

pub struct ToyOutput {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub embeddings: PathBuf,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn orthogonal_unit(to: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let raw = unit_vector(to.len(), rng);
        let dot: f64 = raw.iter().zip(to).map(|(a, b)| a * b).sum();
        let v: Vec<f64> = raw.iter().zip(to).map(|(a, b)| a - dot * b).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Pads a scaled concept vector into a `dim`-wide space and adds a gaussian
/// perturbation whose whole-row norm is about `noise`. With an empty concept
/// this produces a pure noise row of norm ≈ noise, small enough that the
/// encoders treat it as background rather than content.
fn jittered_row(
    concept: &[f64],
    scale: f64,
    dim: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let per_component = noise / (dim as f64).sqrt();
    (0..dim)
        .map(|i| {
            let base = if i < concept.len() { scale * concept[i] } else { 0.0 };
            (base + per_component * gaussian(rng)) as f32
        })
        .collect()
}

struct Family {
    concept: Vec<f64>,
    orthogonal: Vec<f64>,
}

fn group_token(family: usize, group: &str, index: usize) -> String {
    format!("f{family}{group}{index}")
}

/// Generates feature files, an embedding file and 80/10/10 train/val/test
/// manifests under `out_dir`. Deterministic: the same config writes the same
/// bytes.
pub fn generate_toy_dataset(cfg: &ToyConfig, out_dir: &Path) -> Result<ToyOutput> {
    assert!(cfg.examples_per_class >= 10, "need at least 10 examples per class");
    assert!(cfg.premise_dim >= 1 && cfg.embedding_dim >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features_dir = out_dir.join("features");
    std::fs::create_dir_all(&features_dir)?;

    let concept_dim = cfg.premise_dim.min(cfg.embedding_dim);
    let family_count = (cfg.vocab_size / (3 * TOKENS_PER_GROUP)).max(1);
    let families: Vec<Family> = (0..family_count)
        .map(|_| {
            let concept = unit_vector(concept_dim, &mut rng);
            let orthogonal = orthogonal_unit(&concept, &mut rng);
            Family { concept, orthogonal }
        })
        .collect();

    // Vocabulary: per family, three tokens per relation group.
    let mut vocab: Vec<(String, Vec<f32>)> = Vec::new();
    for (f, family) in families.iter().enumerate() {
        for (group, concept, sign) in [
            ("pos", &family.concept, EMBEDDING_SCALE),
            ("neg", &family.concept, -EMBEDDING_SCALE),
            ("orth", &family.orthogonal, EMBEDDING_SCALE),
        ] {
            for t in 0..TOKENS_PER_GROUP {
                vocab.push((
                    group_token(f, group, t),
                    jittered_row(concept, sign, cfg.embedding_dim, cfg.noise, &mut rng),
                ));
            }
        }
    }
    let embeddings_path = out_dir.join("embeddings.txt");
    save_embeddings(&embeddings_path, &vocab)?;

    let n_train = cfg.examples_per_class * 8 / 10;
    let n_val = cfg.examples_per_class / 10;
    let mut manifests: [Vec<ManifestEntry>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    for label in 0..3usize {
        for i in 0..cfg.examples_per_class {
            let family_idx = i % family_count;
            let family = &families[family_idx];
            let id = format!("{}{:04}", &label_name(label)[..3], i);

            // Premise: CONCEPT_ROWS rows near the family concept, the rest
            // noise. Even examples store grid maps, odd ones RoI lists.
            let features = if i % 2 == 0 {
                let mut cells: Vec<usize> = (0..GRID_SIZE * GRID_SIZE).collect();
                for k in 0..CONCEPT_ROWS {
                    let j = rng.gen_range(k..cells.len());
                    cells.swap(k, j);
                }
                let concept_cells: Vec<usize> = cells[..CONCEPT_ROWS].to_vec();
                let mut data = vec![0f32; GRID_SIZE * GRID_SIZE * cfg.premise_dim];
                for cell in 0..GRID_SIZE * GRID_SIZE {
                    let row = if concept_cells.contains(&cell) {
                        jittered_row(&family.concept, 1.0, cfg.premise_dim, cfg.noise, &mut rng)
                    } else {
                        jittered_row(&[], 1.0, cfg.premise_dim, cfg.noise, &mut rng)
                    };
                    data[cell * cfg.premise_dim..(cell + 1) * cfg.premise_dim]
                        .copy_from_slice(&row);
                }
                PremiseFeatures::Grid {
                    height: GRID_SIZE,
                    width: GRID_SIZE,
                    channels: cfg.premise_dim,
                    data,
                }
            } else {
                let count = rng.gen_range(20..=50);
                let mut scores = Vec::with_capacity(count);
                let mut boxes = Vec::with_capacity(count);
                let mut features = Vec::with_capacity(count * cfg.premise_dim);
                for r in 0..count {
                    let is_concept = r < CONCEPT_ROWS;
                    scores.push(if is_concept {
                        rng.gen_range(0.8..1.0) as f32
                    } else {
                        rng.gen_range(0.0..0.7) as f32
                    });
                    let x1 = rng.gen_range(0.0..600.0) as f32;
                    let y1 = rng.gen_range(0.0..440.0) as f32;
                    boxes.push([
                        x1,
                        y1,
                        x1 + rng.gen_range(5.0..40.0) as f32,
                        y1 + rng.gen_range(5.0..40.0) as f32,
                    ]);
                    let row = if is_concept {
                        jittered_row(&family.concept, 1.0, cfg.premise_dim, cfg.noise, &mut rng)
                    } else {
                        jittered_row(&[], 1.0, cfg.premise_dim, cfg.noise, &mut rng)
                    };
                    features.extend_from_slice(&row);
                }
                PremiseFeatures::Roi {
                    count,
                    channels: cfg.premise_dim,
                    scores,
                    boxes: Some(boxes),
                    features,
                }
            };
            let feature_file = format!("features/{id}.avef");
            write_feature_file(&out_dir.join(&feature_file), &features)?;

            // Hypothesis: 3–6 tokens from the label's group of this family.
            let group = match label {
                0 => "pos",
                1 => "orth",
                _ => "neg",
            };
            let token_count = rng.gen_range(3..=6);
            let tokens: Vec<String> = (0..token_count)
                .map(|_| group_token(family_idx, group, rng.gen_range(0..TOKENS_PER_GROUP)))
                .collect();
            let entry = ManifestEntry {
                id,
                feature_file,
                hypothesis: tokens.join(" "),
                label: label_name(label).to_string(),
            };
            let split = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            manifests[split].push(entry);
        }
    }

    let paths = [
        out_dir.join("train.jsonl"),
        out_dir.join("val.jsonl"),
        out_dir.join("test.jsonl"),
    ];
    for (path, entries) in paths.iter().zip(&manifests) {
        let mut content = String::new();
        for entry in entries {
            content.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
            content.push('\n');
        }
        std::fs::write(path, content)?;
    }

    Ok(ToyOutput {
        train_manifest: paths[0].clone(),
        val_manifest: paths[1].clone(),
        test_manifest: paths[2].clone(),
        embeddings: embeddings_path,
    })
}
