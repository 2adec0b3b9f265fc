//! Full premise/hypothesis model: feature preparation, both encoders, the
//! alignment head and the classifier, wired onto one tape per example.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    alignment_matrix, classify, AlignmentMatrix, ClassifierParams, ClassifierOutput, POOLED_LEN,
};
use crate::attention::{AttEncParams, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::text::{encode_hypothesis, EmbeddingTable};
use crate::visual::{encode_premise, PremiseFeatures, PREMISE_REGIONS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Premise feature dimension d_p.
    pub premise_dim: usize,
    /// Hypothesis embedding dimension d_h.
    pub embedding_dim: usize,
    pub encoder: EncoderConfig,
    pub pool_rows: usize,
    pub pool_cols: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            premise_dim: 2048,
            embedding_dim: 300,
            encoder: EncoderConfig::default(),
            pool_rows: 10,
            pool_cols: 15,
            max_len: crate::text::DEFAULT_MAX_LEN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.premise_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if self.embedding_dim % 2 != 0 {
            return Err(Error::Config(
                "embedding_dim must be even for the positional encoding".into(),
            ));
        }
        if self.pool_rows * self.pool_cols != POOLED_LEN {
            return Err(Error::PoolShape {
                rows: self.pool_rows,
                cols: self.pool_cols,
                expected: POOLED_LEN,
            });
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter schema of the full model. The tensors themselves live in a
/// `ParamStore`; premise and hypothesis encoders never share entries.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    premise_encoder: AttEncParams,
    hypothesis_encoder: AttEncParams,
    classifier: ClassifierParams,
}

pub struct ForwardOutput<T: Scalar> {
    pub output: ClassifierOutput<T>,
    pub alignment: AlignmentMatrix<T>,
}

impl Model {
    /// Initializes all parameters from the seeded RNG in a fixed order:
    /// premise encoder, hypothesis encoder, classifier.
    pub fn init<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, &mut rng)
    }

    pub fn init_with_rng<T: Scalar>(
        config: ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Model, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let premise_encoder = AttEncParams::init(
            &mut store,
            "premise_encoder",
            config.premise_dim,
            config.encoder,
            rng,
        )?;
        let hypothesis_encoder = AttEncParams::init(
            &mut store,
            "hypothesis_encoder",
            config.embedding_dim,
            config.encoder,
            rng,
        )?;
        let classifier = ClassifierParams::init(&mut store, "classifier", rng);
        Ok((
            Model {
                config,
                premise_encoder,
                hypothesis_encoder,
                classifier,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn premise_encoder(&self) -> &AttEncParams {
        &self.premise_encoder
    }

    pub fn hypothesis_encoder(&self) -> &AttEncParams {
        &self.hypothesis_encoder
    }

    /// Full forward pass from raw inputs to class probabilities, also
    /// returning the alignment matrix for inspection or rendering.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        premise: &PremiseFeatures,
        hypothesis: &str,
        table: &EmbeddingTable,
    ) -> Result<ForwardOutput<T>> {
        let prepared = premise.prepare::<T>(self.config.premise_dim)?;
        self.forward_prepared(tape, bound, &prepared, hypothesis, table)
    }

    /// Forward pass from an already prepared 36×d_p premise matrix.
    pub fn forward_prepared<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        premise: &Tensor<T>,
        hypothesis: &str,
        table: &EmbeddingTable,
    ) -> Result<ForwardOutput<T>> {
        let encoded_premise = encode_premise(tape, bound, &self.premise_encoder, premise)?;
        let encoded_hypothesis = encode_hypothesis(
            tape,
            bound,
            &self.hypothesis_encoder,
            hypothesis,
            table,
            self.config.max_len,
        )?;
        self.head(tape, bound, &encoded_premise, &encoded_hypothesis)
    }

    /// Alignment + classification over already encoded premise and
    /// hypothesis matrices. Used directly by the gradient checker, which
    /// feeds synthetic token embeddings instead of a vocabulary.
    pub fn head<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        encoded_premise: &Tensor<T>,
        encoded_hypothesis: &Tensor<T>,
    ) -> Result<ForwardOutput<T>> {
        let alignment = alignment_matrix(tape, encoded_premise, encoded_hypothesis)?;
        let output = classify(
            tape,
            bound,
            &self.classifier,
            &alignment,
            self.config.pool_rows,
            self.config.pool_cols,
        )?;
        Ok(ForwardOutput { output, alignment })
    }

    /// Forward pass plus cross-entropy against a label, returning the scalar
    /// loss tensor and the forward output.
    pub fn example_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        premise: &PremiseFeatures,
        hypothesis: &str,
        label: usize,
        table: &EmbeddingTable,
    ) -> Result<(Tensor<T>, ForwardOutput<T>)> {
        let out = self.forward(tape, bound, premise, hypothesis, table)?;
        let loss = tape.cross_entropy(&out.output.logits, label)?;
        Ok((loss, out))
    }

    /// Encoder input dimension sanity for gradient checking: a synthetic
    /// hypothesis embedding must be n×d_h.
    pub fn hypothesis_input_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn premise_regions(&self) -> usize {
        PREMISE_REGIONS
    }
}
