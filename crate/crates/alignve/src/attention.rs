//! Self-attention encoder block: input projection, multi-head scaled
//! dot-product attention, and a residual/layer-norm feed-forward, stacked
//! into N layers.
//!
//! One projection maps the block input to the model dimension before the
//! first layer; inside a layer, with input X and attended features A,
//!
//!   A = MultiHead(X)
//!   X' = LN2(ReLU(LN1(A + X)·W_f + b_f) + A)
//!
//! Note that both the inner addition and the outer residual use A, not X.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Divisor applied to attention logits before the softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// sqrt(d_k) with d_k the per-head dimension; keeps logits
    /// well-conditioned and matches the usual multi-head formulation.
    #[default]
    PerHead,
    /// sqrt of the encoder's pre-projection input dimension.
    PreProjection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Unified feature dimension d.
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub scale: AttentionScale,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            model_dim: 300,
            heads: 6,
            layers: 2,
            layer_norm_eps: 1e-5,
            scale: AttentionScale::PerHead,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::Config(
                "encoder dims, heads and layers must be positive".into(),
            ));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Scaled dot-product attention: softmax_rows(Q·Kᵀ / scale)·V.
pub fn sdp_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: f64,
) -> Result<Tensor<T>> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op: "sdp_attention",
            left: q.shape().to_vec(),
            right: if q.shape() == k.shape() {
                v.shape().to_vec()
            } else {
                k.shape().to_vec()
            },
        });
    }
    assert!(scale > 0.0, "attention scale must be positive");
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, &kt)?;
    let scaled = tape.scale(&logits, 1.0 / scale)?;
    let weights = tape.softmax_rows(&scaled)?;
    tape.matmul(&weights, v)
}

/// Parameter schema of one encoder: the names under which its weights live
/// in the `ParamStore`, plus the dimensions needed to drive the forward pass.
#[derive(Clone, Debug)]
pub struct AttEncParams {
    prefix: String,
    input_dim: usize,
    config: EncoderConfig,
}

impl AttEncParams {
    /// Initializes all encoder weights into `store` under `prefix` and
    /// returns the schema. Weight matrices are Glorot-uniform from `rng` in
    /// a fixed order; biases start at zero, layer-norm gains at one.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        config: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("encoder input dimension must be positive".into()));
        }
        let d = config.model_dim;
        let dk = config.head_dim();
        store.insert(
            format!("{prefix}.in_proj.weight"),
            glorot_uniform(input_dim, d, rng),
        );
        store.insert(format!("{prefix}.in_proj.bias"), Tensor::zeros(vec![d]));
        for layer in 0..config.layers {
            for head in 0..config.heads {
                for kind in ["query", "key", "value"] {
                    store.insert(
                        format!("{prefix}.layer{layer}.head{head}.{kind}"),
                        glorot_uniform(d, dk, rng),
                    );
                }
            }
            store.insert(
                format!("{prefix}.layer{layer}.out_proj"),
                glorot_uniform(d, d, rng),
            );
            store.insert(
                format!("{prefix}.layer{layer}.ff.weight"),
                glorot_uniform(d, d, rng),
            );
            store.insert(
                format!("{prefix}.layer{layer}.ff.bias"),
                Tensor::zeros(vec![d]),
            );
            for ln in ["ln1", "ln2"] {
                store.insert(
                    format!("{prefix}.layer{layer}.{ln}.gamma"),
                    Tensor::full(vec![d], T::ONE),
                );
                store.insert(
                    format!("{prefix}.layer{layer}.{ln}.beta"),
                    Tensor::zeros(vec![d]),
                );
            }
        }
        Ok(AttEncParams {
            prefix: prefix.to_string(),
            input_dim,
            config,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn attention_scale(&self) -> f64 {
        match self.config.scale {
            AttentionScale::PerHead => (self.config.head_dim() as f64).sqrt(),
            AttentionScale::PreProjection => (self.input_dim as f64).sqrt(),
        }
    }

    /// Multi-head attention for one layer: concat(head_1..head_h)·W^O with
    /// head_i = sdp(X·W_i^Q, X·W_i^K, X·W_i^V), heads concatenated along the
    /// feature axis in head order.
    pub fn multi_head_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        layer: usize,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if !x.is_matrix() || x.cols() != self.config.model_dim {
            return Err(Error::ShapeMismatch {
                op: "multi_head_attention",
                left: x.shape().to_vec(),
                right: vec![self.config.model_dim],
            });
        }
        let prefix = &self.prefix;
        let scale = self.attention_scale();
        let mut heads = Vec::with_capacity(self.config.heads);
        for head in 0..self.config.heads {
            let wq = bound.get(&format!("{prefix}.layer{layer}.head{head}.query"))?;
            let wk = bound.get(&format!("{prefix}.layer{layer}.head{head}.key"))?;
            let wv = bound.get(&format!("{prefix}.layer{layer}.head{head}.value"))?;
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            heads.push(sdp_attention(tape, &q, &k, &v, scale)?);
        }
        let concat = tape.concat_cols(&heads)?;
        let wo = bound.get(&format!("{prefix}.layer{layer}.out_proj"))?;
        tape.matmul(&concat, wo)
    }

    /// Full encoder forward: project the input to the model dimension once,
    /// then apply the stacked attention/feed-forward layers.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<T>,
        input: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if !input.is_matrix() || input.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "attenc_forward",
                left: input.shape().to_vec(),
                right: vec![self.input_dim],
            });
        }
        let prefix = &self.prefix;
        let eps = self.config.layer_norm_eps;
        let w_in = bound.get(&format!("{prefix}.in_proj.weight"))?;
        let b_in = bound.get(&format!("{prefix}.in_proj.bias"))?;
        let projected = tape.matmul(input, w_in)?;
        let mut x = tape.add_row_bias(&projected, b_in)?;

        for layer in 0..self.config.layers {
            let attended = self.multi_head_attention(tape, bound, layer, &x)?;
            let residual = tape.add(&attended, &x)?;
            let ln1_g = bound.get(&format!("{prefix}.layer{layer}.ln1.gamma"))?;
            let ln1_b = bound.get(&format!("{prefix}.layer{layer}.ln1.beta"))?;
            let normed = tape.layer_norm(&residual, ln1_g, ln1_b, eps)?;
            let wf = bound.get(&format!("{prefix}.layer{layer}.ff.weight"))?;
            let bf = bound.get(&format!("{prefix}.layer{layer}.ff.bias"))?;
            let ff = tape.matmul(&normed, wf)?;
            let ff = tape.add_row_bias(&ff, bf)?;
            let activated = tape.relu(&ff)?;
            let outer = tape.add(&activated, &attended)?;
            let ln2_g = bound.get(&format!("{prefix}.layer{layer}.ln2.gamma"))?;
            let ln2_b = bound.get(&format!("{prefix}.layer{layer}.ln2.beta"))?;
            x = tape.layer_norm(&outer, ln2_g, ln2_b, eps)?;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                context: format!("{prefix} encoder output"),
            });
        }
        Ok(x)
    }
}
