//! Relation head: the premise/hypothesis alignment matrix, dual adaptive
//! pooling to a fixed-size vector, and the softmax classifier.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{PoolMode, Tape};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
/// Each pooling branch flattens to this many values.
pub const POOLED_LEN: usize = 150;
/// Both branches concatenated: the classifier input width.
pub const CLASSIFIER_INPUT: usize = 2 * POOLED_LEN;

/// m×n matrix of dot products between encoded premise regions (rows) and
/// hypothesis tokens (columns); the relation representation.
#[derive(Clone, Debug)]
pub struct AlignmentMatrix<T: Scalar> {
    values: Tensor<T>,
}

impl<T: Scalar> AlignmentMatrix<T> {
    pub fn regions(&self) -> usize {
        self.values.rows()
    }

    pub fn tokens(&self) -> usize {
        self.values.cols()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn at(&self, region: usize, token: usize) -> T {
        self.values.at(region, token)
    }

    /// Column of alignment strengths for one hypothesis token.
    pub fn column(&self, token: usize) -> Vec<T> {
        (0..self.regions()).map(|i| self.at(i, token)).collect()
    }
}

/// R[i][j] = P[i] · H[j], i.e. P·Hᵀ; differentiable in both inputs.
pub fn alignment_matrix<T: Scalar>(
    tape: &mut Tape<T>,
    premise: &Tensor<T>,
    hypothesis: &Tensor<T>,
) -> Result<AlignmentMatrix<T>> {
    if !premise.is_matrix() || !hypothesis.is_matrix() || premise.cols() != hypothesis.cols() {
        return Err(Error::ShapeMismatch {
            op: "alignment_matrix",
            left: premise.shape().to_vec(),
            right: hypothesis.shape().to_vec(),
        });
    }
    let ht = tape.transpose(hypothesis)?;
    let values = tape.matmul(premise, &ht)?;
    Ok(AlignmentMatrix { values })
}

/// Adaptive 2-D pooling; see `Tape::adaptive_pool` for the bin geometry.
pub fn adaptive_pool_2d<T: Scalar>(
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    mode: PoolMode,
) -> Result<Tensor<T>> {
    tape.adaptive_pool(input, out_h, out_w, mode)
}

/// Classifier parameters: a 300×3 weight matrix and 3 biases.
#[derive(Clone, Debug)]
pub struct ClassifierParams {
    prefix: String,
}

impl ClassifierParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        store.insert(
            format!("{prefix}.weight"),
            glorot_uniform(CLASSIFIER_INPUT, NUM_CLASSES, rng),
        );
        store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![NUM_CLASSES]));
        ClassifierParams {
            prefix: prefix.to_string(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

/// Classification head output, kept as tape tensors so losses can flow.
pub struct ClassifierOutput<T: Scalar> {
    /// 1×3 pre-softmax scores; the training loss consumes these.
    pub logits: Tensor<T>,
    /// 1×3 softmax probabilities, the inference-time output.
    pub probabilities: Tensor<T>,
}

/// Pools the alignment matrix with average and max branches (pool_rows ×
/// pool_cols bins each, flattened row-major), concatenates them to a 300-wide
/// vector, and applies the linear + softmax classifier.
pub fn classify<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams<T>,
    classifier: &ClassifierParams,
    alignment: &AlignmentMatrix<T>,
    pool_rows: usize,
    pool_cols: usize,
) -> Result<ClassifierOutput<T>> {
    if pool_rows * pool_cols != POOLED_LEN {
        return Err(Error::PoolShape {
            rows: pool_rows,
            cols: pool_cols,
            expected: POOLED_LEN,
        });
    }
    let avg = tape.adaptive_pool(alignment.tensor(), pool_rows, pool_cols, PoolMode::Avg)?;
    let max = tape.adaptive_pool(alignment.tensor(), pool_rows, pool_cols, PoolMode::Max)?;
    let avg_flat = tape.reshape(&avg, vec![1, POOLED_LEN])?;
    let max_flat = tape.reshape(&max, vec![1, POOLED_LEN])?;
    let pooled = tape.concat_cols(&[avg_flat, max_flat])?;
    let weight = bound.get(&format!("{}.weight", classifier.prefix))?;
    let bias = bound.get(&format!("{}.bias", classifier.prefix))?;
    let scores = tape.matmul(&pooled, weight)?;
    let logits = tape.add_row_bias(&scores, bias)?;
    let probabilities = tape.softmax_rows(&logits)?;
    Ok(ClassifierOutput {
        logits,
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::pool_bin;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn orthonormal_rows_give_identity() {
        let mut tape = Tape::new();
        let basis = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = alignment_matrix(&mut tape, &basis, &basis).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn alignment_is_bilinear() {
        let mut r = rng(51);
        let mut tape = Tape::new();
        let p = random_matrix(4, 3, &mut r);
        let h = random_matrix(5, 3, &mut r);
        let h2 = Tensor::new(vec![5, 3], h.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let r1 = alignment_matrix(&mut tape, &p, &h).unwrap();
        let r2 = alignment_matrix(&mut tape, &p, &h2).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert!((r2.at(i, j) - 2.0 * r1.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_matches_nested_loop_oracle() {
        let mut r = rng(52);
        for _ in 0..100 {
            let (m, n, d) = (4, 5, 3);
            let p = random_matrix(m, d, &mut r);
            let h = random_matrix(n, d, &mut r);
            let mut tape = Tape::new();
            let got = alignment_matrix(&mut tape, &p, &h).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let mut dot = 0.0;
                    for k in 0..d {
                        dot += p.at(i, k) * h.at(j, k);
                    }
                    assert!((got.at(i, j) - dot).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn alignment_transpose_symmetry() {
        let mut r = rng(53);
        let p = random_matrix(6, 4, &mut r);
        let h = random_matrix(3, 4, &mut r);
        let mut tape = Tape::new();
        let ph = alignment_matrix(&mut tape, &p, &h).unwrap();
        let hp = alignment_matrix(&mut tape, &h, &p).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                assert!((ph.at(i, j) - hp.at(j, i)).abs() < 1e-6);
            }
        }
    }

    // Brute-force pooling oracle straight from the bin formula.
    fn pool_oracle(x: &Tensor<f64>, out_h: usize, out_w: usize, mode: PoolMode) -> Vec<f64> {
        let (m, n) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(out_h * out_w);
        for i in 0..out_h {
            let (r0, r1) = pool_bin(i, m, out_h);
            for j in 0..out_w {
                let (c0, c1) = pool_bin(j, n, out_w);
                let mut values = Vec::new();
                for rr in r0..r1 {
                    for cc in c0..c1 {
                        values.push(x.at(rr, cc));
                    }
                }
                out.push(match mode {
                    PoolMode::Avg => values.iter().sum::<f64>() / values.len() as f64,
                    PoolMode::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
        out
    }

    #[test]
    fn pooling_matches_oracle_exhaustively_small() {
        let mut r = rng(54);
        for m in 1..=8 {
            for n in 1..=8 {
                let x = random_matrix(m, n, &mut r);
                for out_h in 1..=8 {
                    for out_w in 1..=8 {
                        for mode in [PoolMode::Avg, PoolMode::Max] {
                            let mut tape = Tape::new();
                            let got = tape.adaptive_pool(&x, out_h, out_w, mode).unwrap();
                            let want = pool_oracle(&x, out_h, out_w, mode);
                            for (a, b) in got.data().iter().zip(&want) {
                                assert_eq!(a, b, "m={m} n={n} out={out_h}x{out_w} {mode:?}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_constant_matrix() {
        let x = Tensor::full(vec![4, 6], 3.25f64);
        let mut tape = Tape::new();
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let y = tape.adaptive_pool(&x, 3, 5, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 3.25));
        }
    }

    fn classifier_fixture(seed: u64) -> (ParamStore<f64>, ClassifierParams) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let params = ClassifierParams::init(&mut store, "classifier", &mut r);
        (store, params)
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let (mut store, params) = classifier_fixture(55);
        *store.get_mut("classifier.weight").unwrap() =
            Tensor::zeros(vec![CLASSIFIER_INPUT, NUM_CLASSES]).with_grad();
        let mut r = rng(56);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let alignment =
            alignment_matrix(&mut tape, &random_matrix(36, 4, &mut r), &random_matrix(5, 4, &mut r))
                .unwrap();
        let out = classify(&mut tape, &bound, &params, &alignment, 10, 15).unwrap();
        for &p in out.probabilities.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_form_a_simplex() {
        let (store, params) = classifier_fixture(57);
        let mut r = rng(58);
        for _ in 0..1000 {
            let m = r.gen_range(1..8) * 5;
            let n = r.gen_range(1..20);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let alignment = alignment_matrix(
                &mut tape,
                &random_matrix(m, 3, &mut r),
                &random_matrix(n, 3, &mut r),
            )
            .unwrap();
            let out = classify(&mut tape, &bound, &params, &alignment, 10, 15).unwrap();
            assert_eq!(out.probabilities.shape(), &[1, NUM_CLASSES]);
            let sum: f64 = out.probabilities.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(out.probabilities.data().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn constant_alignment_pools_to_constant_vector() {
        let (store, params) = classifier_fixture(59);
        let c = -0.4f64;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = Tensor::full(vec![4, 2], c);
        let basis = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let alignment = alignment_matrix(&mut tape, &p, &basis).unwrap();
        // R is constant c; both pooled branches must be 150 copies of c.
        let avg = tape
            .adaptive_pool(alignment.tensor(), 10, 15, PoolMode::Avg)
            .unwrap();
        let max = tape
            .adaptive_pool(alignment.tensor(), 10, 15, PoolMode::Max)
            .unwrap();
        assert!(avg.data().iter().all(|&v| (v - c).abs() < 1e-12));
        assert!(max.data().iter().all(|&v| (v - c).abs() < 1e-12));
        let out = classify(&mut tape, &bound, &params, &alignment, 10, 15).unwrap();
        let sum: f64 = out.probabilities.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_pool_shape_is_rejected() {
        let (store, params) = classifier_fixture(60);
        let mut r = rng(61);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let alignment = alignment_matrix(
            &mut tape,
            &random_matrix(6, 3, &mut r),
            &random_matrix(4, 3, &mut r),
        )
        .unwrap();
        assert!(matches!(
            classify(&mut tape, &bound, &params, &alignment, 10, 16),
            Err(Error::PoolShape { rows: 10, cols: 16, expected: 150 })
        ));
    }

    #[test]
    fn classifier_gradients_check_out() {
        let (store, params) = classifier_fixture(62);
        let mut r = rng(63);
        let p = random_matrix(7, 3, &mut r);
        let h = random_matrix(4, 3, &mut r);
        let err = crate::gradcheck::finite_difference_check(
            |bound, tape| {
                let pl = tape.leaf(p.clone().with_grad());
                let alignment = alignment_matrix(tape, &pl, &h)?;
                let out = classify(tape, bound, &params, &alignment, 10, 15)?;
                tape.cross_entropy(&out.logits, 1)
            },
            &store,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
