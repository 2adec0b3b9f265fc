//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::params::{BoundParams, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Compares analytic gradients of `f` against central finite differences
/// (f(θ+h) − f(θ−h)) / 2h for every scalar entry of every parameter, and
/// returns the largest relative error |a − n| / max(|a|, |n|, 1e-8).
///
/// Only meaningful in f64; single precision loses the difference digits.
/// An empty store vacuously returns 0.
pub fn finite_difference_check<F>(f: F, params: &ParamStore<f64>, h: f64) -> Result<f64>
where
    F: Fn(&BoundParams<f64>, &mut Tape<f64>) -> Result<Tensor<f64>>,
{
    assert!(h > 0.0, "step size must be positive");

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&bound, &mut tape)?;
    let grads = tape.backward(&loss)?;

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        Ok(f(&bound, &mut tape)?.data()[0])
    };

    let mut worst: f64 = 0.0;
    for (name, _) in params.iter() {
        let analytic = grads
            .wrt(bound.get(name)?)
            .expect("bound parameters live on the tape");
        let numel = analytic.numel();
        for i in 0..numel {
            let mut plus = params.clone();
            plus.get_mut(name)?.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name)?.data_mut()[i] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store() -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert(
            "w",
            Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.2, 0.05]).unwrap(),
        );
        store
    }

    #[test]
    fn correct_gradient_passes() {
        let store = quadratic_store();
        let err = finite_difference_check(
            |bound, tape| {
                let w = bound.get("w")?;
                let sq = tape.mul(w, w)?;
                tape.sum(&sq)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn scaled_gradient_is_caught() {
        // The true function is 1.1·sum(w²) but 0.1·sum(w²) flows through a
        // gradient-stopped copy of w, so the analytic gradient is the true
        // one divided by 1.1.
        let store = quadratic_store();
        let err = finite_difference_check(
            |bound, tape| {
                let w = bound.get("w")?;
                let sq = tape.mul(w, w)?;
                let tracked = tape.sum(&sq)?;
                let frozen = Tensor::new(w.shape().to_vec(), w.data().to_vec())?;
                let sq2 = tape.mul(&frozen, &frozen)?;
                let hidden = tape.sum(&sq2)?;
                let hidden = tape.scale(&hidden, 0.1)?;
                tape.add(&tracked, &hidden)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "expected a large error, got {err}");
    }

    #[test]
    fn empty_store_returns_zero() {
        let store = ParamStore::<f64>::new();
        let err = finite_difference_check(
            |_, tape| {
                let c = Tensor::scalar(4.0);
                tape.sum(&c)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
