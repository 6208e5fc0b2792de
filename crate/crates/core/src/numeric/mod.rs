//! Dense tensors with reverse-mode differentiation over a closed op set.

mod graph;
mod ops;
mod params;
mod tensor;

pub use graph::{scalar_value, Graph, NodeId};
pub use ops::{Eager, OpKind, Ops, MIN_NORM};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{Real, Tensor};

use crate::error::{Error, Result};

/// Central-difference estimate of `d f / d params`, one element at a time.
///
/// `f` is evaluated `2 × numel` times on perturbed copies of `params`.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamStore, step: Real) -> Result<Gradients>
where
    F: FnMut(&ParamStore) -> Result<Real>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("finite difference step must be > 0, got {step}")));
    }
    let mut work = params.clone();
    let mut out = Gradients::zeros(params);
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + step;
            let plus = f(&work)?;
            work.get_mut(id).data_mut()[k] = orig - step;
            let minus = f(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: "finite_difference" });
            }
            out.grads[id.index()].data_mut()[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Largest elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(a: &Gradients, n: &Gradients, floor: Real) -> Real {
    a.grads
        .iter()
        .zip(&n.grads)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, Real::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_square() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(3.0));
        let g = finite_difference_gradient(|s| Ok(s.get(p).item().powi(2)), &store, 1e-5).unwrap();
        assert!((g.get(p).item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let g = finite_difference_gradient(|_| Ok(4.2), &store, 1e-5).unwrap();
        assert_eq!(g.get(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn fd_rejects_bad_step_and_non_finite() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(1.0));
        assert!(finite_difference_gradient(|_| Ok(0.0), &store, 0.0).is_err());
        assert!(finite_difference_gradient(|_| Ok(Real::NAN), &store, 1e-5).is_err());
    }
}
