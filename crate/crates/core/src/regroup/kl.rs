use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// KL divergence `Σ c_i ln(c_i / p_i)` of the test PMF `test` from the
/// classifier PMF `model`. Both must be strictly positive.
pub fn kl_divergence<T: Scalar>(model: &[T], test: &[T]) -> Result<T> {
    if model.len() != test.len() {
        return Err(Error::invalid(format!(
            "pmf lengths differ ({} vs {})",
            model.len(),
            test.len()
        )));
    }
    if model.iter().chain(test).any(|&v| !(v > T::zero())) {
        return Err(Error::invalid("pmf entries must be strictly positive"));
    }
    Ok(kl_unchecked(model, test))
}

#[inline]
pub(crate) fn kl_unchecked<T: Scalar>(model: &[T], test: &[T]) -> T {
    let mut acc = T::zero();
    for (&c, &p) in model.iter().zip(test) {
        acc += c * (c / p).ln();
    }
    acc
}
