use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Positive and negative response PMFs of one layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSignature<T> {
    pub layer: usize,
    pub positive: Vec<T>,
    pub negative: Vec<T>,
}

impl<T: Scalar> LayerSignature<T> {
    pub fn dim(&self) -> usize {
        self.positive.len()
    }
}

/// Response accumulators of a pre-activation tensor: for a `C × H × W` map,
/// one entry per channel summed over the spatial extent; for a flat vector,
/// one entry per neuron.
pub fn accumulators<T: Scalar>(preact: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let maps = match preact.shape() {
        [c, _, _] => *c,
        _ => preact.len(),
    };
    let area = preact.len() / maps;
    preact
        .data()
        .chunks_exact(area)
        .map(|map| {
            let mut pos = T::zero();
            let mut neg = T::zero();
            for &v in map {
                if v > T::zero() {
                    pos += v;
                } else {
                    neg -= v;
                }
            }
            (pos, neg)
        })
        .unzip()
}

/// Shifts every accumulator by `delta` and rescales the vector to sum to one.
pub fn normalize_pmf<T: Scalar>(mut acc: Vec<T>, delta: T) -> Vec<T> {
    acc.iter_mut().for_each(|v| *v += delta);
    let total: T = acc.iter().copied().sum();
    acc.iter_mut().for_each(|v| *v /= total);
    acc
}

pub fn layer_signature<T: Scalar>(preact: &Tensor<T>, layer: usize, delta: T) -> Result<LayerSignature<T>> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be positive and finite, got {delta}")));
    }
    let (pos, neg) = accumulators(preact);
    Ok(LayerSignature {
        layer,
        positive: normalize_pmf(pos, delta),
        negative: normalize_pmf(neg, delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_preactivation_is_uniform() {
        let t = Tensor::<f64>::zeros(vec![4, 3, 3]);
        let s = layer_signature(&t, 0, 0.5).unwrap();
        assert_eq!(s.positive, vec![0.25; 4]);
        assert_eq!(s.negative, vec![0.25; 4]);
    }

    #[test]
    fn hand_evaluated_maps() {
        let t = Tensor::new(vec![2, 2, 2], vec![1.0, -2.0, 3.0, 0.0, -1.0, 5.0, 0.0, -3.0]).unwrap();
        assert_eq!(accumulators(&t), (vec![4.0, 5.0], vec![2.0, 4.0]));
        let s = layer_signature(&t, 3, 1e-15).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14);
        assert!(close(&s.positive, &[4.0 / 9.0, 5.0 / 9.0]));
        assert!(close(&s.negative, &[1.0 / 3.0, 2.0 / 3.0]));
        assert_eq!(s.layer, 3);
    }

    #[test]
    fn strictly_positive_gives_uniform_negative() {
        let t = Tensor::<f64>::from_vec(vec![0.5, 2.0, 7.0]);
        let s = layer_signature(&t, 0, 1e-6).unwrap();
        assert_eq!(s.negative, vec![s.negative[0]; 3]);
        assert!((s.negative[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_delta() {
        let t = Tensor::from_vec(vec![1.0]);
        assert!(layer_signature(&t, 0, 0.0).is_err());
        assert!(layer_signature(&t, 0, -1.0).is_err());
        assert!(layer_signature(&t, 0, f64::NAN).is_err());
    }
}
