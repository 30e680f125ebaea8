use rand::Rng;

use super::{finish, project, AdversarialRecord, AttackConfig, Goal};
use crate::engine::{cross_entropy, softmax, NetworkModel};
use crate::error::Result;
use crate::rng::{self, Stage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Gradient-free estimate of the input gradient of the cross-entropy of
/// `label`, averaged over `batch` Rademacher directions.
pub fn spsa_gradient<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    label: usize,
    delta: f64,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    let d = T::lit(delta);
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut v = vec![T::zero(); x.len()];
    let mut probe = x.clone();
    for _ in 0..batch {
        for vi in v.iter_mut() {
            *vi = if rng.gen::<bool>() { T::one() } else { -T::one() };
        }
        for ((p, &xi), &vi) in probe.data_mut().iter_mut().zip(x.data()).zip(&v) {
            *p = xi + d * vi;
        }
        let plus = cross_entropy(&model.logits(&probe)?, label);
        for ((p, &xi), &vi) in probe.data_mut().iter_mut().zip(x.data()).zip(&v) {
            *p = xi - d * vi;
        }
        let minus = cross_entropy(&model.logits(&probe)?, label);
        let scale = (plus - minus) / (T::lit(2.0) * d);
        for (g, &vi) in grad.data_mut().iter_mut().zip(&v) {
            // Rademacher entries are their own inverse.
            *g += scale * vi;
        }
    }
    let n = T::lit(batch as f64);
    for g in grad.data_mut() {
        *g /= n;
    }
    Ok(grad)
}

/// SPSA attack: Adam on the estimated gradient, projected onto the L∞ ball
/// after every step, with early return on success.
pub fn spsa<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    goal: Goal,
    index: usize,
    config: &AttackConfig,
) -> Result<AdversarialRecord<T>> {
    let eps = T::lit(config.epsilon);
    let lr = T::lit(config.spsa_learning_rate);
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let dir = goal.direction::<T>();
    let mut rng = rng::stream(config.seed, Stage::Spsa, index as u64);

    let mut adv = x.clone();
    let mut m = vec![T::zero(); x.len()];
    let mut v = vec![T::zero(); x.len()];
    for it in 0..config.iterations {
        if goal.is_met(&softmax(&model.logits(&adv)?), None) {
            return finish(model, goal, index, adv, it, None);
        }
        let grad = spsa_gradient(
            model,
            &adv,
            goal.loss_label(),
            config.spsa_perturbation,
            config.spsa_batch,
            &mut rng,
        )?;
        let t = (it + 1) as i32;
        let (c1, c2) = (T::one() - b1.powi(t), T::one() - b2.powi(t));
        for (((a, &g), mi), vi) in adv.data_mut().iter_mut().zip(grad.data()).zip(&mut m).zip(&mut v) {
            let g = dir * g;
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            *a += lr * (*mi / c1) / ((*vi / c2).sqrt() + T::lit(ADAM_EPS));
        }
        project(&mut adv, x, Some(eps));
    }
    finish(model, goal, index, adv, config.iterations, None)
}
