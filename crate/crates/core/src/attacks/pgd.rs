use super::{finish, project, uniform_start, AdversarialRecord, AttackConfig, Goal};
use crate::engine::{argmax, softmax, NetworkModel};
use crate::error::Result;
use crate::rng::{self, Stage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn signum<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Sign-gradient iterations from `start`, stopping at the first iterate that
/// meets the goal. Returns the final iterate and the number of steps taken.
#[allow(clippy::too_many_arguments)]
fn sign_steps<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    start: Tensor<T>,
    goal: Goal,
    step: T,
    iterations: usize,
    eps: Option<T>,
    min_confidence: Option<f64>,
) -> Result<(Tensor<T>, usize, bool)> {
    let mut adv = start;
    for it in 0..iterations {
        let (logits, grad) = model.logits_and_input_gradient(&adv, goal.loss_label())?;
        let probs = softmax(&logits);
        if goal.is_met(&probs, min_confidence) {
            return Ok((adv, it, true));
        }
        // High-confidence untargeted runs push toward whichever wrong class
        // leads once the true label is lost.
        let (grad, dir) = match goal {
            Goal::Untargeted { label } if min_confidence.is_some() && argmax(&probs) != label => {
                (model.input_gradient(&adv, argmax(&probs))?, -T::one())
            }
            _ => (grad, goal.direction::<T>()),
        };
        for (a, &g) in adv.data_mut().iter_mut().zip(grad.data()) {
            *a += step * dir * signum(g);
        }
        project(&mut adv, x, eps);
    }
    let met = goal.is_met(&model.predict_proba(&adv)?, min_confidence);
    Ok((adv, iterations, met))
}

/// L∞ projected gradient descent with optional uniform random start and
/// early return on success.
pub fn pgd<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    goal: Goal,
    index: usize,
    config: &AttackConfig,
) -> Result<AdversarialRecord<T>> {
    let eps = T::lit(config.epsilon);
    let mut start = if config.random_start {
        uniform_start(x, eps, &mut rng::stream(config.seed, Stage::AttackStart, index as u64))
    } else {
        x.clone()
    };
    project(&mut start, x, Some(eps));
    let (adv, steps, _) = sign_steps(
        model,
        x,
        start,
        goal,
        T::lit(config.step_size),
        config.iterations,
        Some(eps),
        None,
    )?;
    finish(model, goal, index, adv, steps, None)
}

/// Single signed-gradient step of size `epsilon`.
pub fn fgsm<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    goal: Goal,
    index: usize,
    epsilon: f64,
) -> Result<AdversarialRecord<T>> {
    let config = AttackConfig::fgsm(epsilon);
    pgd(model, x, goal, index, &config)
}

/// PGD without an L∞ budget whose success additionally requires the
/// predicted class to reach `min_confidence`. The step size is searched:
/// doubled after a failed round, bisected once a round succeeds; the
/// successful iterate closest to `x` (L∞) is kept.
pub fn pgd_high_confidence<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    goal: Goal,
    index: usize,
    config: &AttackConfig,
) -> Result<AdversarialRecord<T>> {
    let min_conf = Some(config.min_confidence);
    if goal.is_met(&model.predict_proba(x)?, min_conf) {
        return finish(model, goal, index, x.clone(), 0, min_conf);
    }
    let mut start = if config.random_start {
        uniform_start(x, T::lit(config.epsilon), &mut rng::stream(config.seed, Stage::AttackStart, index as u64))
    } else {
        x.clone()
    };
    project(&mut start, x, None);

    let mut alpha = config.step_size.max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut best: Option<(T, Tensor<T>)> = None;
    let mut total = 0;
    let mut last = start.clone();
    for _ in 0..config.search_steps {
        let (adv, steps, met) = sign_steps(model, x, start.clone(), goal, T::lit(alpha), config.iterations, None, min_conf)?;
        total += steps;
        if met {
            let dist = adv.max_abs_diff(x);
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, adv));
            }
            hi = alpha;
            alpha = 0.5 * (lo + hi);
        } else {
            last = adv;
            lo = alpha;
            alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
        }
    }
    let image = best.map_or(last, |(_, adv)| adv);
    finish(model, goal, index, image, total, min_conf)
}
