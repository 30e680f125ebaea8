//! Seeded adversarial example generators used to evaluate the defense.
//!
//! All attacks use softmax cross-entropy as their objective. Every iterate is
//! rounded to 32-bit storage precision (toward the clean image, so the
//! L∞ budget still holds), which makes a saved adversarial set reproduce its
//! success flags exactly when reloaded.

pub mod config;
mod pgd;
mod spsa;

use rand::Rng;

pub use config::{parse_epsilon, AttackConfig, Method, TargetRule};
pub use pgd::{fgsm, pgd, pgd_high_confidence};
pub use spsa::{spsa, spsa_gradient};

use crate::engine::{argmax, softmax, NetworkModel};
use crate::error::{Error, Result};
use crate::rng::{self, Stage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outcome of attacking one clean sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRecord<T> {
    pub source_index: usize,
    pub true_label: usize,
    pub target: Option<usize>,
    pub image: Tensor<T>,
    pub success: bool,
    /// Softmax probability of the predicted class at `image`.
    pub confidence: f64,
    pub predicted: usize,
    /// Gradient or estimate steps taken.
    pub iterations: usize,
}

/// What the attacker is trying to achieve on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Untargeted { label: usize },
    Targeted { label: usize, target: usize },
}

impl Goal {
    pub fn true_label(self) -> usize {
        match self {
            Goal::Untargeted { label } | Goal::Targeted { label, .. } => label,
        }
    }

    pub fn target(self) -> Option<usize> {
        match self {
            Goal::Targeted { target, .. } => Some(target),
            Goal::Untargeted { .. } => None,
        }
    }

    /// Label whose cross-entropy the attack differentiates.
    pub(crate) fn loss_label(self) -> usize {
        match self {
            Goal::Untargeted { label } => label,
            Goal::Targeted { target, .. } => target,
        }
    }

    /// `+1` when the attack ascends the loss, `-1` when it descends.
    pub(crate) fn direction<T: Scalar>(self) -> T {
        match self {
            Goal::Untargeted { .. } => T::one(),
            Goal::Targeted { .. } => -T::one(),
        }
    }

    /// Adversarial criterion on a softmax vector, with an optional minimum
    /// confidence on the predicted class.
    pub fn is_met<T: Scalar>(self, probs: &[T], min_confidence: Option<f64>) -> bool {
        let pred = argmax(probs);
        let class_ok = match self {
            Goal::Untargeted { label } => pred != label,
            Goal::Targeted { target, .. } => pred == target,
        };
        class_ok && min_confidence.is_none_or(|c| probs[pred].as_f64() >= c)
    }
}

/// Picks a target uniformly among the classes other than `label`.
pub fn random_target(label: usize, num_classes: usize, rng: &mut impl Rng) -> usize {
    let r = rng.gen_range(0..num_classes - 1);
    if r >= label {
        r + 1
    } else {
        r
    }
}

pub fn choose_goal(label: usize, num_classes: usize, rule: TargetRule, seed: u64, index: usize) -> Result<Goal> {
    if label >= num_classes {
        return Err(Error::invalid(format!("label {label} out of range for {num_classes} classes")));
    }
    match rule {
        TargetRule::Untargeted => Ok(Goal::Untargeted { label }),
        TargetRule::Random => {
            if num_classes < 2 {
                return Err(Error::invalid("targeted attacks need at least two classes"));
            }
            let mut rng = rng::stream(seed, Stage::AttackTarget, index as u64);
            Ok(Goal::Targeted {
                label,
                target: random_target(label, num_classes, &mut rng),
            })
        }
        TargetRule::Fixed(target) if target < num_classes && target != label => Ok(Goal::Targeted { label, target }),
        TargetRule::Fixed(target) => Err(Error::invalid(format!("target {target} is invalid for label {label}"))),
    }
}

/// Rounds `v` to the nearest `f32`, then nudges it toward `origin` by single
/// `f32` ulps until it is within `eps` of `origin`.
pub(crate) fn to_storage<T: Scalar>(v: T, origin: T, eps: Option<T>) -> T {
    let mut q = v.as_f32();
    if let Some(eps) = eps {
        let o = origin.as_f32();
        while (T::from_stored(q) - origin).abs() > eps && q != o {
            q = if q > o { next_down(q) } else { next_up(q) };
        }
    }
    T::from_stored(q)
}

fn next_up(x: f32) -> f32 {
    if x == 0.0 {
        return f32::from_bits(1);
    }
    let bits = x.to_bits();
    f32::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

fn next_down(x: f32) -> f32 {
    -next_up(-x)
}

/// Projects `adv` onto the L∞ ball of radius `eps` around `origin` (when
/// given), clips to `[0, 1]`, and rounds to storage precision.
pub(crate) fn project<T: Scalar>(adv: &mut Tensor<T>, origin: &Tensor<T>, eps: Option<T>) {
    for (a, &o) in adv.data_mut().iter_mut().zip(origin.data()) {
        let mut v = *a;
        if let Some(eps) = eps {
            v = v.max(o - eps).min(o + eps);
        }
        v = v.max(T::zero()).min(T::one());
        *a = to_storage(v, o, eps);
    }
}

pub(crate) fn uniform_start<T: Scalar>(x: &Tensor<T>, eps: T, rng: &mut impl Rng) -> Tensor<T> {
    let mut adv = x.clone();
    if eps > T::zero() {
        let e = eps.as_f64();
        for v in adv.data_mut() {
            *v += T::lit(rng.gen_range(-e..=e));
        }
    }
    adv
}

pub(crate) fn finish<T: Scalar>(
    model: &NetworkModel<T>,
    goal: Goal,
    source_index: usize,
    image: Tensor<T>,
    iterations: usize,
    min_confidence: Option<f64>,
) -> Result<AdversarialRecord<T>> {
    let probs = softmax(&model.logits(&image)?);
    let predicted = argmax(&probs);
    Ok(AdversarialRecord {
        source_index,
        true_label: goal.true_label(),
        target: goal.target(),
        success: goal.is_met(&probs, min_confidence),
        confidence: probs[predicted].as_f64(),
        predicted,
        image,
        iterations,
    })
}

/// Runs the configured attack on one sample. `index` selects the sample's
/// random streams.
pub fn attack<T: Scalar>(
    model: &NetworkModel<T>,
    x: &Tensor<T>,
    label: usize,
    index: usize,
    config: &AttackConfig,
) -> Result<AdversarialRecord<T>> {
    config.validate()?;
    if x.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::invalid("clean image has pixels outside [0, 1]"));
    }
    let goal = choose_goal(label, model.num_classes(), config.target, config.seed, index)?;
    match config.method {
        Method::Fgsm => fgsm(model, x, goal, index, config.epsilon),
        Method::Pgd => pgd(model, x, goal, index, config),
        Method::PgdHc => pgd_high_confidence(model, x, goal, index, config),
        Method::Spsa => spsa(model, x, goal, index, config),
    }
}

/// Keeps the successful records; their count is `#S`.
pub fn filter_successful<T: Clone>(records: &[AdversarialRecord<T>]) -> Vec<AdversarialRecord<T>> {
    records.iter().filter(|r| r.success).cloned().collect()
}
