use rand::seq::SliceRandom;

use super::network::{argmax, Gradients, NetworkModel};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stage};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Minibatch SGD on softmax cross-entropy. Returns the trained copy and
/// per-epoch statistics; the input model is left untouched.
pub fn train_sgd<T: Scalar>(
    model: &NetworkModel<T>,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(NetworkModel<T>, Vec<EpochStats>)> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if data.shape() != model.input_shape() {
        return Err(Error::invalid(format!(
            "dataset images are {:?}, model expects {:?}",
            data.shape(),
            model.input_shape()
        )));
    }
    let mut model = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut shuffle = rng::stream(config.seed, Stage::Shuffle, epoch as u64);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            let mut batch_loss = T::zero();
            for &i in batch {
                let label = data.label(i);
                let (loss, logits) = match model.accumulate_gradients(&data.image(i), label, &mut grads) {
                    Err(Error::NonFinite { .. }) => {
                        return Err(Error::Diverged {
                            epoch,
                            batch: batch_no,
                        })
                    }
                    other => other?,
                };
                batch_loss += loss;
                if argmax(&logits) == label {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            loss_sum += batch_loss.as_f64();
            let step = T::lit(config.learning_rate / batch.len() as f64);
            for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g.as_ref()) {
                    for (p, &d) in w.iter_mut().zip(gw).chain(b.iter_mut().zip(gb)) {
                        *p -= step * d;
                    }
                }
            }
        }
        stats.push(EpochStats {
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, stats))
}

/// Fraction of `data` whose softmax argmax equals the label.
pub fn accuracy<T: Scalar>(model: &NetworkModel<T>, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for i in 0..data.len() {
        if argmax(&model.logits(&data.image(i))?) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
