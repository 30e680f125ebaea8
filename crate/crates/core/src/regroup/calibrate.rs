use super::ensemble::GenerativeEnsemble;
use super::vote::{cast_ballot, Ballot, BordaTally, Mode};
use crate::dataset::LabeledDataset;
use crate::engine::{argmax, NetworkModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// Ballots of the correctly classified samples of a calibration set.
#[derive(Debug, Clone)]
pub struct CalibrationBallots {
    pub ballots: Vec<Ballot>,
    pub labels: Vec<usize>,
    /// Samples dropped because the softmax prediction was wrong.
    pub skipped: usize,
    /// Calibration samples that are also ensemble members, when known.
    pub overlap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAccuracy {
    pub accuracies: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
    pub overlap: Option<usize>,
}

impl LayerAccuracy {
    pub fn in_sample(&self) -> bool {
        self.overlap.is_some_and(|o| o > 0)
    }
}

pub fn collect_ballots<T: Scalar>(
    ensemble: &GenerativeEnsemble<T>,
    calib: &LabeledDataset,
    model: &NetworkModel<T>,
) -> Result<CalibrationBallots> {
    if calib.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let members = ensemble.build_info().map(|info| {
        let mut f = info.fingerprints.clone();
        f.sort_unstable();
        f
    });
    let mut out = CalibrationBallots {
        ballots: Vec::new(),
        labels: Vec::new(),
        skipped: 0,
        overlap: members.as_ref().map(|_| 0),
    };
    for i in 0..calib.len() {
        let trace = model.forward_with_trace(&calib.image(i))?;
        let label = calib.label(i);
        if argmax(&trace.softmax) != label {
            out.skipped += 1;
            continue;
        }
        if let (Some(members), Some(overlap)) = (&members, out.overlap.as_mut()) {
            if members.binary_search(&calib.fingerprint(i)).is_ok() {
                *overlap += 1;
            }
        }
        out.ballots.push(cast_ballot(ensemble, &trace)?);
        out.labels.push(label);
    }
    Ok(out)
}

impl CalibrationBallots {
    fn check(&self) -> Result<usize> {
        match self.ballots.first() {
            Some(b) => Ok(b.depth()),
            None => Err(Error::invalid("no correctly classified calibration samples")),
        }
    }

    /// Fraction of samples whose per-layer Borda winner (both signs) is the label.
    pub fn per_layer_accuracy(&self) -> Result<Vec<f64>> {
        let n = self.check()?;
        Ok((0..n)
            .map(|l| {
                let hits = self
                    .ballots
                    .iter()
                    .zip(&self.labels)
                    .filter(|(b, &y)| BordaTally::from_scores(b.layer_borda(l, Mode::Both), Mode::Both, 1, l).prediction == y)
                    .count();
                hits as f64 / self.ballots.len() as f64
            })
            .collect())
    }

    /// Aggregated Top-1 accuracy for every `k` in `1..=n`.
    pub fn k_sweep(&self, mode: Mode) -> Result<Vec<f64>> {
        let n = self.check()?;
        (1..=n)
            .map(|k| {
                let mut hits = 0;
                for (b, &y) in self.ballots.iter().zip(&self.labels) {
                    if b.tally(k, mode)?.prediction == y {
                        hits += 1;
                    }
                }
                Ok(hits as f64 / self.ballots.len() as f64)
            })
            .collect()
    }
}

pub fn per_layer_accuracy<T: Scalar>(
    ensemble: &GenerativeEnsemble<T>,
    calib: &LabeledDataset,
    model: &NetworkModel<T>,
) -> Result<LayerAccuracy> {
    let ballots = collect_ballots(ensemble, calib, model)?;
    Ok(LayerAccuracy {
        accuracies: ballots.per_layer_accuracy()?,
        evaluated: ballots.ballots.len(),
        skipped: ballots.skipped,
        overlap: ballots.overlap,
    })
}

/// Length of the longest suffix whose accuracies all reach `threshold`,
/// never less than one.
pub fn select_k(accuracies: &[f64], threshold: f64) -> Result<usize> {
    if accuracies.is_empty() {
        return Err(Error::invalid("accuracy vector is empty"));
    }
    let k = accuracies.iter().rev().take_while(|&&a| a >= threshold).count();
    Ok(k.max(1))
}
