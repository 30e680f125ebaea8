//! Softmax and REGroup accuracy over a labelled set, with per-sample timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{softmax, NetworkModel};
use crate::error::{Error, Result};
use crate::regroup::{cast_ballot, BordaTally, GenerativeEnsemble, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Classes counted by the Top-5 metric (fewer when the model has fewer classes).
pub const TOP_N: usize = 5;

/// Descending-score class order, ties by ascending index.
pub fn ranking<T: PartialOrd>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub label: usize,
    /// Softmax classes by descending probability.
    pub smax_ranking: Vec<usize>,
    /// One tally per requested mode, in request order.
    pub tallies: Vec<BordaTally>,
    pub smax_secs: f64,
    /// Forward pass with feature capture, scoring, and one tally.
    pub regroup_secs: Vec<f64>,
}

pub fn evaluate_sample<T: Scalar>(
    model: &NetworkModel<T>,
    ensemble: &GenerativeEnsemble<T>,
    image: &Tensor<T>,
    label: usize,
    k: usize,
    modes: &[Mode],
) -> Result<SampleResult> {
    let t = Instant::now();
    let probs = softmax(&model.logits(image)?);
    let smax_ranking = ranking(&probs);
    let smax_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let trace = model.forward_with_trace(image)?;
    let ballot = cast_ballot(ensemble, &trace)?;
    let shared = t.elapsed().as_secs_f64();
    let mut tallies = Vec::with_capacity(modes.len());
    let mut regroup_secs = Vec::with_capacity(modes.len());
    for &mode in modes {
        let t = Instant::now();
        tallies.push(ballot.tally(k, mode)?);
        regroup_secs.push(shared + t.elapsed().as_secs_f64());
    }
    Ok(SampleResult {
        label,
        smax_ranking,
        tallies,
        smax_secs,
        regroup_secs,
    })
}

/// One line of the evaluation report. Accuracies are fractions in `[0, 1]`;
/// times are mean seconds per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub attack: String,
    pub samples: usize,
    pub smax_top1: f64,
    pub smax_top5: f64,
    pub regroup_top1: f64,
    pub regroup_top5: f64,
    pub mode: Mode,
    pub k: usize,
    pub smax_secs: f64,
    pub regroup_secs: f64,
}

/// One row per mode; no rows for an empty result list.
pub fn summarize(dataset: &str, attack: &str, k: usize, modes: &[Mode], results: &[SampleResult]) -> Result<Vec<ReportRow>> {
    if results.is_empty() {
        return Ok(Vec::new());
    }
    if results.iter().any(|r| r.tallies.len() != modes.len()) {
        return Err(Error::invalid("sample results do not match the requested modes"));
    }
    let n = results.len() as f64;
    let frac = |hits: usize| hits as f64 / n;
    let top = |order: &[usize], label: usize, count: usize| order.iter().take(count).any(|&c| c == label);
    let smax_top1 = frac(results.iter().filter(|r| top(&r.smax_ranking, r.label, 1)).count());
    let smax_top5 = frac(results.iter().filter(|r| top(&r.smax_ranking, r.label, TOP_N)).count());
    let smax_secs = results.iter().map(|r| r.smax_secs).sum::<f64>() / n;
    Ok(modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| ReportRow {
            dataset: dataset.to_string(),
            attack: attack.to_string(),
            samples: results.len(),
            smax_top1,
            smax_top5,
            regroup_top1: frac(results.iter().filter(|r| r.tallies[m].in_top(r.label, 1)).count()),
            regroup_top5: frac(results.iter().filter(|r| r.tallies[m].in_top(r.label, TOP_N)).count()),
            mode,
            k,
            smax_secs,
            regroup_secs: results.iter().map(|r| r.regroup_secs[m]).sum::<f64>() / n,
        })
        .collect())
}
