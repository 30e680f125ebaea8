use serde::{Deserialize, Serialize};

use super::signature::{layer_signature, LayerSignature};
use crate::dataset::LabeledDataset;
use crate::engine::{argmax, NetworkModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on the unit sum of every stored PMF row.
pub const PMF_SUM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_DELTA: f64 = 1e-6;

/// Class-conditional mixture PMFs for one votable layer, stored class-major
/// (`num_classes × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleLayer<T> {
    /// Position of the layer in the model's layer list.
    pub layer: usize,
    pub dim: usize,
    pub positive: Vec<T>,
    pub negative: Vec<T>,
}

impl<T: Scalar> EnsembleLayer<T> {
    pub fn positive_row(&self, class: usize) -> &[T] {
        &self.positive[class * self.dim..(class + 1) * self.dim]
    }

    pub fn negative_row(&self, class: usize) -> &[T] {
        &self.negative[class * self.dim..(class + 1) * self.dim]
    }
}

/// Build-time bookkeeping. Not part of the binary ensemble file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub quota: usize,
    /// Samples examined before every class was filled (or the data ran out).
    pub scanned: usize,
    /// Dataset indices of the mixture members, per class, ascending.
    pub members: Vec<Vec<usize>>,
    /// Mixture weights aligned with `members`.
    pub weights: Vec<Vec<f64>>,
    /// Content fingerprints of the members, for detecting calibration overlap.
    pub fingerprints: Vec<u64>,
    pub warnings: Vec<String>,
}

impl BuildInfo {
    pub fn class_counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Layer-wise generative classifiers: per votable layer and class, the
/// mixtures of positive and negative response PMFs.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeEnsemble<T> {
    num_classes: usize,
    delta: T,
    layers: Vec<EnsembleLayer<T>>,
    selected_k: Option<usize>,
    build_info: Option<BuildInfo>,
}

fn check_pmf<T: Scalar>(row: &[T]) -> bool {
    row.iter().all(|&v| v > T::zero() && v.is_finite())
        && (row.iter().copied().sum::<T>().as_f64() - 1.0).abs() <= PMF_SUM_TOLERANCE
}

impl<T: Scalar> GenerativeEnsemble<T> {
    pub fn new(
        num_classes: usize,
        delta: T,
        layers: Vec<EnsembleLayer<T>>,
        selected_k: Option<usize>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("ensemble needs at least one class"));
        }
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        if layers.is_empty() {
            return Err(Error::invalid("ensemble has no layers"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.dim == 0
                || layer.positive.len() != num_classes * layer.dim
                || layer.negative.len() != num_classes * layer.dim
            {
                return Err(Error::invalid(format!("ensemble layer {l} has inconsistent extents")));
            }
            for y in 0..num_classes {
                if !check_pmf(layer.positive_row(y)) || !check_pmf(layer.negative_row(y)) {
                    return Err(Error::invalid(format!(
                        "ensemble layer {l}, class {y}: row is not a strictly positive PMF"
                    )));
                }
            }
        }
        if layers.windows(2).any(|w| w[0].layer >= w[1].layer) {
            return Err(Error::invalid("ensemble layer indices must be strictly increasing"));
        }
        if let Some(k) = selected_k {
            if k == 0 || k > layers.len() {
                return Err(Error::invalid(format!("selected k = {k} is outside 1..={}", layers.len())));
            }
        }
        Ok(GenerativeEnsemble {
            num_classes,
            delta,
            layers,
            selected_k,
            build_info: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn layers(&self) -> &[EnsembleLayer<T>] {
        &self.layers
    }

    /// Number of votable layers `n`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn selected_k(&self) -> Option<usize> {
        self.selected_k
    }

    pub fn set_selected_k(&mut self, k: Option<usize>) -> Result<()> {
        if let Some(k) = k {
            if k == 0 || k > self.depth() {
                return Err(Error::invalid(format!("k = {k} is outside 1..={}", self.depth())));
            }
        }
        self.selected_k = k;
        Ok(())
    }

    pub fn build_info(&self) -> Option<&BuildInfo> {
        self.build_info.as_ref()
    }

    pub fn with_build_info(mut self, info: BuildInfo) -> Self {
        self.build_info = Some(info);
        self
    }

    /// Signatures of one traced input, aligned with the ensemble layers.
    pub fn signatures(&self, preactivations: &[crate::tensor::Tensor<T>]) -> Result<Vec<LayerSignature<T>>> {
        if preactivations.len() != self.depth() {
            return Err(Error::invalid(format!(
                "trace has {} votable layers, ensemble has {}",
                preactivations.len(),
                self.depth()
            )));
        }
        preactivations
            .iter()
            .zip(&self.layers)
            .map(|(p, l)| layer_signature(p, l.layer, self.delta))
            .collect()
    }
}

/// Mixes per-class member signatures into an ensemble. `members[y]` holds
/// `(weight, signatures)` in ascending sample order; weights are normalized
/// within the class.
pub fn mix_members<T: Scalar>(
    num_classes: usize,
    delta: T,
    members: &[Vec<(T, Vec<LayerSignature<T>>)>],
) -> Result<GenerativeEnsemble<T>> {
    let deficient: Vec<usize> = (0..num_classes)
        .filter(|&y| members.get(y).is_none_or(Vec::is_empty))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::DeficientClasses(deficient));
    }
    let template = &members[0][0].1;
    let mut layers: Vec<EnsembleLayer<T>> = template
        .iter()
        .map(|s| EnsembleLayer {
            layer: s.layer,
            dim: s.dim(),
            positive: vec![T::zero(); num_classes * s.dim()],
            negative: vec![T::zero(); num_classes * s.dim()],
        })
        .collect();
    for (y, class_members) in members.iter().enumerate().take(num_classes) {
        let total: T = class_members.iter().map(|(w, _)| *w).sum();
        if !(total > T::zero()) {
            return Err(Error::invalid(format!("class {y} has zero total mixture weight")));
        }
        for (w, sigs) in class_members {
            if *w < T::zero() {
                return Err(Error::invalid("mixture weights must be nonnegative"));
            }
            let lambda = *w / total;
            if sigs.len() != layers.len() {
                return Err(Error::invalid("member signatures disagree on layer count"));
            }
            for (layer, sig) in layers.iter_mut().zip(sigs) {
                if sig.dim() != layer.dim || sig.layer != layer.layer {
                    return Err(Error::invalid("member signatures disagree on layer extents"));
                }
                let range = y * layer.dim..(y + 1) * layer.dim;
                for (d, &p) in layer.positive[range.clone()].iter_mut().zip(&sig.positive) {
                    *d += lambda * p;
                }
                for (d, &n) in layer.negative[range].iter_mut().zip(&sig.negative) {
                    *d += lambda * n;
                }
            }
        }
    }
    GenerativeEnsemble::new(num_classes, delta, layers, None)
}

/// Builds the ensemble from the first `quota` correctly classified samples
/// of each class, in dataset order. Each member is weighted by the softmax
/// probability of its true class.
pub fn build_ensemble<T: Scalar>(
    model: &NetworkModel<T>,
    data: &LabeledDataset,
    quota: usize,
    delta: T,
) -> Result<GenerativeEnsemble<T>> {
    if quota == 0 {
        return Err(Error::invalid("quota must be at least 1"));
    }
    let m = model.num_classes();
    if data.num_classes() > m {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model only {m}",
            data.num_classes()
        )));
    }
    let mut members: Vec<Vec<(T, Vec<LayerSignature<T>>)>> = vec![Vec::new(); m];
    let mut indices: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut fingerprints = Vec::new();
    let mut filled = 0;
    let mut scanned = 0;
    for i in 0..data.len() {
        if filled == m {
            break;
        }
        scanned += 1;
        let y = data.label(i);
        if members[y].len() >= quota {
            continue;
        }
        let trace = model.forward_with_trace(&data.image(i))?;
        if argmax(&trace.softmax) != y {
            continue;
        }
        let sigs = trace
            .preactivations
            .iter()
            .zip(model.votable_layers())
            .map(|(p, &l)| layer_signature(p, l, delta))
            .collect::<Result<Vec<_>>>()?;
        members[y].push((trace.softmax[y], sigs));
        indices[y].push(i);
        fingerprints.push(data.fingerprint(i));
        if members[y].len() == quota {
            filled += 1;
        }
    }
    let ensemble = mix_members(m, delta, &members)?;
    let warnings = (0..m)
        .filter(|&y| members[y].len() < quota)
        .map(|y| format!("class {y}: only {} of {quota} samples", members[y].len()))
        .collect();
    let weights = members
        .iter()
        .map(|ms| {
            let total: f64 = ms.iter().map(|(w, _)| w.as_f64()).sum();
            ms.iter().map(|(w, _)| w.as_f64() / total).collect()
        })
        .collect();
    Ok(ensemble.with_build_info(BuildInfo {
        quota,
        scanned,
        members: indices,
        weights,
        fingerprints,
        warnings,
    }))
}
