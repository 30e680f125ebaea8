use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ensemble::GenerativeEnsemble;
use super::kl::kl_unchecked;
use super::signature::LayerSignature;
use crate::engine::FeatureTrace;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which voters of each layer take part in the aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pos,
    Neg,
    Both,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Pos, Mode::Neg, Mode::Both];

    /// Voters per layer.
    pub fn voters(self) -> usize {
        match self {
            Mode::Both => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pos => "pos",
            Mode::Neg => "neg",
            Mode::Both => "both",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(Mode::Pos),
            "neg" => Ok(Mode::Neg),
            "both" => Ok(Mode::Both),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (pos, neg or both)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

/// One voter's ranking: `ranks[y]` is the 1-based position of class `y`
/// when the KL scores are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPreference {
    pub layer: usize,
    pub sign: Sign,
    pub ranks: Vec<usize>,
}

/// Ascending 1-based ranks; exact ties are ordered by class index.
pub fn ranks_from_scores<T: PartialOrd>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &class) in order.iter().enumerate() {
        ranks[class] = pos + 1;
    }
    ranks
}

/// KL scores of every class mixture of layer `ordinal` (0-based among the
/// ensemble's layers) against the signature, for both signs.
pub fn layer_scores<T: Scalar>(
    ensemble: &GenerativeEnsemble<T>,
    ordinal: usize,
    signature: &LayerSignature<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let layer = ensemble.layers().get(ordinal).ok_or_else(|| {
        Error::invalid(format!("layer {ordinal} is not one of the {} ensemble layers", ensemble.depth()))
    })?;
    if signature.dim() != layer.dim || signature.negative.len() != layer.dim {
        return Err(Error::invalid(format!(
            "signature has {} features, ensemble layer {ordinal} has {}",
            signature.dim(),
            layer.dim
        )));
    }
    let m = ensemble.num_classes();
    let pos = (0..m).map(|y| kl_unchecked(layer.positive_row(y), &signature.positive)).collect();
    let neg = (0..m).map(|y| kl_unchecked(layer.negative_row(y), &signature.negative)).collect();
    Ok((pos, neg))
}

pub fn rank_layer<T: Scalar>(
    ensemble: &GenerativeEnsemble<T>,
    ordinal: usize,
    signature: &LayerSignature<T>,
) -> Result<(RankPreference, RankPreference)> {
    let (pos, neg) = layer_scores(ensemble, ordinal, signature)?;
    Ok((
        RankPreference {
            layer: ordinal,
            sign: Sign::Positive,
            ranks: ranks_from_scores(&pos),
        },
        RankPreference {
            layer: ordinal,
            sign: Sign::Negative,
            ranks: ranks_from_scores(&neg),
        },
    ))
}

/// Borda count of one layer: each voter gives a class `M - rank` points.
pub fn borda_layer(pos: &RankPreference, neg: &RankPreference, num_classes: usize, mode: Mode) -> Vec<usize> {
    (0..num_classes)
        .map(|y| {
            let p = num_classes - pos.ranks[y];
            let n = num_classes - neg.ranks[y];
            match mode {
                Mode::Pos => p,
                Mode::Neg => n,
                Mode::Both => p + n,
            }
        })
        .collect()
}

/// Aggregated Borda scores and the resulting prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BordaTally {
    pub scores: Vec<usize>,
    pub mode: Mode,
    pub k: usize,
    /// Ordinal of the first contributing layer (`n - k`, 0-based).
    pub first_layer: usize,
    pub prediction: usize,
    /// Classes by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
}

impl BordaTally {
    pub fn from_scores(scores: Vec<usize>, mode: Mode, k: usize, first_layer: usize) -> Self {
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        BordaTally {
            prediction: ranking[0],
            scores,
            mode,
            k,
            first_layer,
            ranking,
        }
    }

    pub fn in_top(&self, class: usize, n: usize) -> bool {
        self.ranking.iter().take(n).any(|&c| c == class)
    }
}

/// Rank preferences of every voter for one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ballot {
    pub num_classes: usize,
    pub layers: Vec<(RankPreference, RankPreference)>,
}

impl Ballot {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_borda(&self, ordinal: usize, mode: Mode) -> Vec<usize> {
        let (p, n) = &self.layers[ordinal];
        borda_layer(p, n, self.num_classes, mode)
    }

    /// Aggregates the last `k` layers.
    pub fn tally(&self, k: usize, mode: Mode) -> Result<BordaTally> {
        let n = self.depth();
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k = {k} is outside 1..={n}")));
        }
        let mut scores = vec![0; self.num_classes];
        for ordinal in n - k..n {
            for (s, b) in scores.iter_mut().zip(self.layer_borda(ordinal, mode)) {
                *s += b;
            }
        }
        Ok(BordaTally::from_scores(scores, mode, k, n - k))
    }
}

pub fn cast_ballot<T: Scalar>(ensemble: &GenerativeEnsemble<T>, trace: &FeatureTrace<T>) -> Result<Ballot> {
    let sigs = ensemble.signatures(&trace.preactivations)?;
    let layers = sigs
        .iter()
        .enumerate()
        .map(|(ordinal, sig)| rank_layer(ensemble, ordinal, sig))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ballot {
        num_classes: ensemble.num_classes(),
        layers,
    })
}

pub fn regroup_predict<T: Scalar>(
    ensemble: &GenerativeEnsemble<T>,
    trace: &FeatureTrace<T>,
    k: usize,
    mode: Mode,
) -> Result<BordaTally> {
    if k == 0 || k > ensemble.depth() {
        return Err(Error::invalid(format!("k = {k} is outside 1..={}", ensemble.depth())));
    }
    cast_ballot(ensemble, trace)?.tally(k, mode)
}
