//! Layer-wise generative classifiers aggregated by Borda count.
//!
//! Each votable layer turns an input's pre-activation responses into a
//! positive and a negative PMF, compares them by KL divergence against
//! per-class mixtures built from clean training samples, and votes with the
//! resulting class rankings.

pub mod calibrate;
pub mod ensemble;
pub mod kl;
pub mod signature;
pub mod vote;

pub use calibrate::{collect_ballots, per_layer_accuracy, select_k, CalibrationBallots, LayerAccuracy, DEFAULT_THRESHOLD};
pub use ensemble::{build_ensemble, mix_members, BuildInfo, EnsembleLayer, GenerativeEnsemble, DEFAULT_DELTA};
pub use kl::kl_divergence;
pub use signature::{accumulators, layer_signature, LayerSignature};
pub use vote::{
    borda_layer, cast_ballot, rank_layer, ranks_from_scores, regroup_predict, Ballot, BordaTally, Mode, RankPreference,
    Sign,
};
