//! Classifier models: single-input branches, score-level ensemble fusion and
//! feature-level merged fusion with learnable branch weights.

mod bundle;
mod fusion;
mod merged;
mod single;

pub use bundle::{load_merged, load_single, read_weights, save_merged, save_single, write_weights};
pub use fusion::{
    aggregate_features, aggregate_probabilities, ensemble_predict, ensemble_predict_logits,
    mean_vectors, BranchFlags, FeatureVector, ProbabilityVector,
};
pub use merged::{build_merged, FusionWeights, MergedModel};
pub use single::{build_single, BackboneSpec, Branch, SingleInputModel};
