//! Evaluation: time-distance accuracy, top-k accuracy, vote aggregation,
//! confusion matrices, per-decade curves and the fixed-count crop ablation.
//!
//! All metrics are pure functions; reports self-validate their monotonicity
//! and bookkeeping invariants before they are written anywhere.

mod ablation;
mod metrics;
mod plots;
mod report;
mod scorer;

pub use ablation::{
    combinations, kofn_ablation, select_fixed_n, AblationPhoto, AblationTable, AblationVariant,
    FixedCountMode,
};
pub use metrics::{
    aggregate_photo_vote, confusion_matrix, mean_abs_error, per_decade_accuracy, time_distance_accuracy,
    topk_accuracy, DecadeStat,
};
pub use plots::{ablation_curves_svg, confusion_heatmap_svg, decade_curve_svg};
pub use report::{context_report, dating_report, render_markdown, EvaluationReport};
pub use scorer::{score_photos, BranchModels, PhotoScores};

/// Default evaluation tolerances in years.
pub const DEFAULT_TIME_DISTANCES: [u32; 3] = [0, 5, 10];

/// Default top-k ranks for the context task.
pub const DEFAULT_TOP_KS: [usize; 5] = [1, 2, 3, 4, 5];
