//! Cross-fitted estimation of parameters identified by moment conditions
//! that are insensitive to first-order errors in nuisance regressions.

pub mod aggregation;
pub mod data;
pub mod demo;
pub mod engine;
pub mod error;
pub mod learners;
pub mod matrix;
pub mod numeric;
pub mod report;
pub mod rng;
pub mod scores;
pub mod simulation;

pub use data::{build_panel, load_csv, load_csv_with, make_folds, validate, Dataset, FoldPartition, PanelDataset, Schema};
pub use error::{DmlError, Result};
pub use learners::{LearnerKind, LearnerSpec};
pub use matrix::Matrix;
pub use scores::{ScoreComponents, ScoreKind, ScoreProblem, ScoreSpec};
