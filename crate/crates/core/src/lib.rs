//! Bank business-model identification: forests of profitability on balance-sheet
//! ratios, additive path decompositions, clustering in contribution space and
//! rank-based characterization of the resulting clusters.

pub mod analysis;
pub mod cluster;
pub mod component;
pub mod error;
pub mod forest;
pub mod interpret;
pub mod panel;
mod rng;
pub mod stats;
pub mod synth;

pub use analysis::{AnalysisBundle, BmProfile, CharacterizationConfig, SizeAnalysis};
pub use cluster::{ClusterAssignment, KMeansConfig, KVoteTable, PointSet, ValidityIndex};
pub use component::{Component, N_COMPONENTS};
pub use error::{Error, Result};
pub use forest::{FittedForest, ForestParams, RegressionTree, TrainingData};
pub use interpret::{ContributionVector, DecompositionMode};
pub use panel::{BankObservation, PanelDataset, SizeLabel};
pub use rng::derive_seed;
pub use stats::{Stars, UTestResult};
pub use synth::{GroundTruth, SynthSpec};
