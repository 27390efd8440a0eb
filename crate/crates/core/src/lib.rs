//! PCANet feature extraction with energy bookkeeping, block-parameter sweeps
//! and a cubic error-vs-energy model.
//!
//! Modules, bottom up:
//!
//! - [`numcore`]: matrices, patch extraction, correlation, Jacobi eigensolver,
//!   least squares
//! - [`pcanet`]: filter learning and block-histogram features
//! - [`energy`]: per-step energy ledger, sign check, overlap decomposition
//! - [`eval`]: nearest-neighbour classification and the mean-removal ablation
//! - [`sweep`]: resumable grid sweeps and their analyses
//! - [`fit`]: cubic fit of error rate against block energy
//! - [`dataio`]: dataset container, splits, synthetic data
//!
//! Batch loops run through [`Exec`], which uses rayon when the `parallel`
//! feature is enabled and gives bit-identical results either way.

pub mod dataio;
pub mod energy;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fit;
pub mod numcore;
pub mod pcanet;
pub mod sweep;

pub use dataio::{Dataset, SplitSpec, SynthOptions};
pub use energy::{EnergyLedger, OverlapDecomposition, SignatureReport};
pub use error::{Error, ErrorClass, Result};
pub use eval::{AblationReport, LabeledFeatures, NearestNeighbor};
pub use exec::Exec;
pub use fit::{FitResult, LogBase};
pub use numcore::{ImageMatrix, Matrix};
pub use pcanet::{FeatureVector, FilterBank, NetConfig, Overlap, TrainedNet};
pub use sweep::{SweepGrid, SweepOptions, SweepRecord};
