//! Restricted Boltzmann Machines and Structural RBMs.
//!
//! A Structural RBM (SBM) restricts every hidden unit to a square pixel
//! neighbourhood of the image, so the weight matrix is sparse. This crate
//! provides the connectivity builders, the model mathematics (energies,
//! conditionals, Gibbs sampling, contrastive divergence and exact
//! small-model oracles), a classification RBM with exact discriminative
//! gradients, an SGD-with-momentum trainer, and evaluation tools (AIS
//! partition function estimates, denoising, log-loss and accuracy).

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod model;
pub mod rbm;
pub mod structure;
pub mod synthetic;
pub mod trainer;

pub use model::Model;
pub use classifier::{ClassGradientSet, ClassRbmParams};
pub use data::{Batch, BatchSampler, ImageDataset, SplitSpec};
pub use error::{Error, Result};
pub use evaluation::{AisConfig, AisEstimate, MetricsRecord};
pub use rbm::{GibbsState, GradientSet, RbmParams};
pub use structure::{BlockSpec, ConnectivityStructure, Grid, StructureSpec};
pub use trainer::{LogZMethod, Objective, TrainConfig, TrainState, ValidationMetric};
