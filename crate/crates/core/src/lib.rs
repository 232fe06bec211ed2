//! Simulation laboratory for Boltzmann sampling of chain-embedded Ising models.
//!
//! The crate builds chain embeddings of native Ising problems, computes exact
//! thermal statistics by exhaustive enumeration, samples with single-flip
//! Metropolis, projects embedded samples back to the native space (majority
//! vote and restricted resampling) and evaluates annealed-approximation
//! predictions for chain breaking.

pub mod config;
pub mod embedding;
pub mod enumerate;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod instance;
pub mod model;
pub mod projection;
pub mod rng;
pub mod sampler;
pub mod theory;

pub use config::{Experiment, ExperimentConfig};
pub use embedding::{build_embedding, ChainEmbedding, EmbeddingMode};
pub use enumerate::EnumerationLimits;
pub use error::{Error, Result};
pub use exact::DistributionTable;
pub use model::{IsingModel, SpinConfiguration};
pub use projection::{ProjectionMethod, RrsMode};
pub use sampler::{SampleBatch, SamplerConfig};
