//! Migration-recombination dynamics of a structured population.
//!
//! A population is a probability vector over types at each of finitely many
//! locations. Each generation individuals migrate (backward matrix `M`) and
//! then recombine according to a distribution `r` over partitions of the
//! sites. The crate solves the dynamics three ways: by direct iteration, by
//! linearisation over labelled partitions, and by Monte Carlo over the dual
//! labelled partitioning process. Asymptotic and continuous-time tools build
//! on the same primitives.

pub mod error;
pub mod exec;
pub mod forward;
pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod continuous;
pub mod linear;
pub mod lpp;
pub mod matrix;
pub mod measure;
pub mod partition;
pub mod random;

pub use error::{Error, Result};
pub use exec::Execution;
pub use forward::{PartitionWeights, RecombinationModel};
pub use matrix::DenseMatrix;
pub use measure::{Distribution, Metapopulation, TypeSpace};
pub use partition::{LabelledPartition, Partition, SiteSet};
