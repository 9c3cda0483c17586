//! Simulation of SDEs driven by fractional Brownian motion and estimation of
//! their drift parameter.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod frac;
pub mod gauss;
pub mod growth;
pub mod grid;
pub mod io;
pub mod molchan;
pub mod sde;
pub mod seed;
pub mod selftest;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use frac::FractionalOrder;
pub use gauss::{FbmGenerator, FbmMethod, HurstIndex, PairGenerator};
pub use grid::{GridFunction, PartialGridFunction, PathMeta, SamplePath, TimeGrid};
pub use molchan::{JPrimeMethod, MolchanConstants, MolchanKernel};
pub use sde::{CoefficientSet, ModelConfig, ModelInstance, ModelKind, TimeFunction};
pub use seed::{SeedPolicy, Stream};
pub use estimators::{ChiMethod, EstimatorKind, EstimatorOutput, Observation, StoppingResult};
