//! Samplers, closed forms and event-driven simulators for branching systems
//! on the hierarchical group.
//!
//! Layout:
//! - [`hiergroup`]: the group Ω_N truncated at depth D, walk rates, transience
//!   classification and the radial Green operator.
//! - [`feller`]: the subcritical Feller branching diffusion (exact transition
//!   sampler, Laplace functional, entrance density, Gamma equilibrium).
//! - [`twolevel`]: the ε-rescaled two-level particle system with immigration,
//!   plus its moment equations.
//! - [`cascade`]: subordinator kernels, their compositions and entrance laws.
//! - [`genealogy`]: jump decompositions, labelled jump forests, size-biased spines.
//! - [`spatial`]: one- and two-level branching random walks on the truncated group.
//!
//! Support code lives in [`stats`], [`rng`], [`special`] and [`sumtree`].

pub mod cascade;
pub mod error;
pub mod feller;
pub mod genealogy;
pub mod hiergroup;
pub mod rng;
pub mod spatial;
pub mod special;
pub mod stats;
pub mod sumtree;
pub mod twolevel;

pub use error::{Error, Partial, Result};
pub use rng::Stream;
