//! Numerical construction of C¹ linearizing conjugacies for hyperbolic fixed
//! points of random maps: spectra, invariant foliations, normal forms,
//! cohomological equations and the conjugacy itself.

pub mod catalog;
pub mod cohomology;
pub mod cutoff;
pub mod driving;
pub mod error;
pub mod foliation;
pub mod linalg;
pub mod linearize;
pub mod normalform;
pub mod sampling;
pub mod spectrum;
pub mod system;

pub use driving::{DrivingKind, DrivingSpec, DrivingState, DrivingSystem, OmegaOrbit};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use spectrum::{ConstantsBudget, ResonanceReport, Spectrum, Splitting};
pub use system::{BlockLayout, Cocycle, RandomMapSystem, SystemFile};
