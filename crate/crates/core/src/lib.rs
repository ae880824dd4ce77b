//! Numerical laboratory for statistical memory loss of sequential
//! compositions of expanding circle maps.
//!
//! Densities live on a uniform power-of-two grid and are evolved by the
//! transfer operators of piecewise expanding maps. On top of that sit the
//! cylinder and covering machinery, the closed-form bounds of the matching
//! argument, and a coupling engine that runs the matching scheme and
//! certifies the raw L¹ distance against the resulting envelope.

// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod circle;
pub mod coupling;
pub mod covering;
pub mod curve;
pub mod density;
pub mod error;
pub mod map;
pub mod presets;
pub mod rng;
pub mod scenario;
pub mod transfer;

pub use bounds::{BoundsReport, CurveMesh, FamilyConstants, Mode};
pub use coupling::{certify, fit_decay, run_coupled, Certificate, CouplingLedger, CouplingOptions, DecayFit, KappaMode};
pub use covering::{Cylinder, CoveringReport};
pub use curve::{CurveFamily, MapCurve};
pub use density::{Density, RatioClassParams};
pub use error::{Error, Result};
pub use map::{neighborhood_distance, BranchForm, BranchSpec, MapAnalysis, PiecewiseMap};
pub use presets::DensitySpec;
pub use rng::LabRng;
pub use scenario::{MapSpec, Outcome, Scenario, ScenarioKind};
pub use transfer::{push, UlamMatrix};
