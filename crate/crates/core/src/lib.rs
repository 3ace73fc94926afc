//! Numerical laboratory for Hyers-Ulam stability of ternary derivations
//! and ternary homomorphisms on complex matrix algebras.
//!
//! The crate evaluates the unified functional equation and its classical
//! quadratic, cubic and quartic special cases, measures residuals of
//! perturbed maps, extracts the exact solution by fixed-point iteration,
//! and checks the measured error against the certified bound.

pub mod algebra;
pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod fixedpoint;
pub mod funceq;
pub mod maps;
pub mod report;
pub mod sampling;
pub mod verdict;

pub use algebra::{Element, ProductRule, TernaryAlgebra};
pub use control::{ControlFunction, ContractionCertificate, Shape};
pub use error::{LabError, Result};
pub use funceq::{delta_m, Permutation3, Residual, ResidualKind};
pub use maps::{AlgebraMap, Base, EvalGrid, MapSpec, Perturbation, ScaleDirection};
pub use fixedpoint::{ExtractionConfig, ExtractionStatus, MetricEstimate};
pub use verdict::Verdict;
pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{ExperimentReport, Outcome};
