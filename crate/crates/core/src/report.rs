//! Experiment reports and curve export.

use serde::{Deserialize, Serialize};

use crate::algebra::{AxiomReport, Element};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::control::ContractionCertificate;
use crate::fixedpoint::{ConvergenceReport, ExtractionStatus, ResidualSample};
use crate::verdict::Verdict;

pub const SCHEMA_VERSION: u32 = 1;

/// Overall result of an experiment, ordered by exit-code precedence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    ClaimFailed,
    HypothesisViolated,
    Divergence,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::ClaimFailed => 1,
            Outcome::HypothesisViolated => 3,
            Outcome::Divergence => 4,
        }
    }

    /// The more severe of two outcomes.
    pub fn worst(self, other: Outcome) -> Outcome {
        fn rank(o: Outcome) -> u8 {
            match o {
                Outcome::Pass => 0,
                Outcome::HypothesisViolated => 1,
                Outcome::ClaimFailed => 2,
                Outcome::Divergence => 3,
            }
        }
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

/// Exit status of an error that prevented a run.
pub const CONFIG_ERROR_EXIT: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub family: String,
    pub theta: f64,
    pub fitted: bool,
    pub tuples: usize,
    pub witness: Vec<Element>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    /// Which identity (`delta`, `derivation`, `sigma_hom`).
    pub residual: String,
    /// `f` for the input map, `limit` for the extracted map.
    pub map: String,
    pub sup: f64,
    pub sup_relative: f64,
    pub tuples: usize,
    pub witness: Vec<Element>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub status: ExtractionStatus,
    pub depth: u32,
    pub distances: Vec<f64>,
    pub terminal_residuals: Vec<ResidualSample>,
}

/// One row of the bound-versus-error curve: the worst direction of one
/// grid shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub radius: f64,
    pub measured_error: f64,
    pub bound_value: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunceqRow {
    pub m: u32,
    pub a: i64,
    pub coeff: Element,
    pub sup: f64,
    pub sup_relative: f64,
    pub witness: Vec<Element>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomSummary {
    pub algebra: AxiomReport,
    pub module: AxiomReport,
}

/// Results of one run of the stability pipeline. Homomorphism experiments
/// over every permutation produce one section per permutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySection {
    pub label: String,
    pub theta_phi: ThetaSummary,
    pub theta_psi: ThetaSummary,
    pub certificate: ContractionCertificate,
    pub extraction: ExtractionSummary,
    pub picard: ConvergenceReport,
    pub residuals: Vec<ResidualSummary>,
    pub curve: Vec<CurveRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// The resolved configuration; rerunning it reproduces the report.
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalogue: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<StabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<ConvergenceReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<ResidualSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub funceq: Vec<FunceqRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axioms: Option<AxiomSummary>,
    pub verdicts: Vec<Verdict>,
    pub outcome: Outcome,
    pub summary: String,
    /// Excluded from determinism comparisons.
    pub wall_clock_ms: f64,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            kind: config.kind,
            config: config.clone(),
            catalogue: None,
            sections: Vec::new(),
            extraction: None,
            picard: None,
            residuals: Vec::new(),
            funceq: Vec::new(),
            axioms: None,
            verdicts: Vec::new(),
            outcome: Outcome::Pass,
            summary: String::new(),
            wall_clock_ms: 0.0,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }

    pub fn failed_verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }

    pub fn verdict(&self, claim: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.claim == claim)
    }

    /// Every curve row over all sections.
    pub fn curve(&self) -> impl Iterator<Item = &CurveRow> {
        self.sections.iter().flat_map(|s| s.curve.iter())
    }

    /// Largest measured-to-bound ratio over all curves.
    pub fn max_curve_ratio(&self) -> f64 {
        self.curve().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// The report with its wall-clock field zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_ms = 0.0;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const CURVE_HEADER: &str = "radius,measured_error,bound_value,ratio";

/// Renders curve rows as CSV with 17 significant digits.
pub fn curves_csv<'a>(rows: impl IntoIterator<Item = &'a CurveRow>) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.radius, r.measured_error, r.bound_value, r.ratio
        ));
    }
    out
}
