//! Experiment configuration documents.
//!
//! One JSON document fully determines an experiment. Unknown keys are
//! rejected at every level.

use serde::{Deserialize, Serialize};

use crate::algebra::{Element, Mutation, ProductRule, TernaryAlgebra};
use crate::control::{ControlFunction, Shape};
use crate::error::{LabError, Result};
use crate::fixedpoint::ExtractionConfig;
use crate::funceq::{check_degree, Permutation3};
use crate::maps::{check_scale, EvalGrid, MapSpec, Perturbation, ScaleDirection, MAX_DEPTH};
use crate::sampling::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DerivationStability,
    SigmaHomStability,
    Superstability,
    Axioms,
    FunceqCheck,
    Extract,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::DerivationStability => "derivation_stability",
            ExperimentKind::SigmaHomStability => "sigma_hom_stability",
            ExperimentKind::Superstability => "superstability",
            ExperimentKind::Axioms => "axioms",
            ExperimentKind::FunceqCheck => "funceq_check",
            ExperimentKind::Extract => "extract",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "derived")]
    pub rule: ProductRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

fn one() -> usize {
    1
}

fn derived() -> ProductRule {
    ProductRule::Derived
}

impl Default for AlgebraSpec {
    fn default() -> Self {
        AlgebraSpec {
            dim: 1,
            rule: ProductRule::Derived,
            mutation: None,
        }
    }
}

impl AlgebraSpec {
    pub fn scalars(rule: ProductRule) -> Self {
        AlgebraSpec {
            rule,
            ..AlgebraSpec::default()
        }
    }

    pub fn build(&self) -> Result<TernaryAlgebra> {
        let alg = TernaryAlgebra::new(self.dim, self.rule)?;
        Ok(match self.mutation {
            Some(mu) => alg.with_mutation(mu),
            None => alg,
        })
    }
}

/// A control family with an optional constant. A missing `theta` is fitted
/// to the measured residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl ControlSpec {
    pub fn fitted(shape: Shape) -> Self {
        ControlSpec { shape, theta: None }
    }

    /// The control with `theta` (or `1` as placeholder when fitting).
    pub fn with_theta_or_unit(&self) -> Result<ControlFunction> {
        ControlFunction::new(self.theta.unwrap_or(1.0), self.shape)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "unit_radius")]
    pub rho: f64,
    #[serde(default = "ten")]
    pub shells: usize,
    #[serde(default = "four")]
    pub directions: usize,
    /// Seed of the grid directions; derived from the experiment seed when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn unit_radius() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

fn four() -> usize {
    4
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rho: 1.0,
            shells: 10,
            directions: 4,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual of the extracted map.
    #[serde(default = "tol_residual")]
    pub residual: f64,
    /// Relative slack on closed-form inequalities.
    #[serde(default = "tol_bound")]
    pub bound_rel: f64,
    /// Relative tolerance on measured geometric ratios.
    #[serde(default = "tol_ratio")]
    pub ratio: f64,
    /// Relative tolerance of the homogeneity chain and the vanishing
    /// hypothesis audit.
    #[serde(default = "tol_homogeneity")]
    pub homogeneity: f64,
    /// Relative residual expected of exact solutions.
    #[serde(default = "tol_exact")]
    pub exact: f64,
    /// Relative axiom violation.
    #[serde(default = "tol_axioms")]
    pub axioms: f64,
}

fn tol_residual() -> f64 {
    1e-9
}

fn tol_bound() -> f64 {
    1e-9
}

fn tol_ratio() -> f64 {
    0.10
}

fn tol_homogeneity() -> f64 {
    1e-10
}

fn tol_exact() -> f64 {
    1e-10
}

fn tol_axioms() -> f64 {
    1e-12
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: tol_residual(),
            bound_rel: tol_bound(),
            ratio: tol_ratio(),
            homogeneity: tol_homogeneity(),
            exact: tol_exact(),
            axioms: tol_axioms(),
        }
    }
}

/// Parameters of the functional-equation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunceqSweep {
    #[serde(default = "all_degrees")]
    pub degrees: Vec<u32>,
    #[serde(default = "default_scales")]
    pub scales: Vec<i64>,
    #[serde(default = "default_coeffs")]
    pub coeffs: Vec<Element>,
    /// Number of random polynomial maps in the classical comparison.
    #[serde(default = "twenty")]
    pub polynomial_maps: usize,
    /// Number of random pairs per polynomial map.
    #[serde(default = "hundred")]
    pub pairs: usize,
}

fn all_degrees() -> Vec<u32> {
    vec![1, 2, 3, 4]
}

fn default_scales() -> Vec<i64> {
    vec![2, 3, -2]
}

fn default_coeffs() -> Vec<Element> {
    use num_complex::Complex64;
    vec![
        Element::real(1.0),
        Element::real(2.0),
        Element::scalar(Complex64::new(1.0, 1.0)),
    ]
}

fn twenty() -> usize {
    20
}

fn hundred() -> usize {
    100
}

impl Default for FunceqSweep {
    fn default() -> Self {
        FunceqSweep {
            degrees: all_degrees(),
            scales: default_scales(),
            coeffs: default_coeffs(),
            polynomial_maps: twenty(),
            pairs: hundred(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub algebra: AlgebraSpec,
    /// Target algebra of homomorphism experiments; the domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codomain: Option<AlgebraSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    /// Perturbation of the uniqueness check; derived from the main one when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_perturbation: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<i64>,
    #[serde(default = "shrink")]
    pub direction: ScaleDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<ControlSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<ControlSpec>,
    #[serde(default = "default_depth")]
    pub depth: u32,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Permutation3>,
    /// Run the homomorphism pipeline once per permutation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_permutations: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Sample count of the axiom checks.
    #[serde(default = "hundred")]
    pub samples: usize,
    /// Cap on tuples per residual sweep.
    #[serde(default = "default_budget")]
    pub tuple_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<FunceqSweep>,
}

fn shrink() -> ScaleDirection {
    ScaleDirection::Shrink
}

fn default_depth() -> u32 {
    20
}

fn default_budget() -> usize {
    crate::funceq::DEFAULT_TUPLE_BUDGET
}

impl ExperimentConfig {
    /// A configuration of `kind` with every optional field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            name: None,
            seed: 0,
            algebra: AlgebraSpec::default(),
            codomain: None,
            map: None,
            second_perturbation: None,
            m: None,
            a: None,
            direction: ScaleDirection::Shrink,
            phi: None,
            psi: None,
            depth: default_depth(),
            grid: GridSpec::default(),
            sigma: None,
            all_permutations: false,
            tolerances: Tolerances::default(),
            samples: hundred(),
            tuple_budget: default_budget(),
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn need<T: Clone>(&self, field: &Option<T>, name: &str) -> Result<T> {
        field
            .clone()
            .ok_or_else(|| LabError::Config(format!("{} experiment requires `{name}`", self.kind.name())))
    }

    pub fn require_m(&self) -> Result<u32> {
        self.need(&self.m, "m")
    }

    pub fn require_a(&self) -> Result<i64> {
        self.need(&self.a, "a")
    }

    pub fn require_map(&self) -> Result<MapSpec> {
        self.need(&self.map, "map")
    }

    pub fn require_phi(&self) -> Result<ControlSpec> {
        self.need(&self.phi, "phi")
    }

    pub fn require_psi(&self) -> Result<ControlSpec> {
        self.need(&self.psi, "psi")
    }

    /// Kind-specific completeness and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        self.algebra.build()?;
        if let Some(c) = &self.codomain {
            c.build()?;
            if c.dim != self.algebra.dim {
                return Err(LabError::Config("codomain dimension must match the domain".into()));
            }
        }
        if let Some(m) = self.m {
            check_degree(m)?;
        }
        if let Some(a) = self.a {
            check_scale(a)?;
        }
        if let Some(map) = &self.map {
            map.validate()?;
        }
        if let Some(p) = &self.second_perturbation {
            p.validate()?;
        }
        for c in [&self.phi, &self.psi].into_iter().flatten() {
            c.with_theta_or_unit()?;
        }
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(LabError::Config(format!("depth N = {} outside 1..={MAX_DEPTH}", self.depth)));
        }
        if !(self.grid.rho.is_finite() && self.grid.rho > 0.0) || self.grid.directions == 0 {
            return Err(LabError::Config("grid needs a positive radius and at least one direction".into()));
        }
        if self.tuple_budget == 0 {
            return Err(LabError::Config("tuple_budget must be positive".into()));
        }
        let hom = self.kind == SigmaHomStability;
        if (self.sigma.is_some() || self.all_permutations) && !hom {
            return Err(LabError::Config("`sigma` applies to sigma_hom_stability experiments only".into()));
        }
        if self.codomain.is_some() && !hom {
            return Err(LabError::Config("`codomain` applies to sigma_hom_stability experiments only".into()));
        }
        if self.sweep.is_some() && self.kind != FunceqCheck {
            return Err(LabError::Config("`sweep` applies to funceq_check experiments only".into()));
        }
        match self.kind {
            DerivationStability | SigmaHomStability => {
                self.require_m()?;
                self.require_a()?;
                self.require_map()?;
                self.require_phi()?;
                self.require_psi()?;
                if hom && self.sigma.is_none() && !self.all_permutations {
                    return Err(LabError::Config(
                        "sigma_hom_stability requires `sigma` or `all_permutations`".into(),
                    ));
                }
            }
            Superstability => {
                self.require_m()?;
                self.require_a()?;
                self.require_map()?;
                self.require_phi()?;
            }
            Extract => {
                self.require_m()?;
                self.require_a()?;
                self.require_map()?;
            }
            Axioms => {
                if self.samples == 0 {
                    return Err(LabError::Config("axioms experiment needs samples > 0".into()));
                }
            }
            FunceqCheck => {
                if let Some(s) = &self.sweep {
                    for m in &s.degrees {
                        check_degree(*m)?;
                    }
                    for a in &s.scales {
                        check_scale(*a)?;
                    }
                    if s.coeffs.iter().any(|c| c.dim() != 1) {
                        return Err(LabError::Config("sweep coefficients must be scalars".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn grid_seed(&self) -> u64 {
        self.grid.seed.unwrap_or_else(|| derive_seed(self.seed, 1))
    }

    pub fn build_grid(&self) -> Result<EvalGrid> {
        let a = self.a.unwrap_or(2);
        EvalGrid::new(
            self.algebra.dim,
            self.grid.rho,
            self.grid.shells,
            a,
            self.grid.directions,
            self.grid_seed(),
        )
    }

    pub fn extraction(&self) -> Result<ExtractionConfig> {
        let mut cfg = ExtractionConfig::new(self.require_a()?, self.require_m()?, self.depth, self.direction)?;
        cfg.rel_tol = self.tolerances.bound_rel;
        cfg.ratio_tol = self.tolerances.ratio;
        cfg.residual_tol = self.tolerances.residual;
        Ok(cfg)
    }

    /// Scalars with the trivial product, `E = 2x^4` plus a radial
    /// perturbation of exponent 6, `a = 2`, power-sum and power-product
    /// controls with exponents 6 and 5, depth 20.
    pub fn reference_derivation() -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::DerivationStability);
        cfg.name = Some("derivation reference".into());
        cfg.algebra = AlgebraSpec::scalars(ProductRule::Trivial);
        cfg.map = Some(MapSpec::monomial(Element::real(2.0), 4).with_perturbation(Perturbation::radial(1e-3, 6.0, 7)));
        cfg.m = Some(4);
        cfg.a = Some(2);
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 6.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 5.0 }));
        cfg
    }

    /// Scalars with the derived product, `H = x^3` plus a radial
    /// perturbation of exponent 5, every permutation, depth 20.
    pub fn reference_sigma_hom() -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::SigmaHomStability);
        cfg.name = Some("sigma-homomorphism reference".into());
        cfg.algebra = AlgebraSpec::scalars(ProductRule::Derived);
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 3).with_perturbation(Perturbation::radial(1e-3, 5.0, 7)));
        cfg.m = Some(3);
        cfg.a = Some(2);
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 5.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 5.0 }));
        cfg.all_permutations = true;
        cfg
    }

    /// Expanding extraction: `E = x^3` plus a radial perturbation of
    /// exponent 1, `a = 2`, depth 25.
    pub fn reference_expand() -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::DerivationStability);
        cfg.name = Some("expanding reference".into());
        cfg.algebra = AlgebraSpec::scalars(ProductRule::Trivial);
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 3).with_perturbation(Perturbation::radial(1e-3, 1.0, 7)));
        cfg.m = Some(3);
        cfg.a = Some(2);
        cfg.direction = ScaleDirection::Expand;
        cfg.depth = 25;
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 1.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 1.0 }));
        cfg
    }

    /// Superstability audit of `E = 2x^4` (perturbed by `epsilon` when
    /// positive) under a single-argument control.
    pub fn reference_superstability(epsilon: f64) -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Superstability);
        cfg.name = Some("superstability reference".into());
        cfg.algebra = AlgebraSpec::scalars(ProductRule::Trivial);
        let base = MapSpec::monomial(Element::real(2.0), 4);
        cfg.map = Some(if epsilon > 0.0 {
            base.with_perturbation(Perturbation::radial(epsilon, 6.0, 7))
        } else {
            base
        });
        cfg.m = Some(4);
        cfg.a = Some(2);
        cfg.phi = Some(ControlSpec {
            shape: Shape::SingleArg { r: 6.0 },
            theta: Some(1.0),
        });
        cfg.psi = Some(ControlSpec {
            shape: Shape::PowerSum3 { s: 13.0 },
            theta: Some(1.0),
        });
        cfg
    }

    pub fn reference_funceq() -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::FunceqCheck);
        cfg.name = Some("monomial and classical residuals".into());
        cfg.sweep = Some(FunceqSweep::default());
        cfg
    }

    pub fn reference_axioms(dim: usize) -> Self {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Axioms);
        cfg.name = Some("axioms".into());
        cfg.algebra = AlgebraSpec {
            dim,
            rule: ProductRule::Derived,
            mutation: None,
        };
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::reference_derivation(),
            ExperimentConfig::reference_sigma_hom(),
            ExperimentConfig::reference_expand(),
            ExperimentConfig::reference_superstability(1e-3),
            ExperimentConfig::reference_funceq(),
            ExperimentConfig::reference_axioms(2),
        ] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(r#"{"kind": "axioms", "colour": 3}"#).unwrap_err();
        assert!(matches!(err, LabError::Config(ref s) if s.contains("colour")));
        let err = ExperimentConfig::from_json(r#"{"kind": "axioms", "grid": {"shells": 3, "radius": 1}}"#).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn completeness_enforced() {
        let err = ExperimentConfig::from_json(r#"{"kind": "derivation_stability", "m": 3}"#).unwrap_err();
        assert!(matches!(err, LabError::Config(ref s) if s.contains("`a`")));
        let mut cfg = ExperimentConfig::reference_derivation();
        cfg.sigma = Some(Permutation3::cycle());
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::reference_sigma_hom();
        cfg.all_permutations = false;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn minimal_document_parses() {
        let text = r#"{
            "kind": "derivation_stability",
            "algebra": {"rule": "trivial"},
            "map": {
                "base": {"kind": "monomial", "coeff": 2, "degree": 4},
                "perturbation": {"kind": "radial", "epsilon": 1e-3, "exponent": 6,
                                 "direction": {"kind": "fixed", "seed": 7}}
            },
            "m": 4, "a": 2,
            "phi": {"shape": {"family": "power_sum", "r": 6}},
            "psi": {"shape": {"family": "power_product", "p": 5}}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg, ExperimentConfig::reference_derivation().with_name(None));
    }

    impl ExperimentConfig {
        fn with_name(mut self, name: Option<String>) -> Self {
            self.name = name;
            self
        }
    }
}
