//! Control-function families, their contraction factors, and the
//! closed-form stability bounds.
//!
//! Binary controls (`phi`) majorize the unified-equation residual; ternary
//! controls (`psi`) majorize the derivation or homomorphism residual. Every
//! family here is a sum of a constant part and a homogeneous power part, so
//! its contraction factor under `x -> x / a` is exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::Element;
use crate::error::{LabError, Result};
use crate::funceq::{check_degree, grid_tuples, ResidualKind};
use crate::maps::{check_scale, AlgebraMap, EvalGrid, ScaleDirection};

/// Shape of a control family. The free constant `theta` lives in
/// [`ControlFunction`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `theta (|x|^r + |y|^r)`
    PowerSum { r: f64 },
    /// `theta |x|^p |y|^p |z|^p`
    PowerProduct { p: f64 },
    /// `theta (|x|^s + |y|^s + |z|^s)`
    PowerSum3 { s: f64 },
    /// `delta + theta (|x|^r + |y|^r)`
    ConstPlusPower { delta: f64, r: f64 },
    /// `delta + theta |x|^p |y|^p |z|^p`
    ConstPlusProduct { delta: f64, p: f64 },
    /// `theta |y|^r`
    SingleArg { r: f64 },
}

impl Shape {
    pub fn arity(&self) -> usize {
        match self {
            Shape::PowerSum { .. } | Shape::ConstPlusPower { .. } | Shape::SingleArg { .. } => 2,
            _ => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::PowerSum { .. } => "power_sum",
            Shape::PowerProduct { .. } => "power_product",
            Shape::PowerSum3 { .. } => "power_sum3",
            Shape::ConstPlusPower { .. } => "const_plus_power",
            Shape::ConstPlusProduct { .. } => "const_plus_product",
            Shape::SingleArg { .. } => "single_arg",
        }
    }

    /// The exponent parameter (`r`, `p` or `s`).
    pub fn exponent(&self) -> f64 {
        match *self {
            Shape::PowerSum { r } | Shape::ConstPlusPower { r, .. } | Shape::SingleArg { r } => r,
            Shape::PowerProduct { p } | Shape::ConstPlusProduct { p, .. } => p,
            Shape::PowerSum3 { s } => s,
        }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            Shape::ConstPlusPower { delta, .. } | Shape::ConstPlusProduct { delta, .. } => delta,
            _ => 0.0,
        }
    }

    /// Degree of homogeneity of the power part.
    pub fn degree(&self) -> f64 {
        match *self {
            Shape::PowerProduct { p } | Shape::ConstPlusProduct { p, .. } => 3.0 * p,
            _ => self.exponent(),
        }
    }

    /// The power part with unit constant, evaluated on argument norms.
    pub fn power_part(&self, norms: &[f64]) -> f64 {
        match *self {
            Shape::PowerSum { r } | Shape::ConstPlusPower { r, .. } => norms[0].powf(r) + norms[1].powf(r),
            Shape::SingleArg { r } => norms[1].powf(r),
            Shape::PowerProduct { p } | Shape::ConstPlusProduct { p, .. } => {
                norms[0].powf(p) * norms[1].powf(p) * norms[2].powf(p)
            }
            Shape::PowerSum3 { s } => norms[0].powf(s) + norms[1].powf(s) + norms[2].powf(s),
        }
    }

    fn validate(&self) -> Result<()> {
        let e = self.exponent();
        if !(e.is_finite() && e > 0.0) {
            return Err(LabError::Config(format!("{} exponent {e} must be positive", self.name())));
        }
        let d = self.delta();
        if !(d.is_finite() && d >= 0.0) {
            return Err(LabError::Config(format!("{} delta {d} must be nonnegative", self.name())));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFunction {
    pub theta: f64,
    pub shape: Shape,
}

impl ControlFunction {
    pub fn new(theta: f64, shape: Shape) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(LabError::Config(format!("control constant theta = {theta} must be nonnegative")));
        }
        shape.validate()?;
        Ok(ControlFunction { theta, shape })
    }

    pub fn power_sum(theta: f64, r: f64) -> Self {
        ControlFunction::new(theta, Shape::PowerSum { r }).expect("valid power_sum parameters")
    }

    pub fn power_product(theta: f64, p: f64) -> Self {
        ControlFunction::new(theta, Shape::PowerProduct { p }).expect("valid power_product parameters")
    }

    pub fn power_sum3(theta: f64, s: f64) -> Self {
        ControlFunction::new(theta, Shape::PowerSum3 { s }).expect("valid power_sum3 parameters")
    }

    pub fn single_arg(theta: f64, r: f64) -> Self {
        ControlFunction::new(theta, Shape::SingleArg { r }).expect("valid single_arg parameters")
    }

    pub fn const_plus_power(delta: f64, theta: f64, r: f64) -> Self {
        ControlFunction::new(theta, Shape::ConstPlusPower { delta, r }).expect("valid const_plus_power parameters")
    }

    pub fn arity(&self) -> usize {
        self.shape.arity()
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// The family formula on the norms of the arguments.
    pub fn eval_norms(&self, norms: &[f64]) -> Result<f64> {
        if norms.len() != self.arity() {
            return Err(LabError::Structural(format!(
                "{} takes {} arguments, got {}",
                self.shape.name(),
                self.arity(),
                norms.len()
            )));
        }
        let power = if self.theta == 0.0 { 0.0 } else { self.theta * self.shape.power_part(norms) };
        Ok(self.shape.delta() + power)
    }

    pub fn eval(&self, points: &[&Element]) -> Result<f64> {
        let norms: Vec<f64> = points.iter().map(|x| x.norm()).collect();
        self.eval_norms(&norms)
    }

    /// `phi(x, 0)`, the weight of the generalized metric.
    pub fn at_axis(&self, x_norm: f64) -> f64 {
        self.eval_norms(&[x_norm, 0.0]).expect("binary control")
    }

    /// Smallest `L` with `|a|^w phi(x/a, ..) <= L phi(x, ..)` (shrink) or
    /// `phi(ax, ..) <= |a|^w L phi(x, ..)` (expand), where `w = m` for binary
    /// and `w = 3m` for ternary controls. Depends on the shape only, so the
    /// power part counts even when `theta = 0`.
    pub fn contraction_factor(&self, a: i64, m: u32, direction: ScaleDirection) -> f64 {
        let abs_a = a.unsigned_abs() as f64;
        let w = if self.arity() == 2 { m as f64 } else { 3.0 * m as f64 };
        let exp_of = |degree: f64| match direction {
            ScaleDirection::Shrink => w - degree,
            ScaleDirection::Expand => degree - w,
        };
        let mut factor = f64::NEG_INFINITY;
        let delta = self.shape.delta();
        if delta > 0.0 {
            factor = factor.max(abs_a.powf(exp_of(0.0)));
        }
        factor.max(abs_a.powf(exp_of(self.shape.degree())))
    }
}

impl fmt::Display for ControlFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shape {
            Shape::ConstPlusPower { delta, .. } | Shape::ConstPlusProduct { delta, .. } => write!(
                f,
                "{}(delta={delta}, theta={}, {})",
                self.shape.name(),
                self.theta,
                self.shape.exponent()
            ),
            _ => write!(f, "{}(theta={}, {})", self.shape.name(), self.theta, self.shape.exponent()),
        }
    }
}

/// Which control fixes the certified constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Phi,
    Psi,
}

/// A named closed-form condition on the family exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCondition {
    pub name: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub a: i64,
    pub m: u32,
    pub direction: ScaleDirection,
    pub phi_factor: f64,
    pub psi_factor: f64,
    /// `max(phi_factor, psi_factor)`, the least constant serving both.
    pub l: f64,
    pub binding: Binding,
    /// `0 < L < 1`.
    pub feasible: bool,
    /// The exponent conditions stated for this family pair, when the pair
    /// is one of the closed-form cases.
    pub conditions: Vec<NamedCondition>,
}

impl ContractionCertificate {
    /// Feasible with the `phi` factor alone serving as `L`, which is what
    /// the closed-form bounds assume.
    pub fn closed_form_feasible(&self) -> bool {
        self.feasible && self.binding == Binding::Phi
    }

    /// Names of the stated conditions that fail.
    pub fn violated(&self) -> Vec<String> {
        let mut out: Vec<String> = self.conditions.iter().filter(|c| !c.holds).map(|c| c.name.clone()).collect();
        if out.is_empty() && !self.feasible {
            out.push(format!("0 < L < 1 (L = {})", self.l));
        }
        out
    }
}

/// Analytic contraction certificate for the pair `(phi, psi)`.
pub fn contraction_factor(
    phi: &ControlFunction,
    psi: &ControlFunction,
    a: i64,
    m: u32,
    direction: ScaleDirection,
) -> Result<ContractionCertificate> {
    check_scale(a)?;
    check_degree(m)?;
    if phi.arity() != 2 || psi.arity() != 3 {
        return Err(LabError::Structural(format!(
            "phi must be binary and psi ternary, got {} and {}",
            phi.shape.name(),
            psi.shape.name()
        )));
    }
    let phi_factor = phi.contraction_factor(a, m, direction);
    let psi_factor = psi.contraction_factor(a, m, direction);
    let (l, binding) = if psi_factor > phi_factor {
        (psi_factor, Binding::Psi)
    } else {
        (phi_factor, Binding::Phi)
    };
    Ok(ContractionCertificate {
        a,
        m,
        direction,
        phi_factor,
        psi_factor,
        l,
        binding,
        feasible: l > 0.0 && l < 1.0,
        conditions: stated_conditions(&phi.shape, &psi.shape, m, direction),
    })
}

/// Certificate for `phi` alone, used when no ternary control is checked.
pub fn phi_certificate(phi: &ControlFunction, a: i64, m: u32, direction: ScaleDirection) -> Result<ContractionCertificate> {
    check_scale(a)?;
    check_degree(m)?;
    if phi.arity() != 2 {
        return Err(LabError::Structural(format!("phi must be binary, got {}", phi.shape.name())));
    }
    let l = phi.contraction_factor(a, m, direction);
    Ok(ContractionCertificate {
        a,
        m,
        direction,
        phi_factor: l,
        psi_factor: 0.0,
        l,
        binding: Binding::Phi,
        feasible: l > 0.0 && l < 1.0,
        conditions: Vec::new(),
    })
}

/// The exponent conditions attached to the closed-form cases.
pub fn stated_conditions(phi: &Shape, psi: &Shape, m: u32, direction: ScaleDirection) -> Vec<NamedCondition> {
    let m = m as f64;
    let c = |name: &str, holds: bool| NamedCondition {
        name: name.to_string(),
        holds,
    };
    use ScaleDirection::*;
    use Shape::*;
    match (direction, phi, psi) {
        (Shrink, PowerSum { r }, PowerProduct { p }) => vec![
            c("r > m", *r > m),
            c("p > m", *p > m),
            c("(3p - r)/2 >= m", (3.0 * p - r) / 2.0 >= m),
        ],
        (Expand, PowerSum { r } | ConstPlusPower { r, .. }, PowerProduct { p } | ConstPlusProduct { p, .. }) => vec![
            c("0 < r < m", *r > 0.0 && *r < m),
            c("0 < p < m", *p > 0.0 && *p < m),
            c("(3p - r)/2 <= m", (3.0 * p - r) / 2.0 <= m),
        ],
        (Expand, PowerSum { r }, PowerSum3 { s }) => vec![
            c("0 < r < m", *r > 0.0 && *r < m),
            c("0 < p < 3m", *s > 0.0 && *s < 3.0 * m),
            c("(p - r)/2 <= m", (s - r) / 2.0 <= m),
        ],
        (Shrink, SingleArg { r }, PowerSum3 { s }) => vec![c("r > m", *r > m), c("s > 3m", *s > 3.0 * m)],
        (Expand, SingleArg { r }, _) => vec![c("r < m", *r < m)],
        _ => Vec::new(),
    }
}

fn check_l(l: f64) -> Result<()> {
    if !(l > 0.0 && l < 1.0) {
        return Err(LabError::Config(format!("contraction constant L = {l} must lie in (0, 1)")));
    }
    Ok(())
}

/// Stability bound at `x`: `L / (2|a|^m (1 - L)) phi(x, 0)` when
/// shrinking, `1 / (2|a|^m (1 - L)) phi(x, 0)` when expanding.
pub fn bound_value(phi: &ControlFunction, l: f64, a: i64, m: u32, x_norm: f64, variant: ScaleDirection) -> Result<f64> {
    check_l(l)?;
    check_scale(a)?;
    let am = (a.unsigned_abs() as f64).powi(m as i32);
    let numer = match variant {
        ScaleDirection::Shrink => l,
        ScaleDirection::Expand => 1.0,
    };
    Ok(numer / (2.0 * am * (1.0 - l)) * phi.at_axis(x_norm))
}

/// The closed-form power bound, where one exists:
/// `theta |x|^r / (2(|a|^r - |a|^m))` when shrinking with `power_sum`, and
/// `(delta + theta |x|^r) / (2(|a|^m - |a|^r))` when expanding with
/// `power_sum` or `const_plus_power`.
pub fn closed_form_bound(phi: &ControlFunction, a: i64, m: u32, x_norm: f64, direction: ScaleDirection) -> Option<f64> {
    let abs_a = a.unsigned_abs() as f64;
    let am = abs_a.powi(m as i32);
    match (direction, phi.shape) {
        (ScaleDirection::Shrink, Shape::PowerSum { r }) if r > m as f64 => {
            Some(phi.theta / (2.0 * (abs_a.powf(r) - am)) * x_norm.powf(r))
        }
        (ScaleDirection::Expand, Shape::PowerSum { r }) if r < m as f64 => {
            Some(phi.theta / (2.0 * (am - abs_a.powf(r))) * x_norm.powf(r))
        }
        (ScaleDirection::Expand, Shape::ConstPlusPower { delta, r }) if r < m as f64 => {
            let d = 2.0 * (am - abs_a.powf(r));
            Some(delta / d + phi.theta / d * x_norm.powf(r))
        }
        _ => None,
    }
}

/// Outcome of fitting the free constant of a control family to measured
/// residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaFit {
    /// Fitted constant; infinite when infeasible.
    pub theta: f64,
    /// `false` when a positive residual sits where the shape vanishes.
    pub feasible: bool,
    /// Tuple attaining the maximum ratio (or the infeasibility).
    pub witness: Vec<Element>,
    pub tuples: usize,
}

/// Smallest `theta` making `|residual| <= delta + theta * shape` on every
/// grid tuple of `kind`.
pub fn fit_theta_kind<M: AlgebraMap + ?Sized>(
    f: &M,
    kind: &ResidualKind,
    shape: &Shape,
    grid: &EvalGrid,
    budget: usize,
    seed: u64,
) -> Result<ThetaFit> {
    if shape.arity() != kind.arity() {
        return Err(LabError::Structural(format!(
            "{} has arity {}, residual has arity {}",
            shape.name(),
            shape.arity(),
            kind.arity()
        )));
    }
    let tuples = grid_tuples(grid, kind.arity(), budget, seed);
    let delta = shape.delta();
    let mut fit = ThetaFit {
        theta: 0.0,
        feasible: true,
        witness: Vec::new(),
        tuples: tuples.len(),
    };
    for t in &tuples {
        let refs: Vec<&Element> = t.iter().collect();
        let excess = (kind.eval(f, &refs)?.norm() - delta).max(0.0);
        if excess == 0.0 {
            continue;
        }
        let norms: Vec<f64> = t.iter().map(|x| x.norm()).collect();
        let s = shape.power_part(&norms);
        if s == 0.0 {
            return Ok(ThetaFit {
                theta: f64::INFINITY,
                feasible: false,
                witness: t.clone(),
                tuples: tuples.len(),
            });
        }
        let ratio = excess / s;
        if ratio > fit.theta {
            fit.theta = ratio;
            fit.witness = t.clone();
        }
    }
    Ok(fit)
}

/// Fits `theta` for a binary shape against `Delta_m f` on grid pairs.
pub fn fit_theta<M: AlgebraMap + ?Sized>(f: &M, shape: &Shape, grid: &EvalGrid, a: i64, m: u32) -> Result<ThetaFit> {
    fit_theta_kind(f, &ResidualKind::Delta { a, m }, shape, grid, usize::MAX, 0)
}

/// Numerical cross-check of an analytic factor: the largest ratio
/// `|a|^w c(x/a, ..) / c(x, ..)` (shrink) or `c(ax, ..) / (|a|^w c(x, ..))`
/// (expand) over grid tuples.
pub fn empirical_factor(c: &ControlFunction, grid: &EvalGrid, a: i64, m: u32, direction: ScaleDirection) -> f64 {
    let abs_a = a.unsigned_abs() as f64;
    let w = if c.arity() == 2 { m as i32 } else { 3 * m as i32 };
    let aw = abs_a.powi(w);
    let tuples = grid_tuples(grid, c.arity(), 20_000, 1);
    let mut best = 0.0f64;
    for t in &tuples {
        let norms: Vec<f64> = t.iter().map(|x| x.norm()).collect();
        let base = c.eval_norms(&norms).expect("arity matches");
        if base == 0.0 {
            continue;
        }
        let ratio = match direction {
            ScaleDirection::Shrink => {
                let moved: Vec<f64> = norms.iter().map(|v| v / abs_a).collect();
                aw * c.eval_norms(&moved).expect("arity matches") / base
            }
            ScaleDirection::Expand => {
                let moved: Vec<f64> = norms.iter().map(|v| v * abs_a).collect();
                c.eval_norms(&moved).expect("arity matches") / (aw * base)
            }
        };
        best = best.max(ratio);
    }
    best
}
