//! Evaluable maps `f: A -> X` on a concrete algebra.
//!
//! A [`MapSpec`] is an exact base part plus an optional radial perturbation
//! `g(x) = eps * |x|^r * u`. Scaled evaluation `a^(mn) f(x / a^n)` (and its
//! expanding mirror) is computed by scaling the argument, evaluating, then
//! scaling the value, so no structure is lost.

use std::fmt;

use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::algebra::{binary_power, Element};
use crate::error::{LabError, Result};
use crate::sampling::seeded_rng;

/// Anything that can be evaluated at an algebra element.
pub trait AlgebraMap {
    fn eval(&self, x: &Element) -> Result<Element>;
}

impl<M: AlgebraMap + ?Sized> AlgebraMap for &M {
    fn eval(&self, x: &Element) -> Result<Element> {
        (**self).eval(x)
    }
}

impl<M: AlgebraMap + ?Sized> AlgebraMap for Box<M> {
    fn eval(&self, x: &Element) -> Result<Element> {
        (**self).eval(x)
    }
}

/// Adapts a closure into an [`AlgebraMap`].
pub struct FnMap<F>(pub F);

impl<F> AlgebraMap for FnMap<F>
where
    F: Fn(&Element) -> Result<Element>,
{
    fn eval(&self, x: &Element) -> Result<Element> {
        (self.0)(x)
    }
}

/// Pointwise `alpha * f + beta * g`.
pub struct Combination<F, G> {
    pub alpha: Complex64,
    pub f: F,
    pub beta: Complex64,
    pub g: G,
}

impl<F: AlgebraMap, G: AlgebraMap> AlgebraMap for Combination<F, G> {
    fn eval(&self, x: &Element) -> Result<Element> {
        Ok(Element::lin_comb(self.alpha, &self.f.eval(x)?, self.beta, &self.g.eval(x)?))
    }
}

/// Pointwise difference `f - g`.
pub fn difference<F: AlgebraMap, G: AlgebraMap>(f: F, g: G) -> Combination<F, G> {
    Combination {
        alpha: Complex64::new(1.0, 0.0),
        f,
        beta: Complex64::new(-1.0, 0.0),
        g,
    }
}

/// One term `c * x^degree` of a polynomial base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: Element,
    pub degree: u32,
}

/// The exact part of a map.
///
/// A one-dimensional coefficient acts as a scalar multiple on matrix
/// arguments; a matrix coefficient multiplies from the left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Base {
    Zero,
    /// `x -> c * x^degree`
    Monomial { coeff: Element, degree: u32 },
    /// A sum of monomials of possibly different degrees.
    Polynomial { terms: Vec<Term> },
    /// `x -> x c - c x`, an additive map.
    InnerDerivation { coeff: Element },
}

impl Base {
    pub fn monomial(coeff: Element, degree: u32) -> Self {
        Base::Monomial { coeff, degree }
    }

    /// Degree of homogeneity, if the base is homogeneous.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Base::Zero => None,
            Base::Monomial { degree, .. } => Some(*degree),
            Base::InnerDerivation { .. } => Some(1),
            Base::Polynomial { terms } => {
                let first = terms.first()?.degree;
                terms.iter().all(|t| t.degree == first).then_some(first)
            }
        }
    }

    pub fn eval(&self, x: &Element) -> Result<Element> {
        match self {
            Base::Zero => Ok(Element::zeros(x.dim())),
            Base::Monomial { coeff, degree } => eval_term(coeff, *degree, x),
            Base::Polynomial { terms } => {
                let mut acc = Element::zeros(x.dim());
                for t in terms {
                    acc = &acc + &eval_term(&t.coeff, t.degree, x)?;
                }
                Ok(acc)
            }
            Base::InnerDerivation { coeff } => {
                if coeff.dim() != x.dim() {
                    return Err(LabError::Dimension {
                        expected: x.dim(),
                        found: coeff.dim(),
                    });
                }
                Ok(&x.matmul(coeff) - &coeff.matmul(x))
            }
        }
    }
}

fn eval_term(coeff: &Element, degree: u32, x: &Element) -> Result<Element> {
    if !(1..=4).contains(&degree) {
        return Err(LabError::Config(format!("monomial degree {degree} outside 1..=4")));
    }
    let xm = binary_power(x, degree);
    if coeff.dim() == 1 {
        Ok(xm.scale(coeff.entries()[0]))
    } else if coeff.dim() == x.dim() {
        Ok(coeff.matmul(&xm))
    } else {
        Err(LabError::Dimension {
            expected: x.dim(),
            found: coeff.dim(),
        })
    }
}

/// Direction of the perturbation vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationDirection {
    /// A fixed seeded unit-norm element `u`.
    Fixed { seed: u64 },
    /// `u = x / |x|`.
    AlongX,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    /// `g(x) = epsilon * |x|^exponent * u`
    Radial {
        epsilon: f64,
        exponent: f64,
        direction: PerturbationDirection,
    },
}

impl Perturbation {
    pub fn radial(epsilon: f64, exponent: f64, seed: u64) -> Self {
        Perturbation::Radial {
            epsilon,
            exponent,
            direction: PerturbationDirection::Fixed { seed },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Perturbation::Radial { epsilon, exponent, .. } = self {
            if !(epsilon.is_finite() && *epsilon >= 0.0) {
                return Err(LabError::Config(format!("perturbation epsilon {epsilon} must be finite and >= 0")));
            }
            if !(exponent.is_finite() && *exponent > 0.0) {
                return Err(LabError::Config(format!("perturbation exponent {exponent} must be finite and > 0")));
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        match self {
            Perturbation::None => true,
            Perturbation::Radial { epsilon, .. } => *epsilon == 0.0,
        }
    }

    /// `(epsilon, exponent)` of a radial perturbation.
    pub fn radial_params(&self) -> Option<(f64, f64)> {
        match self {
            Perturbation::None => None,
            Perturbation::Radial { epsilon, exponent, .. } => Some((*epsilon, *exponent)),
        }
    }

    /// The unit direction used for arguments of dimension `dim`.
    pub fn fixed_direction(&self, dim: usize) -> Option<Element> {
        match self {
            Perturbation::Radial {
                direction: PerturbationDirection::Fixed { seed },
                ..
            } => Some(Element::random_unit(dim, &mut seeded_rng(*seed))),
            _ => None,
        }
    }

    pub fn eval(&self, x: &Element) -> Element {
        match self {
            Perturbation::None => Element::zeros(x.dim()),
            Perturbation::Radial {
                epsilon,
                exponent,
                direction,
            } => {
                let nx = x.norm();
                if nx == 0.0 || *epsilon == 0.0 {
                    return Element::zeros(x.dim());
                }
                let mag = epsilon * nx.powf(*exponent);
                match direction {
                    PerturbationDirection::Fixed { seed } => {
                        Element::random_unit(x.dim(), &mut seeded_rng(*seed)).scale_real(mag)
                    }
                    PerturbationDirection::AlongX => x.scale_real(mag / nx),
                }
            }
        }
    }

    /// Closed-form norm of the perturbation part of a scaled evaluation:
    /// `eps |x|^r |a|^((m - r) n)` when shrinking, `eps |x|^r |a|^((r - m) n)`
    /// when expanding.
    pub fn scaled_norm(&self, x_norm: f64, a: i64, m: u32, n: u32, direction: ScaleDirection) -> f64 {
        match self.radial_params() {
            None => 0.0,
            Some((eps, r)) => {
                let expo = match direction {
                    ScaleDirection::Shrink => (m as f64 - r) * n as f64,
                    ScaleDirection::Expand => (r - m as f64) * n as f64,
                };
                eps * x_norm.powf(r) * (a.unsigned_abs() as f64).powf(expo)
            }
        }
    }
}

/// A map given as exact base plus perturbation. `f(0) = 0` for every spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub base: Base,
    #[serde(default, skip_serializing_if = "Perturbation::is_unset")]
    pub perturbation: Perturbation,
}

impl Perturbation {
    fn is_unset(&self) -> bool {
        matches!(self, Perturbation::None)
    }
}

impl MapSpec {
    pub fn new(base: Base, perturbation: Perturbation) -> Self {
        MapSpec { base, perturbation }
    }

    pub fn exact(base: Base) -> Self {
        MapSpec {
            base,
            perturbation: Perturbation::None,
        }
    }

    pub fn zero() -> Self {
        MapSpec::exact(Base::Zero)
    }

    pub fn monomial(coeff: Element, degree: u32) -> Self {
        MapSpec::exact(Base::monomial(coeff, degree))
    }

    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Self {
        self.perturbation = perturbation;
        self
    }

    /// The exact part alone.
    pub fn base_map(&self) -> MapSpec {
        MapSpec::exact(self.base.clone())
    }

    /// The perturbation part alone.
    pub fn perturbation_map(&self) -> MapSpec {
        MapSpec::new(Base::Zero, self.perturbation.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.perturbation.validate()?;
        match &self.base {
            Base::Monomial { degree, .. } if !(1..=4).contains(degree) => {
                Err(LabError::Config(format!("monomial degree {degree} outside 1..=4")))
            }
            Base::Polynomial { terms } if terms.iter().any(|t| !(1..=4).contains(&t.degree)) => {
                Err(LabError::Config("polynomial degrees must lie in 1..=4".into()))
            }
            _ => Ok(()),
        }
    }
}

impl AlgebraMap for MapSpec {
    fn eval(&self, x: &Element) -> Result<Element> {
        let mut v = self.base.eval(x)?;
        if !self.perturbation.is_none() {
            v = &v + &self.perturbation.eval(x);
        }
        if !v.is_finite() {
            return Err(LabError::NonFinite);
        }
        Ok(v)
    }
}

pub fn evaluate(f: &MapSpec, x: &Element) -> Result<Element> {
    f.eval(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDirection {
    /// `a^(mn) f(x / a^n)`
    Shrink,
    /// `f(a^n x) / a^(mn)`
    Expand,
}

impl fmt::Display for ScaleDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleDirection::Shrink => "shrink",
            ScaleDirection::Expand => "expand",
        })
    }
}

/// Scale integers must avoid `0` and `+-1`.
pub fn check_scale(a: i64) -> Result<()> {
    if matches!(a, -1..=1) {
        return Err(LabError::Config(format!("scale integer a = {a} must satisfy a != 0, +-1")));
    }
    Ok(())
}

/// Largest iteration depth accepted by scaled evaluation.
pub const MAX_DEPTH: u32 = 40;

/// `a^(mn) f(x a^-n)` (shrink) or `a^(-mn) f(a^n x)` (expand).
pub fn evaluate_scaled<M: AlgebraMap + ?Sized>(
    f: &M,
    x: &Element,
    a: i64,
    m: u32,
    n: u32,
    direction: ScaleDirection,
) -> Result<Element> {
    check_scale(a)?;
    if n == 0 {
        return f.eval(x);
    }
    let af = a as f64;
    let (arg_scale, val_scale) = match direction {
        ScaleDirection::Shrink => (af.powi(-(n as i32)), af.powi((m * n) as i32)),
        ScaleDirection::Expand => (af.powi(n as i32), af.powi(-((m * n) as i32))),
    };
    let v = f.eval(&x.scale_real(arg_scale))?.scale_real(val_scale);
    if !v.is_finite() {
        return Err(LabError::NonFinite);
    }
    Ok(v)
}

/// A point of an [`EvalGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub shell: usize,
    pub direction: usize,
    pub x: Element,
}

/// Geometric shells `rho * a^-j * d` for `j = 0..=shells` and each seeded
/// unit direction `d`.
///
/// Dividing a point of shell `j` by `a` lands exactly on shell `j + 1`, so
/// the grid is closed under `x -> x / a` apart from the innermost shell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub rho: f64,
    pub shells: usize,
    pub a: i64,
    pub directions: Vec<Element>,
    points: Vec<GridPoint>,
}

impl EvalGrid {
    pub fn new(dim: usize, rho: f64, shells: usize, a: i64, n_directions: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let directions = (0..n_directions).map(|_| Element::random_unit(dim, &mut rng)).collect();
        EvalGrid::with_directions(rho, shells, a, directions)
    }

    pub fn with_directions(rho: f64, shells: usize, a: i64, directions: Vec<Element>) -> Result<Self> {
        check_scale(a)?;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(LabError::Config(format!("grid radius {rho} must be positive")));
        }
        if directions.is_empty() {
            return Err(LabError::Config("grid needs at least one direction".into()));
        }
        if directions.iter().any(|d| d.is_zero()) {
            return Err(LabError::Config("grid directions must be nonzero".into()));
        }
        let mut points = Vec::with_capacity((shells + 1) * directions.len());
        for j in 0..=shells {
            let s = rho * (a as f64).powi(-(j as i32));
            for (k, d) in directions.iter().enumerate() {
                points.push(GridPoint {
                    shell: j,
                    direction: k,
                    x: d.scale_real(s),
                });
            }
        }
        Ok(EvalGrid {
            rho,
            shells,
            a,
            directions,
            points,
        })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.directions[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Radius of shell `j` for unit directions.
    pub fn radius(&self, j: usize) -> f64 {
        self.rho * (self.a.unsigned_abs() as f64).powi(-(j as i32))
    }

    pub fn shell(&self, j: usize) -> impl Iterator<Item = &GridPoint> {
        self.points.iter().filter(move |p| p.shell == j)
    }
}

// Elements serialize as `[re, im]` when one-dimensional and as rows of
// `[re, im]` pairs otherwise. Deserialization also accepts a bare real
// number and `{"random": {"dim": n, "seed": s}}`.

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.dim() == 1 {
            let z = self.entries()[0];
            [z.re, z.im].serialize(serializer)
        } else {
            self.to_rows().serialize(serializer)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomElementSpec {
    dim: usize,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ElementRepr {
    Real(f64),
    Complex([f64; 2]),
    Rows(Vec<Vec<[f64; 2]>>),
    Random { random: RandomElementSpec },
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = ElementRepr::deserialize(deserializer)?;
        match repr {
            ElementRepr::Real(v) => Element::from_entries(1, vec![Complex64::new(v, 0.0)]).map_err(de::Error::custom),
            ElementRepr::Complex([re, im]) => {
                Element::from_entries(1, vec![Complex64::new(re, im)]).map_err(de::Error::custom)
            }
            ElementRepr::Rows(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(de::Error::custom("element rows must form a square matrix"));
                }
                let entries = rows.into_iter().flatten().map(|[re, im]| Complex64::new(re, im)).collect();
                Element::from_entries(n, entries).map_err(de::Error::custom)
            }
            ElementRepr::Random { random } => {
                if random.dim == 0 {
                    return Err(de::Error::custom("random element dimension must be positive"));
                }
                Ok(Element::random(random.dim, &mut seeded_rng(random.seed)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Element, b: &Element, rel: f64) -> bool {
        (a - b).norm() <= rel * a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn monomial_evaluation() {
        let f = MapSpec::monomial(Element::real(2.0), 3);
        assert_eq!(f.eval(&Element::real(1.0)).unwrap(), Element::real(2.0));
    }

    #[test]
    fn perturbed_monomial_evaluation() {
        let f = MapSpec::monomial(Element::real(2.0), 3).with_perturbation(Perturbation::Radial {
            epsilon: 1e-3,
            exponent: 5.0,
            direction: PerturbationDirection::AlongX,
        });
        let v = f.eval(&Element::real(1.0)).unwrap();
        assert!((v.entries()[0] - Complex64::new(2.001, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn inner_derivation_vanishes_at_its_coefficient() {
        let c = Element::random(2, &mut seeded_rng(1));
        let f = MapSpec::exact(Base::InnerDerivation { coeff: c.clone() });
        assert!(f.eval(&c).unwrap().is_zero());
    }

    #[test]
    fn maps_vanish_at_zero() {
        let c = Element::random(2, &mut seeded_rng(1));
        let specs = [
            MapSpec::zero(),
            MapSpec::monomial(c.clone(), 4).with_perturbation(Perturbation::radial(0.1, 2.0, 3)),
            MapSpec::exact(Base::InnerDerivation { coeff: c }),
        ];
        for f in specs {
            assert!(f.eval(&Element::zeros(2)).unwrap().is_zero());
        }
    }

    #[test]
    fn perturbation_magnitude_is_exact() {
        let g = Perturbation::radial(0.3, 2.5, 7);
        let mut rng = seeded_rng(2);
        for _ in 0..20 {
            let x = Element::random(2, &mut rng);
            let got = g.eval(&x).norm();
            let want = 0.3 * x.norm().powf(2.5);
            assert!((got - want).abs() <= 1e-14 * want);
        }
    }

    #[test]
    fn scaled_evaluation_cancels_homogeneity() {
        let f = MapSpec::monomial(Element::scalar(Complex64::new(1.0, 1.0)), 3);
        let x = Element::scalar(Complex64::new(0.3, -0.7));
        let base = f.eval(&x).unwrap();
        for a in [2, 3, -2] {
            for n in [0, 1, 7, 40] {
                let v = evaluate_scaled(&f, &x, a, 3, n, ScaleDirection::Shrink).unwrap();
                assert!(close(&v, &base, 1e-12), "a={a} n={n}");
                let w = evaluate_scaled(&f, &x, a, 3, n, ScaleDirection::Expand).unwrap();
                assert!(close(&w, &base, 1e-12), "a={a} n={n}");
            }
        }
    }

    #[test]
    fn scaled_evaluation_closed_form_decay() {
        let f = MapSpec::monomial(Element::real(2.0), 3).with_perturbation(Perturbation::Radial {
            epsilon: 1e-3,
            exponent: 5.0,
            direction: PerturbationDirection::AlongX,
        });
        let v = evaluate_scaled(&f, &Element::real(1.0), 2, 3, 10, ScaleDirection::Shrink).unwrap();
        let want = 2.0 + 1e-3 * 4f64.powi(-10);
        assert!((v.entries()[0].re - want).abs() < 1e-15);
        assert!((v.entries()[0].re - 2.000_000_000_95).abs() < 1e-11);
    }

    #[test]
    fn scaled_evaluation_at_depth_zero_is_plain_evaluation() {
        let f = MapSpec::monomial(Element::real(2.0), 2).with_perturbation(Perturbation::radial(0.5, 1.5, 4));
        let x = Element::scalar(Complex64::new(0.4, 0.1));
        assert_eq!(
            evaluate_scaled(&f, &x, 3, 2, 0, ScaleDirection::Shrink).unwrap(),
            f.eval(&x).unwrap()
        );
    }

    #[test]
    fn bad_scales_rejected() {
        let f = MapSpec::zero();
        for a in [-1, 0, 1] {
            assert!(matches!(
                evaluate_scaled(&f, &Element::real(1.0), a, 2, 1, ScaleDirection::Shrink),
                Err(LabError::Config(_))
            ));
        }
    }

    #[test]
    fn grid_is_closed_under_division() {
        for a in [2, 3, -2] {
            let grid = EvalGrid::new(2, 1.0, 6, a, 3, 5).unwrap();
            assert_eq!(grid.len(), 7 * 3);
            for p in grid.points().iter().filter(|p| p.shell < grid.shells) {
                let q = p.x.scale_real(1.0 / a as f64);
                let hit = grid.points().iter().any(|o| o.shell == p.shell + 1 && close(&o.x, &q, 1e-15));
                assert!(hit);
            }
            assert!(grid.points().iter().all(|p| !p.x.is_zero()));
        }
    }

    #[test]
    fn element_serde_forms() {
        let e: Element = serde_json::from_str("2.5").unwrap();
        assert_eq!(e, Element::real(2.5));
        let e: Element = serde_json::from_str("[1.0, -1.0]").unwrap();
        assert_eq!(e, Element::scalar(Complex64::new(1.0, -1.0)));
        let e: Element = serde_json::from_str("[[[1,0],[0,0]],[[0,0],[1,0]]]").unwrap();
        assert_eq!(e, Element::identity(2));
        let e: Element = serde_json::from_str(r#"{"random": {"dim": 2, "seed": 3}}"#).unwrap();
        assert_eq!(e, Element::random(2, &mut seeded_rng(3)));
        let back: Element = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<Element>("[[[1,0]],[[0,0]]]").is_err());
    }

    #[test]
    fn map_spec_textual_form() {
        let text = r#"{"base": {"kind": "monomial", "coeff": 2.0, "degree": 4},
                       "perturbation": {"kind": "radial", "epsilon": 0.001, "exponent": 6.0,
                                        "direction": {"kind": "fixed", "seed": 7}}}"#;
        let f: MapSpec = serde_json::from_str(text).unwrap();
        assert_eq!(f.base, Base::monomial(Element::real(2.0), 4));
        assert_eq!(f.perturbation, Perturbation::radial(1e-3, 6.0, 7));
        let bad = r#"{"base": {"kind": "zero"}, "extra": 1}"#;
        assert!(serde_json::from_str::<MapSpec>(bad).is_err());
    }
}
