//! Residual operators for the unified equation
//!
//! ```text
//! f(ax + y) + f(ax - y) = a^(m-2) [f(x + y) + f(x - y)]
//!                         + 2(a^2 - 1) [a^(m-2) f(x) + c_m f(y)]
//! c_m = (m - 2)(1 - (m - 2)^2) / 6
//! ```
//!
//! together with the classical quadratic, cubic and quartic equations, the
//! ternary `m`-derivation identity and the `sigma`-homomorphism identity.
//!
//! Every residual carries a local scale (the largest term magnitude in the
//! sum) so that "approximately zero" can be judged relatively.

use std::fmt;

use num_rational::Rational64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{relative, Element, TernaryAlgebra};
use crate::error::{LabError, Result};
use crate::maps::{check_scale, AlgebraMap, EvalGrid};
use crate::sampling::seeded_rng;

/// A residual element together with the magnitude of its largest term.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub value: Element,
    pub scale: f64,
}

impl Residual {
    fn from_terms(terms: &[(f64, &Element)]) -> Self {
        let dim = terms[0].1.dim();
        let mut value = Element::zeros(dim);
        let mut scale = 0.0f64;
        for (w, t) in terms {
            let term = t.scale_real(*w);
            scale = scale.max(term.norm());
            value = &value + &term;
        }
        Residual { value, scale }
    }

    pub fn norm(&self) -> f64 {
        self.value.norm()
    }

    /// `|residual| / scale`, with `0/0 = 0`.
    pub fn relative(&self) -> f64 {
        relative(self.norm(), self.scale)
    }
}

/// `(m - 2)(1 - (m - 2)^2) / 6` as an exact rational.
pub fn coeff_c(m: u32) -> Result<Rational64> {
    check_degree(m)?;
    let k = m as i64 - 2;
    Ok(Rational64::new(k * (1 - k * k), 6))
}

pub(crate) fn check_degree(m: u32) -> Result<()> {
    if (1..=4).contains(&m) {
        Ok(())
    } else {
        Err(LabError::Config(format!("degree m = {m} outside 1..=4")))
    }
}

fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// The unified-equation residual `Delta_m f(x, y)`.
pub fn delta_m<M: AlgebraMap + ?Sized>(f: &M, x: &Element, y: &Element, a: i64, m: u32) -> Result<Residual> {
    check_scale(a)?;
    let c = rational_to_f64(coeff_c(m)?);
    let af = a as f64;
    let am2 = af.powi(m as i32 - 2);
    let ax = x.scale_real(af);
    let t1 = f.eval(&(&ax + y))?;
    let t2 = f.eval(&(&ax - y))?;
    let t3 = f.eval(&(x + y))?;
    let t4 = f.eval(&(x - y))?;
    let t5 = f.eval(x)?;
    let k = 2.0 * (af * af - 1.0);
    if c == 0.0 {
        return Ok(Residual::from_terms(&[
            (1.0, &t1),
            (1.0, &t2),
            (-am2, &t3),
            (-am2, &t4),
            (-k * am2, &t5),
        ]));
    }
    let t6 = f.eval(y)?;
    Ok(Residual::from_terms(&[
        (1.0, &t1),
        (1.0, &t2),
        (-am2, &t3),
        (-am2, &t4),
        (-k * am2, &t5),
        (-k * c, &t6),
    ]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalEquation {
    /// `f(x+y) + f(x-y) = 2f(x) + 2f(y)`
    Quadratic,
    /// `f(2x+y) + f(2x-y) = 2f(x+y) + 2f(x-y) + 12f(x)`
    Cubic,
    /// `f(2x+y) + f(2x-y) = 4f(x+y) + 4f(x-y) + 24f(x) - 6f(y)`
    Quartic,
}

impl fmt::Display for ClassicalEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassicalEquation::Quadratic => "quadratic",
            ClassicalEquation::Cubic => "cubic",
            ClassicalEquation::Quartic => "quartic",
        })
    }
}

/// Left-hand side minus right-hand side of a classical equation.
pub fn classical_residual<M: AlgebraMap + ?Sized>(
    eq: ClassicalEquation,
    f: &M,
    x: &Element,
    y: &Element,
) -> Result<Residual> {
    match eq {
        ClassicalEquation::Quadratic => {
            let t1 = f.eval(&(x + y))?;
            let t2 = f.eval(&(x - y))?;
            let t3 = f.eval(x)?;
            let t4 = f.eval(y)?;
            Ok(Residual::from_terms(&[(1.0, &t1), (1.0, &t2), (-2.0, &t3), (-2.0, &t4)]))
        }
        ClassicalEquation::Cubic | ClassicalEquation::Quartic => {
            let x2 = x.scale_real(2.0);
            let t1 = f.eval(&(&x2 + y))?;
            let t2 = f.eval(&(&x2 - y))?;
            let t3 = f.eval(&(x + y))?;
            let t4 = f.eval(&(x - y))?;
            let t5 = f.eval(x)?;
            if eq == ClassicalEquation::Cubic {
                Ok(Residual::from_terms(&[
                    (1.0, &t1),
                    (1.0, &t2),
                    (-2.0, &t3),
                    (-2.0, &t4),
                    (-12.0, &t5),
                ]))
            } else {
                let t6 = f.eval(y)?;
                Ok(Residual::from_terms(&[
                    (1.0, &t1),
                    (1.0, &t2),
                    (-4.0, &t3),
                    (-4.0, &t4),
                    (-24.0, &t5),
                    (6.0, &t6),
                ]))
            }
        }
    }
}

/// `f([x,y,z]) - [f(x), y^m, z^m] - [x^m, f(y), z^m] - [x^m, y^m, f(z)]`.
pub fn derivation_residual<M: AlgebraMap + ?Sized>(
    f: &M,
    x: &Element,
    y: &Element,
    z: &Element,
    m: u32,
    alg: &TernaryAlgebra,
) -> Result<Residual> {
    check_degree(m)?;
    let xm = alg.power(x, m)?;
    let ym = alg.power(y, m)?;
    let zm = alg.power(z, m)?;
    let lhs = f.eval(&alg.product(x, y, z)?)?;
    let r1 = alg.product(&f.eval(x)?, &ym, &zm)?;
    let r2 = alg.product(&xm, &f.eval(y)?, &zm)?;
    let r3 = alg.product(&xm, &ym, &f.eval(z)?)?;
    Ok(Residual::from_terms(&[(1.0, &lhs), (-1.0, &r1), (-1.0, &r2), (-1.0, &r3)]))
}

/// A permutation of `{1, 2, 3}`, stored by its images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; 3]", into = "[u8; 3]")]
pub struct Permutation3([u8; 3]);

impl Permutation3 {
    /// Builds `sigma` from `[sigma(1), sigma(2), sigma(3)]`.
    pub fn new(images: [u8; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &i in &images {
            if !(1..=3).contains(&i) || seen[(i - 1) as usize] {
                return Err(LabError::Config(format!("{images:?} is not a permutation of {{1, 2, 3}}")));
            }
            seen[(i - 1) as usize] = true;
        }
        Ok(Permutation3(images))
    }

    pub fn identity() -> Self {
        Permutation3([1, 2, 3])
    }

    /// `1 -> 2 -> 3 -> 1`
    pub fn cycle() -> Self {
        Permutation3([2, 3, 1])
    }

    pub fn all() -> [Permutation3; 6] {
        [
            Permutation3([1, 2, 3]),
            Permutation3([1, 3, 2]),
            Permutation3([2, 1, 3]),
            Permutation3([2, 3, 1]),
            Permutation3([3, 1, 2]),
            Permutation3([3, 2, 1]),
        ]
    }

    pub fn images(&self) -> [u8; 3] {
        self.0
    }

    /// Zero-based image of zero-based index `i`.
    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        (self.0[i] - 1) as usize
    }
}

impl TryFrom<[u8; 3]> for Permutation3 {
    type Error = LabError;
    fn try_from(images: [u8; 3]) -> Result<Self> {
        Permutation3::new(images)
    }
}

impl From<Permutation3> for [u8; 3] {
    fn from(p: Permutation3) -> [u8; 3] {
        p.0
    }
}

impl fmt::Display for Permutation3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {} {})", self.0[0], self.0[1], self.0[2])
    }
}

/// `f([x1,x2,x3]) - [f(x_s(1)), f(x_s(2)), f(x_s(3))]`, with the first
/// product taken in `alg_a` and the second in `alg_b`.
pub fn sigma_hom_residual<M: AlgebraMap + ?Sized>(
    f: &M,
    xs: [&Element; 3],
    sigma: Permutation3,
    alg_a: &TernaryAlgebra,
    alg_b: &TernaryAlgebra,
) -> Result<Residual> {
    let lhs = f.eval(&alg_a.product(xs[0], xs[1], xs[2])?)?;
    let fx: Vec<Element> = xs.iter().map(|x| f.eval(x)).collect::<Result<_>>()?;
    let rhs = alg_b.product(&fx[sigma.apply(0)], &fx[sigma.apply(1)], &fx[sigma.apply(2)])?;
    Ok(Residual::from_terms(&[(1.0, &lhs), (-1.0, &rhs)]))
}

/// Which residual a grid sweep evaluates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResidualKind {
    /// `Delta_m` over pairs `(x, y)`, `y` ranging over the grid and zero.
    Delta { a: i64, m: u32 },
    /// The `m`-derivation identity over triples.
    Derivation { m: u32, algebra: TernaryAlgebra },
    /// The `sigma`-homomorphism identity over triples.
    SigmaHom {
        sigma: Permutation3,
        domain: TernaryAlgebra,
        codomain: TernaryAlgebra,
    },
}

impl ResidualKind {
    pub fn arity(&self) -> usize {
        match self {
            ResidualKind::Delta { .. } => 2,
            _ => 3,
        }
    }

    pub fn eval<M: AlgebraMap + ?Sized>(&self, f: &M, pts: &[&Element]) -> Result<Residual> {
        match *self {
            ResidualKind::Delta { a, m } => delta_m(f, pts[0], pts[1], a, m),
            ResidualKind::Derivation { m, ref algebra } => derivation_residual(f, pts[0], pts[1], pts[2], m, algebra),
            ResidualKind::SigmaHom {
                sigma,
                ref domain,
                ref codomain,
            } => sigma_hom_residual(f, [pts[0], pts[1], pts[2]], sigma, domain, codomain),
        }
    }
}

/// Default cap on the number of tuples a sweep evaluates.
pub const DEFAULT_TUPLE_BUDGET: usize = 10_000;

/// Enumerates the tuples of a grid sweep: pairs `(x, y)` with `y` in the
/// grid or zero, or triples of grid points. When the full set exceeds
/// `budget`, `budget` tuples are drawn with a seeded generator.
pub fn grid_tuples(grid: &EvalGrid, arity: usize, budget: usize, seed: u64) -> Vec<Vec<Element>> {
    let pts: Vec<&Element> = grid.points().iter().map(|p| &p.x).collect();
    let zero = Element::zeros(grid.dim());
    let n = pts.len();
    let (pool_y, total) = if arity == 2 { (n + 1, n * (n + 1)) } else { (n, n * n * n) };
    let y_at = |j: usize| -> Element {
        if arity == 2 && j == n {
            zero.clone()
        } else {
            pts[j].clone()
        }
    };
    let build = |idx: usize| -> Vec<Element> {
        if arity == 2 {
            vec![pts[idx / pool_y].clone(), y_at(idx % pool_y)]
        } else {
            vec![pts[idx / (n * n)].clone(), pts[(idx / n) % n].clone(), pts[idx % n].clone()]
        }
    };
    if total <= budget {
        (0..total).map(build).collect()
    } else {
        let mut rng = seeded_rng(seed);
        (0..budget).map(|_| build(rng.gen_range(0..total))).collect()
    }
}

/// Result of a residual sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SupResult {
    /// Largest residual norm.
    pub sup: f64,
    /// Tuple attaining `sup`.
    pub witness: Vec<Element>,
    /// Local scale at the witness.
    pub witness_scale: f64,
    /// Largest relative residual `|r| / scale`.
    pub sup_relative: f64,
    pub relative_witness: Vec<Element>,
    pub tuples: usize,
}

/// Maximum residual norm over the grid tuples of `kind`.
pub fn residual_sup<M: AlgebraMap + ?Sized>(
    kind: &ResidualKind,
    f: &M,
    grid: &EvalGrid,
    budget: usize,
    seed: u64,
) -> Result<SupResult> {
    if grid.is_empty() {
        return Err(LabError::Config("residual sweep over an empty grid".into()));
    }
    let tuples = grid_tuples(grid, kind.arity(), budget, seed);
    let mut best = SupResult {
        sup: -1.0,
        witness: Vec::new(),
        witness_scale: 0.0,
        sup_relative: -1.0,
        relative_witness: Vec::new(),
        tuples: tuples.len(),
    };
    for t in &tuples {
        let refs: Vec<&Element> = t.iter().collect();
        let r = kind.eval(f, &refs)?;
        let (nr, rel) = (r.norm(), r.relative());
        if nr > best.sup {
            best.sup = nr;
            best.witness = t.clone();
            best.witness_scale = r.scale;
        }
        if rel > best.sup_relative {
            best.sup_relative = rel;
            best.relative_witness = t.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ProductRule;
    use crate::maps::{Base, MapSpec, Perturbation, Term};
    use num_complex::Complex64;

    fn re(v: f64) -> Element {
        Element::real(v)
    }

    fn scalar_value(r: &Residual) -> Complex64 {
        r.value.entries()[0]
    }

    #[test]
    fn coefficient_values() {
        assert_eq!(coeff_c(1).unwrap(), Rational64::from_integer(0));
        assert_eq!(coeff_c(2).unwrap(), Rational64::from_integer(0));
        assert_eq!(coeff_c(3).unwrap(), Rational64::from_integer(0));
        assert_eq!(coeff_c(4).unwrap(), Rational64::from_integer(-1));
        assert!(matches!(coeff_c(0), Err(LabError::Config(_))));
        assert!(matches!(coeff_c(5), Err(LabError::Config(_))));
    }

    #[test]
    fn identity_under_quadratic_equation() {
        // 2a x - 2x - 2(a^2 - 1) x = 2a(1 - a) x = -4 at a = 2, x = 1
        let f = MapSpec::monomial(re(1.0), 1);
        let r = delta_m(&f, &re(1.0), &re(0.0), 2, 2).unwrap();
        assert!((scalar_value(&r) - Complex64::new(-4.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_arguments_give_zero() {
        let f = MapSpec::monomial(re(3.0), 4).with_perturbation(Perturbation::radial(0.1, 2.0, 1));
        for m in 1..=4 {
            let r = delta_m(&f, &re(0.0), &re(0.0), 3, m).unwrap();
            assert!(r.value.is_zero());
        }
    }

    #[test]
    fn monomials_annihilated() {
        let mut rng = seeded_rng(8);
        for m in 1..=4 {
            for a in [2, 3, -2] {
                let f = MapSpec::monomial(Element::scalar(Complex64::new(1.0, 1.0)), m);
                for _ in 0..20 {
                    let x = Element::random(1, &mut rng);
                    let y = Element::random(1, &mut rng);
                    let r = delta_m(&f, &x, &y, a, m).unwrap();
                    assert!(r.relative() <= 1e-12, "m={m} a={a} rel={}", r.relative());
                }
            }
        }
    }

    #[test]
    fn matrix_monomials_annihilated() {
        let mut rng = seeded_rng(3);
        for m in 1..=4 {
            let c = Element::random(3, &mut rng);
            let f = MapSpec::monomial(c, m);
            let x = Element::random(3, &mut rng);
            let y = Element::random(3, &mut rng);
            let r = delta_m(&f, &x, &y, 3, m).unwrap();
            assert!(r.relative() <= 1e-12, "m={m}");
        }
    }

    #[test]
    fn classical_known_solutions() {
        let sq = MapSpec::monomial(re(1.0), 2);
        assert!(classical_residual(ClassicalEquation::Quadratic, &sq, &re(1.0), &re(1.0))
            .unwrap()
            .value
            .is_zero());
        let cube = MapSpec::monomial(re(1.0), 3);
        assert!(classical_residual(ClassicalEquation::Cubic, &cube, &re(1.0), &re(2.0))
            .unwrap()
            .value
            .is_zero());
        // 27 + 1 - 4*8 - 4*0 - 24 + 6 = -22
        let r = classical_residual(ClassicalEquation::Quartic, &cube, &re(1.0), &re(1.0)).unwrap();
        assert_eq!(scalar_value(&r), Complex64::new(-22.0, 0.0));
    }

    #[test]
    fn derivation_residual_identity_map() {
        let alg = TernaryAlgebra::scalars(ProductRule::Derived);
        let f = MapSpec::monomial(re(1.0), 1);
        let r = derivation_residual(&f, &re(1.0), &re(1.0), &re(1.0), 1, &alg).unwrap();
        assert_eq!(scalar_value(&r), Complex64::new(-2.0, 0.0));
    }

    #[test]
    fn derivation_residual_trivial_product_vanishes() {
        let alg = TernaryAlgebra::new(2, ProductRule::Trivial).unwrap();
        let mut rng = seeded_rng(1);
        let f = MapSpec::monomial(Element::random(2, &mut rng), 3).with_perturbation(Perturbation::radial(0.2, 1.0, 2));
        for m in 1..=4 {
            let (x, y, z) = (
                Element::random(2, &mut rng),
                Element::random(2, &mut rng),
                Element::random(2, &mut rng),
            );
            assert!(derivation_residual(&f, &x, &y, &z, m, &alg).unwrap().value.is_zero());
        }
    }

    #[test]
    fn derivation_residual_rejects_star() {
        let alg = TernaryAlgebra::new(2, ProductRule::Star).unwrap();
        let e = Element::identity(2);
        assert!(matches!(
            derivation_residual(&MapSpec::zero(), &e, &e, &e, 2, &alg),
            Err(LabError::Unsupported(_))
        ));
    }

    #[test]
    fn inner_derivation_is_ternary_derivation() {
        let alg = TernaryAlgebra::new(2, ProductRule::Derived).unwrap();
        let mut rng = seeded_rng(21);
        let f = MapSpec::exact(Base::InnerDerivation {
            coeff: Element::random(2, &mut rng),
        });
        for _ in 0..50 {
            let (x, y, z) = (
                Element::random(2, &mut rng),
                Element::random(2, &mut rng),
                Element::random(2, &mut rng),
            );
            assert!(derivation_residual(&f, &x, &y, &z, 1, &alg).unwrap().relative() <= 1e-12);
        }
    }

    #[test]
    fn permutations() {
        assert_eq!(Permutation3::all().len(), 6);
        assert!(Permutation3::new([1, 1, 2]).is_err());
        assert!(Permutation3::new([0, 1, 2]).is_err());
        let c = Permutation3::cycle();
        assert_eq!((c.apply(0), c.apply(1), c.apply(2)), (1, 2, 0));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "[2,3,1]");
        assert!(serde_json::from_str::<Permutation3>("[3,3,1]").is_err());
    }

    #[test]
    fn sigma_hom_square_on_scalars() {
        let alg = TernaryAlgebra::scalars(ProductRule::Derived);
        let f = MapSpec::monomial(re(1.0), 2);
        let (x1, x2, x3) = (re(2.0), re(3.0), re(4.0));
        let r = sigma_hom_residual(&f, [&x1, &x2, &x3], Permutation3::cycle(), &alg, &alg).unwrap();
        assert!(r.value.is_zero());
        let id = MapSpec::monomial(re(1.0), 1);
        let r = sigma_hom_residual(&id, [&x1, &x2, &x3], Permutation3::identity(), &alg, &alg).unwrap();
        assert!(r.value.is_zero());
    }

    #[test]
    fn sigma_hom_perturbed_is_order_epsilon() {
        let alg = TernaryAlgebra::scalars(ProductRule::Derived);
        let eps = 1e-6;
        let f = MapSpec::monomial(re(1.0), 2).with_perturbation(Perturbation::radial(eps, 3.0, 5));
        let xs = [Element::scalar(Complex64::new(0.7, 0.2)), re(0.9), Element::scalar(Complex64::new(-0.4, 0.5))];
        let r = sigma_hom_residual(&f, [&xs[0], &xs[1], &xs[2]], Permutation3::cycle(), &alg, &alg).unwrap();
        // oracle: g(x1 x2 x3) - [cross terms linear in g] up to O(eps^2)
        let g = f.perturbation_map();
        let sq = |x: &Element| x.matmul(x);
        let prod = xs[0].matmul(&xs[1]).matmul(&xs[2]);
        let lin = &g.eval(&prod).unwrap()
            - &(&(&g.eval(&xs[1]).unwrap().matmul(&sq(&xs[2])).matmul(&sq(&xs[0]))
                + &sq(&xs[1]).matmul(&g.eval(&xs[2]).unwrap()).matmul(&sq(&xs[0])))
                + &sq(&xs[1]).matmul(&sq(&xs[2])).matmul(&g.eval(&xs[0]).unwrap()));
        assert!(r.norm() > 0.0);
        assert!((&r.value - &lin).norm() <= 10.0 * eps * eps);
    }

    #[test]
    fn residual_is_linear_in_the_map() {
        let mut rng = seeded_rng(99);
        let f = MapSpec::exact(Base::Polynomial {
            terms: vec![
                Term { coeff: re(1.5), degree: 1 },
                Term { coeff: re(-0.5), degree: 3 },
            ],
        });
        let g = MapSpec::monomial(re(2.0), 4).with_perturbation(Perturbation::radial(0.3, 2.5, 1));
        let lam = Complex64::new(0.3, -1.2);
        let sum = crate::maps::Combination {
            alpha: Complex64::new(1.0, 0.0),
            f: &f,
            beta: lam,
            g: &g,
        };
        for _ in 0..20 {
            let x = Element::random(1, &mut rng);
            let y = Element::random(1, &mut rng);
            for m in 1..=4 {
                let lhs = delta_m(&sum, &x, &y, 3, m).unwrap();
                let rf = delta_m(&f, &x, &y, 3, m).unwrap();
                let rg = delta_m(&g, &x, &y, 3, m).unwrap();
                let rhs = &rf.value + &rg.value.scale(lam);
                let scale = rf.scale + lam.norm() * rg.scale;
                assert!((&lhs.value - &rhs).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn sweep_of_zero_map_is_zero() {
        let grid = EvalGrid::new(1, 1.0, 4, 2, 3, 1).unwrap();
        let s = residual_sup(&ResidualKind::Delta { a: 2, m: 3 }, &MapSpec::zero(), &grid, 10_000, 0).unwrap();
        assert_eq!(s.sup, 0.0);
        assert_eq!(s.tuples, 15 * 16);
    }

    #[test]
    fn triple_sweep_respects_budget() {
        let grid = EvalGrid::new(1, 1.0, 10, 2, 4, 1).unwrap();
        let kind = ResidualKind::Derivation {
            m: 2,
            algebra: TernaryAlgebra::scalars(ProductRule::Trivial),
        };
        let s = residual_sup(&kind, &MapSpec::zero(), &grid, 500, 3).unwrap();
        assert_eq!(s.tuples, 500);
        let again = residual_sup(&kind, &MapSpec::zero(), &grid, 500, 3).unwrap();
        assert_eq!(s, again);
    }
}
