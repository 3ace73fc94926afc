//! Concrete ternary Banach algebras at desk scale.
//!
//! Elements are dense `n x n` complex matrices (`n = 1` is the scalar case)
//! carried in row-major order. The ternary product is one of three rules:
//!
//! * `Derived`: `[x, y, z] = x y z`
//! * `Star`: `[x, y, z] = x y* z`, with `*` the conjugate transpose
//! * `Trivial`: `[x, y, z] = 0`
//!
//! All norms are Frobenius norms, which are submultiplicative under every
//! rule above.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::sampling::seeded_rng;

/// An element of a concrete ternary algebra.
#[derive(Clone, PartialEq)]
pub struct Element {
    dim: usize,
    entries: Vec<Complex64>,
}

impl Element {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "algebra dimension must be positive");
        Element {
            dim,
            entries: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut e = Element::zeros(dim);
        for i in 0..dim {
            e.entries[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        e
    }

    /// A `1 x 1` element.
    pub fn scalar(c: Complex64) -> Self {
        Element {
            dim: 1,
            entries: vec![c],
        }
    }

    pub fn real(v: f64) -> Self {
        Element::scalar(Complex64::new(v, 0.0))
    }

    /// `c` times the identity of dimension `dim`.
    pub fn scalar_matrix(dim: usize, c: Complex64) -> Self {
        Element::identity(dim).scale(c)
    }

    /// Builds an element from row-major entries.
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Structural("algebra dimension must be positive".into()));
        }
        if entries.len() != dim * dim {
            return Err(LabError::Structural(format!(
                "expected {} entries for a {dim}x{dim} element, found {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.is_finite()) {
            return Err(LabError::NonFinite);
        }
        Ok(Element { dim, entries })
    }

    /// Entries drawn independently and uniformly from `[-1, 1] x [-1, 1]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let entries = (0..dim * dim)
            .map(|_| Complex64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
            .collect();
        Element { dim, entries }
    }

    /// A random element rescaled to unit Frobenius norm.
    pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let e = Element::random(dim, rng);
            let n = e.norm();
            if n > 1e-3 {
                return e.scale_real(1.0 / n);
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Frobenius norm; the complex modulus for scalars.
    pub fn norm(&self) -> f64 {
        if self.dim == 1 {
            return self.entries[0].norm();
        }
        // scaled accumulation, same idea as BLAS nrm2
        let mut scale = 0.0f64;
        let mut ssq = 1.0f64;
        for z in &self.entries {
            for v in [z.re.abs(), z.im.abs()] {
                if v > 0.0 {
                    if scale < v {
                        ssq = 1.0 + ssq * (scale / v) * (scale / v);
                        scale = v;
                    } else {
                        ssq += (v / scale) * (v / scale);
                    }
                }
            }
        }
        scale * ssq.sqrt()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Element {
            dim: self.dim,
            entries: self.entries.iter().map(|z| z * c).collect(),
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        Element {
            dim: self.dim,
            entries: self.entries.iter().map(|z| z * c).collect(),
        }
    }

    /// Binary matrix product.
    pub fn matmul(&self, rhs: &Element) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in matrix product");
        let n = self.dim;
        if n == 1 {
            return Element::scalar(self.entries[0] * rhs.entries[0]);
        }
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * rhs.entries[k * n + j];
                }
            }
        }
        Element { dim: n, entries: out }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = self.entries[i * n + j].conj();
            }
        }
        Element { dim: n, entries: out }
    }

    /// `alpha * self + beta * other`.
    pub fn lin_comb(alpha: Complex64, x: &Element, beta: Complex64, y: &Element) -> Self {
        assert_eq!(x.dim, y.dim, "dimension mismatch in linear combination");
        Element {
            dim: x.dim,
            entries: x
                .entries
                .iter()
                .zip(&y.entries)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    /// Entries as `[re, im]` rows, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| {
                        let z = self.get(i, j);
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect()
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dim == 1 {
            return write!(f, "Element({})", self.entries[0]);
        }
        f.debug_struct("Element")
            .field("dim", &self.dim)
            .field("entries", &self.entries)
            .finish()
    }
}

impl Add for &Element {
    type Output = Element;
    fn add(self, rhs: &Element) -> Element {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in addition");
        Element {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Element {
    type Output = Element;
    fn sub(self, rhs: &Element) -> Element {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in subtraction");
        Element {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Add for Element {
    type Output = Element;
    fn add(self, rhs: Element) -> Element {
        &self + &rhs
    }
}

impl Sub for Element {
    type Output = Element;
    fn sub(self, rhs: Element) -> Element {
        &self - &rhs
    }
}

impl Neg for &Element {
    type Output = Element;
    fn neg(self) -> Element {
        self.scale_real(-1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductRule {
    /// `[x, y, z] = x y z`
    Derived,
    /// `[x, y, z] = x y* z`
    Star,
    /// `[x, y, z] = 0`
    Trivial,
}

/// Deliberate corruption of the ternary product, for mutation testing of the
/// axiom checkers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Flip the sign of the imaginary part of every entry of the product.
    ImaginarySignFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TernaryAlgebra {
    dim: usize,
    rule: ProductRule,
    mutation: Option<Mutation>,
}

impl TernaryAlgebra {
    pub fn new(dim: usize, rule: ProductRule) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Config("algebra dimension must be positive".into()));
        }
        Ok(TernaryAlgebra {
            dim,
            rule,
            mutation: None,
        })
    }

    pub fn scalars(rule: ProductRule) -> Self {
        TernaryAlgebra {
            dim: 1,
            rule,
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = Some(mutation);
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rule(&self) -> ProductRule {
        self.rule
    }

    pub fn zero(&self) -> Element {
        Element::zeros(self.dim)
    }

    pub fn check_member(&self, x: &Element) -> Result<()> {
        if x.dim() != self.dim {
            return Err(LabError::Dimension {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(())
    }

    pub fn product(&self, x: &Element, y: &Element, z: &Element) -> Result<Element> {
        self.check_member(x)?;
        self.check_member(y)?;
        self.check_member(z)?;
        Ok(self.product_unchecked(x, y, z))
    }

    pub(crate) fn product_unchecked(&self, x: &Element, y: &Element, z: &Element) -> Element {
        let out = match self.rule {
            ProductRule::Derived => x.matmul(y).matmul(z),
            ProductRule::Star => x.matmul(&y.adjoint()).matmul(z),
            ProductRule::Trivial => return self.zero(),
        };
        match self.mutation {
            None => out,
            Some(Mutation::ImaginarySignFlip) => Element {
                dim: out.dim,
                entries: out.entries.iter().map(|z| z.conj()).collect(),
            },
        }
    }

    /// The `m`-fold binary power `x^m`, `m` in `1..=4`.
    ///
    /// Defined for the derived and trivial rules, where the ternary product
    /// comes from the binary matrix product. The star rule has no canonical
    /// binary power.
    pub fn power(&self, x: &Element, m: u32) -> Result<Element> {
        self.check_member(x)?;
        if !(1..=4).contains(&m) {
            return Err(LabError::Config(format!("power degree {m} outside 1..=4")));
        }
        if self.rule == ProductRule::Star {
            return Err(LabError::Unsupported(
                "binary powers are not defined for the star product".into(),
            ));
        }
        Ok(binary_power(x, m))
    }

    pub fn norm(&self, x: &Element) -> f64 {
        x.norm()
    }

    pub fn supports_powers(&self) -> bool {
        self.rule != ProductRule::Star
    }
}

pub(crate) fn binary_power(x: &Element, m: u32) -> Element {
    match m {
        0 => Element::identity(x.dim()),
        1 => x.clone(),
        2 => x.matmul(x),
        3 => x.matmul(x).matmul(x),
        _ => {
            let sq = x.matmul(x);
            let mut acc = sq.matmul(&sq);
            for _ in 4..m {
                acc = acc.matmul(x);
            }
            acc
        }
    }
}

/// Worst observed violation of one axiom over the sampled tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub name: String,
    /// Largest absolute violation.
    pub max_violation: f64,
    /// Largest violation divided by the local scale of the compared terms.
    pub max_relative: f64,
    /// Whether a pass threshold applies to this axiom. Unasserted checks
    /// are reported as measured.
    pub asserted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn get(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Largest relative violation among asserted checks.
    pub fn max_asserted_relative(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.asserted)
            .map(|c| c.max_relative)
            .fold(0.0, f64::max)
    }

    /// Largest relative violation over every check, asserted or not.
    pub fn max_relative(&self) -> f64 {
        self.checks.iter().map(|c| c.max_relative).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_asserted_relative() <= rel_tol
    }
}

struct Tracker {
    name: &'static str,
    max_violation: f64,
    max_relative: f64,
    asserted: bool,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker {
            name,
            max_violation: 0.0,
            max_relative: 0.0,
            asserted: true,
        }
    }

    fn unasserted(mut self) -> Self {
        self.asserted = false;
        self
    }

    fn record(&mut self, violation: f64, scale: f64) {
        let rel = relative(violation, scale);
        self.max_violation = self.max_violation.max(violation);
        self.max_relative = self.max_relative.max(rel);
    }

    fn record_diff(&mut self, lhs: &Element, rhs: &Element, scale: f64) {
        self.record((lhs - rhs).norm(), scale);
    }

    fn finish(self) -> AxiomCheck {
        AxiomCheck {
            name: self.name.to_string(),
            max_violation: self.max_violation,
            max_relative: self.max_relative,
            asserted: self.asserted,
        }
    }
}

pub(crate) fn relative(violation: f64, scale: f64) -> f64 {
    if violation == 0.0 {
        0.0
    } else if scale > 0.0 {
        violation / scale
    } else {
        f64::INFINITY
    }
}

fn random_coeff<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
}

/// Samples the ternary associativity chain and the norm inequality.
///
/// The derived and trivial rules are checked against the plain chain
/// `[[x,y,z],u,v] = [x,[y,z,u],v] = [x,y,[z,u,v]]`; the star rule against
/// `[x,y,[z,w,v]] = [x,[w,z,y],v] = [[x,y,z],w,v]`.
pub fn check_algebra_axioms(alg: &TernaryAlgebra, samples: usize, seed: u64) -> Result<AxiomReport> {
    if samples == 0 {
        return Err(LabError::Config("axiom checks need at least one sample".into()));
    }
    let mut rng = seeded_rng(seed);
    let n = alg.dim();
    let mut assoc = Tracker::new("associativity");
    let mut norm_ineq = Tracker::new("norm_submultiplicative");
    let mut outer_linear = Tracker::new("outer_linearity");
    for _ in 0..samples {
        let x = Element::random(n, &mut rng);
        let y = Element::random(n, &mut rng);
        let z = Element::random(n, &mut rng);
        let u = Element::random(n, &mut rng);
        let v = Element::random(n, &mut rng);
        let scale5 = x.norm() * y.norm() * z.norm() * u.norm() * v.norm();
        let p = |a: &Element, b: &Element, c: &Element| alg.product_unchecked(a, b, c);
        let (c1, c2, c3) = match alg.rule() {
            ProductRule::Star => (
                p(&x, &y, &p(&z, &u, &v)),
                p(&x, &p(&u, &z, &y), &v),
                p(&p(&x, &y, &z), &u, &v),
            ),
            _ => (
                p(&p(&x, &y, &z), &u, &v),
                p(&x, &p(&y, &z, &u), &v),
                p(&x, &y, &p(&z, &u, &v)),
            ),
        };
        assoc.record_diff(&c1, &c2, scale5);
        assoc.record_diff(&c2, &c3, scale5);

        let prod = p(&x, &y, &z);
        let bound = x.norm() * y.norm() * z.norm();
        norm_ineq.record((prod.norm() - bound).max(0.0), bound);

        let alpha = random_coeff(&mut rng);
        let beta = random_coeff(&mut rng);
        let lhs = p(&Element::lin_comb(alpha, &x, beta, &u), &y, &z);
        let rhs = Element::lin_comb(alpha, &p(&x, &y, &z), beta, &p(&u, &y, &z));
        let lin_scale = (alpha.norm() * x.norm() + beta.norm() * u.norm()) * y.norm() * z.norm();
        outer_linear.record_diff(&lhs, &rhs, lin_scale);
    }
    Ok(AxiomReport {
        samples,
        checks: vec![assoc.finish(), norm_ineq.finish(), outer_linear.finish()],
    })
}

/// A ternary module over an algebra. The carrier is the algebra itself and
/// every action bracket reuses the algebra's ternary product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModuleStructure {
    pub algebra: TernaryAlgebra,
}

impl ModuleStructure {
    pub fn over(algebra: TernaryAlgebra) -> Self {
        ModuleStructure { algebra }
    }
}

/// Samples the left, middle and right module axioms (linearity,
/// bilinearity and the bracket identities), the five-slot `TM` identity and
/// the normed-module inequalities.
///
/// `MTM3` is evaluated verbatim as
/// `[a, [b, [c, x, d], e], f] = [[a, b, c], x, [d, e, f]]`. It is asserted
/// only on one-dimensional algebras; on matrix algebras it is reported as
/// measured.
pub fn check_module_axioms(module: &ModuleStructure, samples: usize, seed: u64) -> Result<AxiomReport> {
    if samples == 0 {
        return Err(LabError::Config("axiom checks need at least one sample".into()));
    }
    let alg = &module.algebra;
    let n = alg.dim();
    let p = |a: &Element, b: &Element, c: &Element| alg.product_unchecked(a, b, c);
    let mut rng = seeded_rng(seed);

    let mut ltm1 = Tracker::new("LTM1");
    let mut ltm2 = Tracker::new("LTM2");
    let mut ltm3 = Tracker::new("LTM3");
    let mut mtm1 = Tracker::new("MTM1");
    let mut mtm2 = Tracker::new("MTM2");
    let mut mtm3 = Tracker::new("MTM3");
    if n > 1 {
        mtm3 = mtm3.unasserted();
    }
    let mut rtm1 = Tracker::new("RTM1");
    let mut rtm2 = Tracker::new("RTM2");
    let mut rtm3 = Tracker::new("RTM3");
    let mut tm = Tracker::new("TM");
    let mut nltm = Tracker::new("NLTM");
    let mut nmtm = Tracker::new("NMTM");
    let mut nrtm = Tracker::new("NRTM");

    for _ in 0..samples {
        let els: Vec<Element> = (0..8).map(|_| Element::random(n, &mut rng)).collect();
        let (a, b, c, d, e, f, x, x2) = (&els[0], &els[1], &els[2], &els[3], &els[4], &els[5], &els[6], &els[7]);
        let al = random_coeff(&mut rng);
        let be = random_coeff(&mut rng);
        let na = |v: &Element| v.norm();
        let comb = |u: &Element, w: &Element| Element::lin_comb(al, u, be, w);
        let comb_scale = |u: &Element, w: &Element| al.norm() * na(u) + be.norm() * na(w);

        // linearity in the module slot
        let s = comb_scale(x, x2) * na(a) * na(b);
        ltm1.record_diff(&p(a, b, &comb(x, x2)), &comb(&p(a, b, x), &p(a, b, x2)), s);
        mtm1.record_diff(&p(a, &comb(x, x2), b), &comb(&p(a, x, b), &p(a, x2, b)), s);
        rtm1.record_diff(&p(&comb(x, x2), a, b), &comb(&p(x, a, b), &p(x2, a, b)), s);

        // bilinearity in the algebra slots: first slot with c, second with d
        let s1 = comb_scale(a, c) * na(b) * na(x);
        let s2 = comb_scale(b, d) * na(a) * na(x);
        ltm2.record_diff(&p(&comb(a, c), b, x), &comb(&p(a, b, x), &p(c, b, x)), s1);
        ltm2.record_diff(&p(a, &comb(b, d), x), &comb(&p(a, b, x), &p(a, d, x)), s2);
        mtm2.record_diff(&p(&comb(a, c), x, b), &comb(&p(a, x, b), &p(c, x, b)), s1);
        mtm2.record_diff(&p(a, x, &comb(b, d)), &comb(&p(a, x, b), &p(a, x, d)), s2);
        rtm2.record_diff(&p(x, &comb(a, c), b), &comb(&p(x, a, b), &p(x, c, b)), s1);
        rtm2.record_diff(&p(x, a, &comb(b, d)), &comb(&p(x, a, b), &p(x, a, d)), s2);

        let s5 = na(a) * na(b) * na(c) * na(d) * na(x);
        // LTM3: [a,b,[c,d,x]] = [[a,b,c],d,x] = [a,[b,c,d],x]
        let l1 = p(a, b, &p(c, d, x));
        let l2 = p(&p(a, b, c), d, x);
        let l3 = p(a, &p(b, c, d), x);
        ltm3.record_diff(&l1, &l2, s5);
        ltm3.record_diff(&l2, &l3, s5);
        // RTM3: [[x,a,b],c,d] = [x,[a,b,c],d] = [x,a,[b,c,d]]
        let r1 = p(&p(x, a, b), c, d);
        let r2 = p(x, &p(a, b, c), d);
        let r3 = p(x, a, &p(b, c, d));
        rtm3.record_diff(&r1, &r2, s5);
        rtm3.record_diff(&r2, &r3, s5);
        // MTM3: [a,[b,[c,x,d],e],f] = [[a,b,c],x,[d,e,f]]
        let s7 = s5 * na(e) * na(f);
        let m1 = p(a, &p(b, &p(c, x, d), e), f);
        let m2 = p(&p(a, b, c), x, &p(d, e, f));
        mtm3.record_diff(&m1, &m2, s7);
        // TM: module element in each of the five slots
        let alg_els = [a, b, c, d];
        for slot in 0..5 {
            let mut seq: Vec<&Element> = Vec::with_capacity(5);
            let mut k = 0;
            for i in 0..5 {
                if i == slot {
                    seq.push(x);
                } else {
                    seq.push(alg_els[k]);
                    k += 1;
                }
            }
            let t1 = p(&p(seq[0], seq[1], seq[2]), seq[3], seq[4]);
            let t2 = p(seq[0], &p(seq[1], seq[2], seq[3]), seq[4]);
            let t3 = p(seq[0], seq[1], &p(seq[2], seq[3], seq[4]));
            tm.record_diff(&t1, &t2, s5);
            tm.record_diff(&t2, &t3, s5);
        }
        // normed module inequalities
        let bound = na(a) * na(b) * na(x);
        nltm.record((p(a, b, x).norm() - bound).max(0.0), bound);
        nmtm.record((p(a, x, b).norm() - bound).max(0.0), bound);
        nrtm.record((p(x, a, b).norm() - bound).max(0.0), bound);
    }

    Ok(AxiomReport {
        samples,
        checks: [ltm1, ltm2, ltm3, mtm1, mtm2, mtm3, rtm1, rtm2, rtm3, tm, nltm, nmtm, nrtm]
            .into_iter()
            .map(Tracker::finish)
            .collect(),
    })
}
