//! End-to-end experiment runners: derivation and homomorphism stability,
//! expanding-direction variants, superstability audits, axiom checks and
//! functional-equation sweeps.
//!
//! Runners return `Err` for configuration and structural problems (the
//! experiment could not be set up) and a report with an [`Outcome`] for
//! everything else.

use std::time::Instant;

use crate::algebra::{check_algebra_axioms, check_module_axioms, Element, ModuleStructure, ProductRule, TernaryAlgebra};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::control::{
    bound_value, closed_form_bound, contraction_factor, fit_theta_kind, phi_certificate, ControlFunction,
    ContractionCertificate,
};
use crate::error::{LabError, Result};
use crate::fixedpoint::{
    extract, picard_diagnostics, rounding_allowance, ExtractionConfig, ExtractionResult, ExtractionStatus, Scaled,
    ROUNDING_FACTOR,
};
use crate::funceq::{
    classical_residual, coeff_c, delta_m, grid_tuples, residual_sup, ClassicalEquation, Permutation3, Residual,
    ResidualKind,
};
use crate::maps::{AlgebraMap, Base, EvalGrid, MapSpec, Perturbation, PerturbationDirection, ScaleDirection, Term};
use crate::report::{
    AxiomSummary, CurveRow, ExperimentReport, ExtractionSummary, FunceqRow, Outcome, ResidualSummary,
    StabilitySection, ThetaSummary,
};
use crate::sampling::{derive_seed, seeded_rng};
use crate::verdict::{Tracker, Verdict};

const PAIR_TAG: u64 = 11;
const TRIPLE_TAG: u64 = 12;
const SECOND_PERTURBATION_TAG: u64 = 13;
const AXIOM_TAG: u64 = 14;
const MODULE_TAG: u64 = 15;
const POLY_TAG: u64 = 16;

/// Dispatches on the configured kind.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.kind {
        ExperimentKind::DerivationStability => run_derivation_stability(cfg),
        ExperimentKind::SigmaHomStability => run_sigma_hom_stability(cfg),
        ExperimentKind::Superstability => run_superstability(cfg),
        ExperimentKind::Axioms => run_axioms(cfg),
        ExperimentKind::FunceqCheck => run_funceq_check(cfg),
        ExperimentKind::Extract => run_extraction(cfg),
    }
}

fn timed(f: impl FnOnce() -> Result<ExperimentReport>) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = f()?;
    report.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn expect_kind(cfg: &ExperimentConfig, kinds: &[ExperimentKind]) -> Result<()> {
    if kinds.contains(&cfg.kind) {
        Ok(())
    } else {
        Err(LabError::Config(format!(
            "runner expects {}, config has kind {}",
            kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(" or "),
            cfg.kind.name()
        )))
    }
}

fn summarize(report: &mut ExperimentReport, pass_text: &str) {
    let failed: Vec<String> = dedup(report.failed_verdicts().map(|v| v.claim.clone()).collect());
    if report.outcome == Outcome::Pass && !failed.is_empty() {
        report.outcome = Outcome::ClaimFailed;
    }
    report.summary = match report.outcome {
        Outcome::Pass => pass_text.to_string(),
        Outcome::ClaimFailed => format!("claim failed: {}", failed.join(", ")),
        Outcome::Divergence => "divergence: extraction did not converge".to_string(),
        Outcome::HypothesisViolated => report.summary.clone(),
    };
}

fn dedup(mut v: Vec<String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    v.retain(|s| {
        if seen.contains(s) {
            false
        } else {
            seen.push(s.clone());
            true
        }
    });
    v
}

fn refs(t: &[Element]) -> Vec<&Element> {
    t.iter().collect()
}

fn residual_name(kind: &ResidualKind) -> &'static str {
    match kind {
        ResidualKind::Delta { .. } => "delta",
        ResidualKind::Derivation { .. } => "derivation",
        ResidualKind::SigmaHom { .. } => "sigma_hom",
    }
}

/// Sweeps `kind` over `tuples`, checking `|r| <= rhs(r, tuple) + allowance`.
fn sweep<M: AlgebraMap + ?Sized>(
    f: &M,
    kind: &ResidualKind,
    tuples: &[Vec<Element>],
    mut tracker: Tracker,
    map_label: &str,
    rhs: impl Fn(&Residual, &[&Element]) -> Result<(f64, f64)>,
) -> Result<(Verdict, ResidualSummary)> {
    let mut summary = ResidualSummary {
        residual: residual_name(kind).to_string(),
        map: map_label.to_string(),
        sup: 0.0,
        sup_relative: 0.0,
        tuples: tuples.len(),
        witness: Vec::new(),
    };
    for t in tuples {
        let pts = refs(t);
        let r = kind.eval(f, &pts)?;
        let n = r.norm();
        if n > summary.sup || summary.witness.is_empty() {
            summary.sup = n;
            summary.witness = t.clone();
        }
        summary.sup_relative = summary.sup_relative.max(r.relative());
        let (bound, allowance) = rhs(&r, &pts)?;
        tracker.observe(n, bound, allowance, &pts);
    }
    Ok((tracker.finish(), summary))
}

/// `|r| <= tol * scale`.
fn exactness<M: AlgebraMap + ?Sized>(
    f: &M,
    kind: &ResidualKind,
    tuples: &[Vec<Element>],
    tol: f64,
    claim: &str,
    map_label: &str,
) -> Result<(Verdict, ResidualSummary)> {
    let inequality = format!("|{} residual| <= {tol:e} * term scale", residual_name(kind));
    sweep(f, kind, tuples, Tracker::new(claim, &inequality), map_label, |r, _| Ok((tol * r.scale, 0.0)))
}

/// `|r| <= c(tuple)`.
fn control_check<M: AlgebraMap + ?Sized>(
    f: &M,
    kind: &ResidualKind,
    tuples: &[Vec<Element>],
    control: &ControlFunction,
    rel_tol: f64,
    claim: &str,
) -> Result<Verdict> {
    let inequality = format!("|{} residual| <= {control}", residual_name(kind));
    let (v, _) = sweep(f, kind, tuples, Tracker::new(claim, &inequality), "f", |r, pts| {
        Ok((
            control.eval(pts)? * (1.0 + rel_tol),
            ROUNDING_FACTOR * f64::EPSILON * r.scale,
        ))
    })?;
    Ok(v)
}

/// Resolves a control: the configured constant, or the fitted one.
fn resolve_control<M: AlgebraMap + ?Sized>(
    f: &M,
    kind: &ResidualKind,
    spec: &crate::config::ControlSpec,
    grid: &EvalGrid,
    budget: usize,
    seed: u64,
    role: &str,
) -> Result<(ControlFunction, ThetaSummary)> {
    if spec.shape.arity() != kind.arity() {
        return Err(LabError::Structural(format!(
            "{role} family {} takes {} arguments, the checked residual takes {}",
            spec.shape.name(),
            spec.shape.arity(),
            kind.arity()
        )));
    }
    match spec.theta {
        Some(theta) => Ok((
            ControlFunction::new(theta, spec.shape)?,
            ThetaSummary {
                family: spec.shape.name().to_string(),
                theta,
                fitted: false,
                tuples: 0,
                witness: Vec::new(),
            },
        )),
        None => {
            let fit = fit_theta_kind(f, kind, &spec.shape, grid, budget, seed)?;
            if !fit.feasible {
                return Err(LabError::Config(format!(
                    "{role} family {} vanishes at {:?} where the {} residual does not",
                    spec.shape.name(),
                    fit.witness,
                    residual_name(kind)
                )));
            }
            Ok((
                ControlFunction::new(fit.theta, spec.shape)?,
                ThetaSummary {
                    family: spec.shape.name().to_string(),
                    theta: fit.theta,
                    fitted: true,
                    tuples: fit.tuples,
                    witness: fit.witness,
                },
            ))
        }
    }
}

fn infeasible(cert: &ContractionCertificate) -> LabError {
    LabError::Config(format!(
        "infeasible control class (L = {}, {}): violated {}",
        cert.l,
        cert.direction,
        cert.violated().join(", ")
    ))
}

fn derivation_catalogue(alg: &TernaryAlgebra, base: &Base, m: u32) -> Result<&'static str> {
    match base {
        Base::Zero => Ok("zero_map"),
        _ if alg.rule() == ProductRule::Trivial && base.degree() == Some(m) => Ok("trivial_product_homogeneous"),
        Base::InnerDerivation { .. } if alg.rule() == ProductRule::Derived && m == 1 => Ok("inner_derivation"),
        _ => Err(LabError::Config(format!(
            "base map is not an exact {m}-derivation from the catalogue \
             (zero map, homogeneous degree-{m} map on a trivial-product algebra, \
             inner derivation with m = 1 on a derived-product algebra)"
        ))),
    }
}

fn hom_catalogue(
    dom: &TernaryAlgebra,
    cod: &TernaryAlgebra,
    base: &Base,
    m: u32,
    sigmas: &[Permutation3],
) -> Result<&'static str> {
    let idempotent_scalar = |c: &Element| {
        let z = c.entries()[0];
        c.dim() == 1 && z.norm() > 0.0 && (z * z * z - z).norm() <= 1e-12 * (1.0 + z.norm().powi(3))
    };
    match base {
        Base::Zero => return Ok("zero_map"),
        _ if dom.rule() == ProductRule::Trivial && cod.rule() == ProductRule::Trivial && base.degree() == Some(m) => {
            return Ok("trivial_product_homogeneous")
        }
        Base::Monomial { coeff, degree } if *degree == m && idempotent_scalar(coeff) => {
            if dom.dim() == 1 && dom.rule() == ProductRule::Derived && cod.rule() == ProductRule::Derived {
                return Ok("commutative_scalar_monomial");
            }
            if m == 1 && dom.rule() == cod.rule() && sigmas.iter().all(|s| *s == Permutation3::identity()) {
                return Ok("identity_map");
            }
        }
        _ => {}
    }
    Err(LabError::Config(format!(
        "base map is not an exact {m}-sigma-homomorphism from the catalogue \
         (zero map, homogeneous degree-{m} map between trivial-product algebras, \
         c x^{m} with c^3 = c on derived-product scalars, identity map with sigma = identity)"
    )))
}

/// The perturbation of the uniqueness check.
fn second_perturbation(cfg: &ExperimentConfig, first: &Perturbation) -> Perturbation {
    if let Some(p) = &cfg.second_perturbation {
        return p.clone();
    }
    match first {
        Perturbation::None => Perturbation::None,
        Perturbation::Radial {
            epsilon,
            exponent,
            direction,
        } => {
            let seed = match direction {
                PerturbationDirection::Fixed { seed } => derive_seed(*seed, SECOND_PERTURBATION_TAG),
                PerturbationDirection::AlongX => derive_seed(cfg.seed, SECOND_PERTURBATION_TAG),
            };
            Perturbation::radial(*epsilon, *exponent, seed)
        }
    }
}

fn extraction_summary<M>(res: &ExtractionResult<M>, depth: u32) -> ExtractionSummary {
    ExtractionSummary {
        status: res.status,
        depth,
        distances: res.distances.clone(),
        terminal_residuals: res.residuals.clone(),
    }
}

struct Setup {
    a: i64,
    m: u32,
    grid: EvalGrid,
    pairs: Vec<Vec<Element>>,
    triples: Vec<Vec<Element>>,
    ext: ExtractionConfig,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.build_grid()?;
        Ok(Setup {
            a: cfg.require_a()?,
            m: cfg.require_m()?,
            pairs: grid_tuples(&grid, 2, cfg.tuple_budget, derive_seed(cfg.seed, PAIR_TAG)),
            triples: grid_tuples(&grid, 3, cfg.tuple_budget, derive_seed(cfg.seed, TRIPLE_TAG)),
            grid,
            ext: cfg.extraction()?,
        })
    }
}

/// One pass of the stability pipeline for a fixed identity.
fn stability_section(
    cfg: &ExperimentConfig,
    s: &Setup,
    f: &MapSpec,
    identity: &ResidualKind,
    label: &str,
    verdicts: &mut Vec<Verdict>,
) -> Result<(StabilitySection, ExtractionStatus)> {
    let tol = &cfg.tolerances;
    let (a, m, dir) = (s.a, s.m, cfg.direction);
    let delta = ResidualKind::Delta { a, m };
    let budget = cfg.tuple_budget;
    let mut local = Vec::new();

    let (phi, theta_phi) = resolve_control(
        f,
        &delta,
        &cfg.require_phi()?,
        &s.grid,
        budget,
        derive_seed(cfg.seed, PAIR_TAG),
        "phi",
    )?;
    let (psi, theta_psi) = resolve_control(
        f,
        identity,
        &cfg.require_psi()?,
        &s.grid,
        budget,
        derive_seed(cfg.seed, TRIPLE_TAG),
        "psi",
    )?;
    let cert = contraction_factor(&phi, &psi, a, m, dir)?;
    if !cert.feasible {
        return Err(infeasible(&cert));
    }

    let base = f.base_map();
    let (v, _) = exactness(&base, &delta, &s.pairs, tol.exact, "base_exact", "base")?;
    local.push(v);
    let (v, _) = exactness(&base, identity, &s.triples, tol.exact, "base_exact", "base")?;
    local.push(v);

    local.push(control_check(f, &delta, &s.pairs, &phi, tol.bound_rel, "delta_control")?);
    let identity_claim = format!("{}_control", residual_name(identity));
    local.push(control_check(f, identity, &s.triples, &psi, tol.bound_rel, &identity_claim)?);

    let extraction = extract(f, &s.ext, &s.grid)?;
    let status = extraction.status;
    local.push(Verdict::flag(
        "extraction_converged",
        "distances between iterates shrink and the limit residual vanishes",
        status == ExtractionStatus::Converged,
        Vec::new(),
        Some(format!("status {status:?}, terminal relative residual {:e}", extraction.terminal_residual())),
    ));
    let picard = picard_diagnostics(f, &phi, &cert, &s.ext, &s.grid)?;
    local.extend(picard.verdicts.iter().cloned());

    let limit = &extraction.limit;
    let mut residuals = Vec::new();
    let (_, before) = exactness(f, &delta, &s.pairs, tol.residual, "delta_before", "f")?;
    residuals.push(before);
    let (_, before) = exactness(f, identity, &s.triples, tol.residual, "identity_before", "f")?;
    residuals.push(before);
    let (v, after) = exactness(limit, &delta, &s.pairs, tol.residual, "limit_delta_residual", "limit")?;
    local.push(v);
    residuals.push(after);
    let claim = format!("limit_{}_residual", residual_name(identity));
    let (v, after) = exactness(limit, identity, &s.triples, tol.residual, &claim, "limit")?;
    local.push(v);
    residuals.push(after);

    // pointwise error against the stability bound
    let bound_text = match dir {
        ScaleDirection::Shrink => "|f(x) - F(x)| <= L / (2|a|^m (1 - L)) phi(x, 0)",
        ScaleDirection::Expand => "|f(x) - F(x)| <= 1 / (2|a|^m (1 - L)) phi(x, 0)",
    };
    let mut bound_check = Tracker::new("hyers_ulam_bound", bound_text);
    let closed_available = cert.closed_form_feasible() && closed_form_bound(&phi, a, m, 1.0, dir).is_some();
    let mut closed_check = Tracker::new("closed_form_bound", match dir {
        ScaleDirection::Shrink => "|f(x) - F(x)| <= theta |x|^r / (2(|a|^r - |a|^m))",
        ScaleDirection::Expand => "|f(x) - F(x)| <= (delta + theta |x|^r) / (2(|a|^m - |a|^r))",
    });
    let mut consistency = Tracker::new(
        "closed_form_consistency",
        "|general bound - closed form| <= 1e-12 * closed form",
    );
    let mut base_check = Tracker::new("base_agreement", "|F(x) - E(x)| <= closed-form decay of the perturbation");
    let second = MapSpec::new(f.base.clone(), second_perturbation(cfg, &f.perturbation));
    let limit2 = Scaled {
        map: &second,
        a,
        m,
        n: cfg.depth,
        direction: dir,
    };
    let mut unique = Tracker::new(
        "uniqueness",
        "|F1(x) - F2(x)| <= sum of closed-form decays of both perturbations",
    );
    let mut curve: Vec<CurveRow> = (0..=s.grid.shells)
        .map(|j| CurveRow {
            radius: s.grid.radius(j),
            measured_error: 0.0,
            bound_value: 0.0,
            ratio: 0.0,
        })
        .collect();
    for p in s.grid.points() {
        let x = &p.x;
        let xn = x.norm();
        let fx = f.eval(x)?;
        let lx = limit.eval(x)?;
        let err = (&fx - &lx).norm();
        let allowance = rounding_allowance(&fx, &lx);
        let bound = bound_value(&phi, cert.l, a, m, xn, dir)?;
        bound_check.observe(err, bound * (1.0 + tol.bound_rel), allowance, &[x]);
        if closed_available {
            let closed = closed_form_bound(&phi, a, m, xn, dir).expect("closed form available");
            closed_check.observe(err, closed * (1.0 + tol.bound_rel), allowance, &[x]);
            consistency.observe((bound - closed).abs(), 1e-12 * closed, 0.0, &[x]);
        }
        let row = &mut curve[p.shell];
        let ratio = if bound > 0.0 {
            err / bound
        } else if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio >= row.ratio {
            row.ratio = ratio;
            row.measured_error = err;
            row.bound_value = bound;
        }

        let ex = base.eval(x)?;
        let decay = f.perturbation.scaled_norm(xn, a, m, cfg.depth, dir);
        base_check.observe((&lx - &ex).norm(), decay * (1.0 + tol.bound_rel), rounding_allowance(&lx, &ex), &[x]);

        let l2x = limit2.eval(x)?;
        let decay2 = second.perturbation.scaled_norm(xn, a, m, cfg.depth, dir);
        unique.observe(
            (&lx - &l2x).norm(),
            (decay + decay2) * (1.0 + tol.bound_rel),
            rounding_allowance(&lx, &l2x),
            &[x],
        );
    }
    local.push(bound_check.finish());
    if closed_available {
        local.push(closed_check.finish());
        local.push(consistency.finish());
    }
    local.push(base_check.finish());
    local.push(unique.finish());

    if !label.is_empty() {
        for v in &mut local {
            v.note = Some(match v.note.take() {
                Some(n) => format!("{label}; {n}"),
                None => label.to_string(),
            });
        }
    }
    verdicts.extend(local);
    Ok((
        StabilitySection {
            label: label.to_string(),
            theta_phi,
            theta_psi,
            certificate: cert,
            extraction: extraction_summary(&extraction, cfg.depth),
            picard,
            residuals,
            curve,
        },
        status,
    ))
}

fn finish_stability(report: &mut ExperimentReport, statuses: &[ExtractionStatus]) {
    if statuses.iter().any(|s| *s != ExtractionStatus::Converged) {
        report.outcome = Outcome::Divergence;
    }
    let n = report.verdicts.len();
    summarize(report, &format!("pass: all {n} verdicts hold"));
}

/// Derivation stability: fit the controls, certify contraction, extract the
/// limit, and check it against the stability bound. Handles both scaling
/// directions.
pub fn run_derivation_stability(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::DerivationStability])?;
        let s = Setup::new(cfg)?;
        let alg = cfg.algebra.build()?;
        let f = cfg.require_map()?;
        let catalogue = derivation_catalogue(&alg, &f.base, s.m)?;
        let identity = ResidualKind::Derivation { m: s.m, algebra: alg };
        let mut report = ExperimentReport::new(cfg);
        report.catalogue = Some(catalogue.to_string());
        let (section, status) = stability_section(cfg, &s, &f, &identity, "", &mut report.verdicts)?;
        report.sections.push(section);
        finish_stability(&mut report, &[status]);
        Ok(report)
    })
}

/// Homomorphism stability for the configured permutation, or for all six.
pub fn run_sigma_hom_stability(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::SigmaHomStability])?;
        let s = Setup::new(cfg)?;
        let dom = cfg.algebra.build()?;
        let cod = cfg.codomain.as_ref().unwrap_or(&cfg.algebra).build()?;
        let f = cfg.require_map()?;
        let sigmas: Vec<Permutation3> = if cfg.all_permutations {
            Permutation3::all().to_vec()
        } else {
            vec![cfg.sigma.expect("validated")]
        };
        let catalogue = hom_catalogue(&dom, &cod, &f.base, s.m, &sigmas)?;
        let mut report = ExperimentReport::new(cfg);
        report.catalogue = Some(catalogue.to_string());
        let mut statuses = Vec::new();
        for sigma in sigmas {
            let identity = ResidualKind::SigmaHom {
                sigma,
                domain: dom,
                codomain: cod,
            };
            let label = format!("sigma = {sigma}");
            let (section, status) = stability_section(cfg, &s, &f, &identity, &label, &mut report.verdicts)?;
            report.sections.push(section);
            statuses.push(status);
        }
        finish_stability(&mut report, &statuses);
        Ok(report)
    })
}

/// The expanding-direction pipeline `F(x) = lim f(a^n x) / a^(mn)` with the
/// bound `1 / (2|a|^m (1 - L)) phi(x, 0)`.
pub fn run_remark_variants(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.direction != ScaleDirection::Expand {
        return Err(LabError::Config("expanding variants need direction = expand".into()));
    }
    match cfg.kind {
        ExperimentKind::DerivationStability => run_derivation_stability(cfg),
        ExperimentKind::SigmaHomStability => run_sigma_hom_stability(cfg),
        other => Err(LabError::Config(format!(
            "expanding variants apply to stability experiments, not {}",
            other.name()
        ))),
    }
}

pub const SUPERSTABLE_SUMMARY: &str = "exact: superstability hypotheses satisfied and f is an m-derivation";
pub const HYPOTHESIS_SUMMARY: &str =
    "hypothesis violated: Delta_m f(x, 0) is nonzero although the control vanishes at the origin";

/// Superstability audit of the configured map.
pub fn run_superstability(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, &[ExperimentKind::Superstability])?;
    let f = cfg.require_map()?;
    audit_superstability(&f, cfg)
}

/// Superstability audit of an arbitrary map `f` under the parameters of
/// `cfg` (its `map` field is ignored).
///
/// 1. Hypothesis audit: a control with `phi(0, 0) = 0` forces
///    `Delta_m f(x, 0) = 2 f(ax) - 2 a^m f(x)` to vanish; any excess is a
///    violation, reported with its witness `(x, 0)`. With a configured
///    `theta`, `|Delta_m f(x, y)| <= phi(0, y)` is checked as well.
/// 2. Homogeneity chain `f(a^n x) = a^(mn) f(x)` for `n <= N`.
/// 3. Rescaled residuals `|a|^(mn) Delta_m f(x/a^n, y/a^n)` and the
///    rescaled derivation residual vanish for every `n <= N`.
pub fn audit_superstability<M: AlgebraMap + ?Sized>(f: &M, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::Superstability])?;
        let s = Setup::new(cfg)?;
        let (a, m) = (s.a, s.m);
        let tol = &cfg.tolerances;
        let phi_spec = cfg.require_phi()?;
        let phi = phi_spec.with_theta_or_unit()?;
        if phi.arity() != 2 {
            return Err(LabError::Structural("superstability control must be binary".into()));
        }
        if phi.eval_norms(&[0.0, 0.0])? != 0.0 {
            return Err(LabError::Config(format!(
                "superstability needs a control vanishing at the origin, {phi} does not"
            )));
        }
        let alg = cfg.algebra.build()?;
        let mut report = ExperimentReport::new(cfg);
        if let Some(psi_spec) = &cfg.psi {
            let psi = psi_spec.with_theta_or_unit()?;
            let cert = contraction_factor(&phi, &psi, a, m, ScaleDirection::Shrink)?;
            if !cert.feasible {
                return Err(infeasible(&cert));
            }
            report.verdicts.push(Verdict::flag(
                "control_contraction",
                "0 < L < 1",
                true,
                Vec::new(),
                Some(format!("L = {}", cert.l)),
            ));
        }
        let delta = ResidualKind::Delta { a, m };
        let zero = alg.zero();

        // stage 1
        let mut vanishing = Tracker::new("vanishing_hypothesis", "|Delta_m f(x, 0)| <= phi(0, 0) = 0");
        for p in s.grid.points() {
            let r = delta_m(f, &p.x, &zero, a, m)?;
            vanishing.observe(r.norm(), tol.homogeneity * r.scale, 0.0, &[&p.x, &zero]);
        }
        let stage1 = vanishing.finish();
        let mut hypothesis_ok = stage1.passed;
        report.verdicts.push(stage1);
        if phi_spec.theta.is_some() {
            let inequality = format!("|Delta_m f(x, y)| <= phi(0, y), phi = {phi}");
            let (v, _) = sweep(f, &delta, &s.pairs, Tracker::new("control_hypothesis", &inequality), "f", |r, pts| {
                let bound = phi.eval_norms(&[0.0, pts[1].norm()])?;
                Ok((bound * (1.0 + tol.bound_rel), tol.homogeneity * r.scale))
            })?;
            hypothesis_ok &= v.passed;
            report.verdicts.push(v);
        }
        if !hypothesis_ok {
            report.outcome = Outcome::HypothesisViolated;
            report.summary = HYPOTHESIS_SUMMARY.to_string();
            return Ok(report);
        }

        // stage 2
        let mut chain = Tracker::new("homogeneity_chain", "|f(a^n x) - a^(mn) f(x)| <= tol * scale, n <= N");
        let af = a as f64;
        for p in s.grid.points() {
            let fx = f.eval(&p.x)?;
            for n in 1..=cfg.depth {
                let xn = p.x.scale_real(af.powi(n as i32));
                let u = f.eval(&xn)?;
                let v = fx.scale_real(af.powi((m * n) as i32));
                let scale = u.norm().max(v.norm());
                chain.observe((&u - &v).norm(), tol.homogeneity * scale, 0.0, &[&xn]);
            }
        }
        report.verdicts.push(chain.finish());

        // stage 3
        let mut rescaled = Tracker::new(
            "rescaled_delta_residual",
            "|a|^(mn) |Delta_m f(x/a^n, y/a^n)| <= tol * scale, n <= N",
        );
        let mut rescaled_d = Tracker::new(
            "rescaled_derivation_residual",
            "|a|^(3mn) |D f(x/a^n, y/a^n, z/a^n)| <= tol * scale, n <= N",
        );
        let derivation = ResidualKind::Derivation { m, algebra: alg };
        for n in 0..=cfg.depth {
            let shrink = af.powi(-(n as i32));
            let lift = af.abs().powi((m * n) as i32);
            for t in &s.pairs {
                let (x, y) = (t[0].scale_real(shrink), t[1].scale_real(shrink));
                let r = delta_m(f, &x, &y, a, m)?;
                rescaled.observe(lift * r.norm(), tol.exact * lift * r.scale, 0.0, &[&x, &y]);
            }
            if alg.supports_powers() {
                let lift3 = lift.powi(3);
                for t in &s.triples {
                    let pts: Vec<Element> = t.iter().map(|e| e.scale_real(shrink)).collect();
                    let r = derivation.eval(f, &refs(&pts))?;
                    rescaled_d.observe(lift3 * r.norm(), tol.exact * lift3 * r.scale, 0.0, &refs(&pts));
                }
            }
        }
        report.verdicts.push(rescaled.finish());
        if alg.supports_powers() {
            report.verdicts.push(rescaled_d.finish());
        }
        summarize(&mut report, SUPERSTABLE_SUMMARY);
        Ok(report)
    })
}

/// Algebra and module axiom reports for the configured algebra.
pub fn run_axioms(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::Axioms])?;
        cfg.validate()?;
        let alg = cfg.algebra.build()?;
        let tol = cfg.tolerances.axioms;
        let algebra = check_algebra_axioms(&alg, cfg.samples, derive_seed(cfg.seed, AXIOM_TAG))?;
        let module = check_module_axioms(&ModuleStructure::over(alg), cfg.samples, derive_seed(cfg.seed, MODULE_TAG))?;
        let mut report = ExperimentReport::new(cfg);
        for (group, rep) in [("algebra", &algebra), ("module", &module)] {
            for c in rep.checks.iter().filter(|c| c.asserted) {
                let mut t = Tracker::new(&format!("{group}:{}", c.name), "relative violation <= tolerance");
                t.observe(c.max_relative, tol, 0.0, &[]);
                report.verdicts.push(t.finish());
            }
        }
        report.axioms = Some(AxiomSummary { algebra, module });
        summarize(&mut report, "pass: every asserted axiom holds");
        Ok(report)
    })
}

fn random_polynomial<R: rand::Rng>(rng: &mut R) -> MapSpec {
    let terms = (1..=4)
        .map(|degree| Term {
            coeff: Element::random(1, rng),
            degree,
        })
        .collect();
    MapSpec::exact(Base::Polynomial { terms })
}

/// Monomial residuals of the unified equation across degrees, scales and
/// coefficients; the classical cubic and quartic specializations; and the
/// coefficient identity.
pub fn run_funceq_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::FunceqCheck])?;
        cfg.validate()?;
        let sweep_cfg = cfg.sweep.clone().unwrap_or_default();
        let tol = cfg.tolerances.exact;
        let mut report = ExperimentReport::new(cfg);

        let mut monomial = Tracker::new("monomial_solution", "|Delta_m(c x^m)(x, y)| <= tol * term scale");
        for &a in &sweep_cfg.scales {
            let grid = EvalGrid::new(1, cfg.grid.rho, cfg.grid.shells, a, cfg.grid.directions, cfg.grid_seed())?;
            let pairs = grid_tuples(&grid, 2, cfg.tuple_budget, derive_seed(cfg.seed, PAIR_TAG));
            for &m in &sweep_cfg.degrees {
                for c in &sweep_cfg.coeffs {
                    let f = MapSpec::monomial(c.clone(), m);
                    let kind = ResidualKind::Delta { a, m };
                    let sup = residual_sup(&kind, &f, &grid, cfg.tuple_budget, derive_seed(cfg.seed, PAIR_TAG))?;
                    for t in &pairs {
                        let r = delta_m(&f, &t[0], &t[1], a, m)?;
                        monomial.observe(r.norm(), tol * r.scale, 0.0, &refs(t));
                    }
                    report.funceq.push(FunceqRow {
                        m,
                        a,
                        coeff: c.clone(),
                        sup: sup.sup,
                        sup_relative: sup.sup_relative,
                        witness: sup.witness,
                    });
                }
            }
        }
        report.verdicts.push(monomial.finish());

        let mut classical = Tracker::new(
            "classical_specialization",
            "|Delta_3 - cubic residual|, |Delta_4 - quartic residual| <= 1e-12 * term scale at a = 2",
        );
        let mut rng = seeded_rng(derive_seed(cfg.seed, POLY_TAG));
        for _ in 0..sweep_cfg.polynomial_maps {
            let f = random_polynomial(&mut rng);
            for _ in 0..sweep_cfg.pairs {
                let x = Element::random(1, &mut rng);
                let y = Element::random(1, &mut rng);
                for (m, eq) in [(3, ClassicalEquation::Cubic), (4, ClassicalEquation::Quartic)] {
                    let d = delta_m(&f, &x, &y, 2, m)?;
                    let c = classical_residual(eq, &f, &x, &y)?;
                    let scale = d.scale.max(c.scale);
                    classical.observe((&d.value - &c.value).norm(), 1e-12 * scale, 0.0, &[&x, &y]);
                }
            }
        }
        report.verdicts.push(classical.finish());

        let expected = [0i64, 0, 0, -1];
        let exact = (1..=4u32).all(|m| coeff_c(m).map(|c| c == expected[m as usize - 1].into()).unwrap_or(false));
        report.verdicts.push(Verdict::flag(
            "coefficient_identity",
            "c_m = (0, 0, 0, -1) for m = 1..4",
            exact,
            Vec::new(),
            None,
        ));
        summarize(&mut report, "pass: monomials solve the unified equation and the classical cases agree");
        Ok(report)
    })
}

/// Single extraction with convergence diagnostics. Picard checks run when
/// `phi` is configured.
pub fn run_extraction(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    timed(|| {
        expect_kind(cfg, &[ExperimentKind::Extract])?;
        let s = Setup::new(cfg)?;
        let (a, m) = (s.a, s.m);
        let f = cfg.require_map()?;
        let mut report = ExperimentReport::new(cfg);
        let extraction = extract(&f, &s.ext, &s.grid)?;
        report.verdicts.push(Verdict::flag(
            "extraction_converged",
            "distances between iterates shrink and the limit residual vanishes",
            extraction.status == ExtractionStatus::Converged,
            Vec::new(),
            Some(format!("status {:?}", extraction.status)),
        ));
        let delta = ResidualKind::Delta { a, m };
        let (_, before) = exactness(&f, &delta, &s.pairs, cfg.tolerances.residual, "delta_before", "f")?;
        let (_, after) = exactness(&extraction.limit, &delta, &s.pairs, cfg.tolerances.residual, "delta_after", "limit")?;
        report.residuals = vec![before, after];
        if let Some(phi_spec) = &cfg.phi {
            let seed = derive_seed(cfg.seed, PAIR_TAG);
            let (phi, _) = resolve_control(&f, &delta, phi_spec, &s.grid, cfg.tuple_budget, seed, "phi")?;
            let cert = match &cfg.psi {
                Some(psi_spec) => contraction_factor(&phi, &psi_spec.with_theta_or_unit()?, a, m, cfg.direction)?,
                None => phi_certificate(&phi, a, m, cfg.direction)?,
            };
            if !cert.feasible {
                return Err(infeasible(&cert));
            }
            let picard = picard_diagnostics(&f, &phi, &cert, &s.ext, &s.grid)?;
            report.verdicts.extend(picard.verdicts.iter().cloned());
            report.picard = Some(picard);
        }
        if extraction.status != ExtractionStatus::Converged {
            report.outcome = Outcome::Divergence;
        }
        report.extraction = Some(extraction_summary(&extraction, cfg.depth));
        summarize(&mut report, "pass: extraction converged");
        Ok(report)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ControlSpec;
    use crate::control::Shape;

    #[test]
    fn derivation_reference_passes() {
        let rep = run_derivation_stability(&ExperimentConfig::reference_derivation()).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass, "{:#?}", rep.failed_verdicts().collect::<Vec<_>>());
        assert_eq!(rep.catalogue.as_deref(), Some("trivial_product_homogeneous"));
        assert!(rep.max_curve_ratio() <= 1.0);
        assert!(rep.verdict("closed_form_bound").unwrap().passed);
    }

    #[test]
    fn unperturbed_run_is_exact() {
        let mut cfg = ExperimentConfig::reference_derivation();
        cfg.map = Some(MapSpec::monomial(Element::real(2.0), 4));
        let rep = run_derivation_stability(&cfg).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass);
        for r in &rep.sections[0].residuals {
            assert!(r.sup_relative <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn inner_derivation_on_matrices() {
        let mut cfg = ExperimentConfig::reference_derivation();
        cfg.algebra = crate::config::AlgebraSpec {
            dim: 2,
            rule: ProductRule::Derived,
            mutation: None,
        };
        let c = Element::random(2, &mut seeded_rng(5));
        cfg.map = Some(MapSpec::exact(Base::InnerDerivation { coeff: c }).with_perturbation(Perturbation::radial(1e-3, 3.0, 2)));
        cfg.m = Some(1);
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 3.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 2.0 }));
        cfg.tuple_budget = 2000;
        let rep = run_derivation_stability(&cfg).unwrap();
        assert_eq!(rep.catalogue.as_deref(), Some("inner_derivation"));
        let limit = rep.sections[0].residuals.iter().find(|r| r.residual == "derivation" && r.map == "limit").unwrap();
        assert!(limit.sup_relative <= 1e-9, "{limit:?}");
        assert_eq!(rep.outcome, Outcome::Pass, "{:#?}", rep.failed_verdicts().collect::<Vec<_>>());
    }

    #[test]
    fn infeasible_controls_are_config_errors() {
        let mut cfg = ExperimentConfig::reference_derivation();
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 4.0 }));
        let err = run_derivation_stability(&cfg).unwrap_err();
        assert!(matches!(err, LabError::Config(ref s) if s.contains("p > m")), "{err}");

        let mut cfg = ExperimentConfig::reference_expand();
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 3.0 }));
        let err = run_remark_variants(&cfg).unwrap_err();
        assert!(matches!(err, LabError::Config(ref s) if s.contains("0 < r < m")), "{err}");
    }

    #[test]
    fn base_outside_catalogue_rejected() {
        let mut cfg = ExperimentConfig::reference_derivation();
        cfg.algebra.rule = ProductRule::Derived;
        assert!(matches!(run_derivation_stability(&cfg), Err(LabError::Config(_))));
    }

    #[test]
    fn identity_hom_with_identity_permutation() {
        let mut cfg = ExperimentConfig::reference_sigma_hom();
        cfg.all_permutations = false;
        cfg.sigma = Some(Permutation3::identity());
        cfg.m = Some(1);
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 1));
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 2.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 2.0 }));
        let rep = run_sigma_hom_stability(&cfg).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass);
        for r in &rep.sections[0].residuals {
            assert!(r.sup_relative <= 4.0 * f64::EPSILON, "{r:?}");
        }
    }

    #[test]
    fn all_permutations_on_commuting_scalars_vanish_alike() {
        let mut cfg = ExperimentConfig::reference_sigma_hom();
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 2));
        cfg.m = Some(2);
        cfg.phi = Some(ControlSpec::fitted(Shape::PowerSum { r: 3.0 }));
        cfg.psi = Some(ControlSpec::fitted(Shape::PowerProduct { p: 3.0 }));
        let rep = run_sigma_hom_stability(&cfg).unwrap();
        assert_eq!(rep.sections.len(), 6);
        let sups: Vec<f64> = rep
            .sections
            .iter()
            .map(|s| s.residuals.iter().find(|r| r.residual == "sigma_hom" && r.map == "f").unwrap().sup_relative)
            .collect();
        // products of commuting scalars agree up to the rounding of the multiplication order
        assert!(sups.iter().all(|s| *s <= 4.0 * f64::EPSILON), "{sups:?}");
    }

    #[test]
    fn expand_with_constant_term_and_no_perturbation() {
        let mut cfg = ExperimentConfig::reference_expand();
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 3));
        cfg.phi = Some(ControlSpec {
            shape: Shape::ConstPlusPower { delta: 0.5, r: 1.0 },
            theta: Some(0.0),
        });
        let rep = run_remark_variants(&cfg).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass, "{:#?}", rep.failed_verdicts().collect::<Vec<_>>());
        assert!(rep.sections[0].curve.iter().all(|r| r.measured_error == 0.0 && r.bound_value > 0.0));
    }

    #[test]
    fn superstability_outcomes() {
        let rep = run_superstability(&ExperimentConfig::reference_superstability(0.0)).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass, "{:#?}", rep.failed_verdicts().collect::<Vec<_>>());
        assert_eq!(rep.summary, SUPERSTABLE_SUMMARY);
        let rep = run_superstability(&ExperimentConfig::reference_superstability(1e-3)).unwrap();
        assert_eq!(rep.outcome, Outcome::HypothesisViolated);
        assert_eq!(rep.exit_code(), 3);
        let w = &rep.verdict("vanishing_hypothesis").unwrap().witness;
        assert!(w[1].is_zero());
    }

    #[test]
    fn axioms_and_mutation() {
        let rep = run_axioms(&ExperimentConfig::reference_axioms(2)).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass);
        let mut cfg = ExperimentConfig::reference_axioms(2);
        cfg.algebra.mutation = Some(crate::algebra::Mutation::ImaginarySignFlip);
        let rep = run_axioms(&cfg).unwrap();
        assert_eq!(rep.outcome, Outcome::ClaimFailed);
    }

    #[test]
    fn funceq_default_passes() {
        let rep = run_funceq_check(&ExperimentConfig::reference_funceq()).unwrap();
        assert_eq!(rep.outcome, Outcome::Pass, "{:#?}", rep.failed_verdicts().collect::<Vec<_>>());
        assert_eq!(rep.funceq.len(), 4 * 3 * 3);
    }

    #[test]
    fn extraction_runner_flags_divergence() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Extract);
        cfg.map = Some(MapSpec::monomial(Element::real(1.0), 3).with_perturbation(Perturbation::radial(1e-3, 3.0, 1)));
        cfg.m = Some(3);
        cfg.a = Some(2);
        let rep = run_extraction(&cfg).unwrap();
        assert_eq!(rep.outcome, Outcome::Divergence);
        assert_eq!(rep.exit_code(), 4);
    }
}
