//! The corrector operator `T`, lazy extraction of its fixed point, the
//! generalized metric `d_phi`, and Picard convergence diagnostics.
//!
//! `T g(x) = a^m g(x / a)` when shrinking and `a^-m g(a x)` when expanding.
//! `T^n` has the closed form of [`evaluate_scaled`], so the extracted limit
//! is a view over the original map rather than a table of values.

use serde::{Deserialize, Serialize};

use crate::algebra::Element;
use crate::control::{ContractionCertificate, ControlFunction};
use crate::error::{LabError, Result};
use crate::funceq::{check_degree, residual_sup, ResidualKind, DEFAULT_TUPLE_BUDGET};
use crate::maps::{check_scale, evaluate_scaled, AlgebraMap, EvalGrid, ScaleDirection, MAX_DEPTH};
use crate::verdict::{Tracker, Verdict};

/// Multiple of machine epsilon granted per unit of operand magnitude when a
/// computed difference is compared against an exact inequality.
pub const ROUNDING_FACTOR: f64 = 64.0;

/// Differences below this multiple of the rounding allowance are treated as
/// noise when measuring geometric rates.
pub const SIGNIFICANCE: f64 = 100.0;

/// Rounding allowance for `|u - v|` computed from `u` and `v`.
pub fn rounding_allowance(u: &Element, v: &Element) -> f64 {
    ROUNDING_FACTOR * f64::EPSILON * (u.norm() + v.norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub a: i64,
    pub m: u32,
    /// Iteration depth `N`.
    pub depth: u32,
    pub direction: ScaleDirection,
    /// Relative closed-form tolerance.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Relative tolerance for measured geometric ratios.
    #[serde(default = "default_ratio_tol")]
    pub ratio_tol: f64,
    /// Terminal relative `Delta_m` residual accepted as converged.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    /// Number of trailing iterates inspected for stagnation.
    #[serde(default = "default_window")]
    pub window: u32,
}

fn default_rel_tol() -> f64 {
    1e-9
}

fn default_ratio_tol() -> f64 {
    0.10
}

fn default_residual_tol() -> f64 {
    1e-9
}

fn default_window() -> u32 {
    5
}

impl ExtractionConfig {
    pub fn new(a: i64, m: u32, depth: u32, direction: ScaleDirection) -> Result<Self> {
        let cfg = ExtractionConfig {
            a,
            m,
            depth,
            direction,
            rel_tol: default_rel_tol(),
            ratio_tol: default_ratio_tol(),
            residual_tol: default_residual_tol(),
            window: default_window(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.a)?;
        check_degree(self.m)?;
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(LabError::Config(format!("depth N = {} outside 1..={MAX_DEPTH}", self.depth)));
        }
        if self.window == 0 {
            return Err(LabError::Config("stagnation window must be positive".into()));
        }
        for (name, v) in [
            ("rel_tol", self.rel_tol),
            ("ratio_tol", self.ratio_tol),
            ("residual_tol", self.residual_tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LabError::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `T^n g` as a view over `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaled<M> {
    pub map: M,
    pub a: i64,
    pub m: u32,
    pub n: u32,
    pub direction: ScaleDirection,
}

impl<M> Scaled<M> {
    /// `T^k` applied on top, folded into the closed form.
    pub fn iterate(mut self, k: u32) -> Self {
        self.n += k;
        self
    }
}

impl<M: AlgebraMap> AlgebraMap for Scaled<M> {
    fn eval(&self, x: &Element) -> Result<Element> {
        evaluate_scaled(&self.map, x, self.a, self.m, self.n, self.direction)
    }
}

/// One application of `T`.
pub fn apply_t<M: AlgebraMap>(g: M, a: i64, m: u32, direction: ScaleDirection) -> Result<Scaled<M>> {
    check_scale(a)?;
    check_degree(m)?;
    Ok(Scaled {
        map: g,
        a,
        m,
        n: 1,
        direction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Converged,
    /// Distances stopped shrinking without the residual vanishing.
    Stagnated,
    /// Distances grew or became non-finite.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub n: u32,
    /// Largest relative `Delta_m` residual of `T^n f` on the grid.
    pub relative: f64,
    pub absolute: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionResult<M> {
    /// The extracted map `T^N f`.
    pub limit: Scaled<M>,
    /// `max_x |T^n f(x) - T^(n+1) f(x)|` over the grid for `n = 0..=N`.
    pub distances: Vec<f64>,
    /// Rounding allowance of each distance.
    pub noise: Vec<f64>,
    /// Terminal `Delta_m` residuals over the last `window + 1` iterates.
    pub residuals: Vec<ResidualSample>,
    pub status: ExtractionStatus,
}

impl<M> ExtractionResult<M> {
    pub fn terminal_residual(&self) -> f64 {
        self.residuals.last().map_or(0.0, |r| r.relative)
    }
}

/// Realizes the limit `T^N f` and records the distances between successive
/// iterates as a convergence witness.
pub fn extract<M: AlgebraMap + Clone>(f: &M, cfg: &ExtractionConfig, grid: &EvalGrid) -> Result<ExtractionResult<M>> {
    cfg.validate()?;
    let (a, m, dir) = (cfg.a, cfg.m, cfg.direction);
    let depth = cfg.depth;
    let mut distances = Vec::with_capacity(depth as usize + 1);
    let mut noise = Vec::with_capacity(depth as usize + 1);
    let mut non_finite = false;
    let mut prev: Vec<Option<Element>> = grid
        .points()
        .iter()
        .map(|p| evaluate_scaled(f, &p.x, a, m, 0, dir).ok())
        .collect();
    for n in 0..=depth {
        let next: Vec<Option<Element>> = grid
            .points()
            .iter()
            .map(|p| evaluate_scaled(f, &p.x, a, m, n + 1, dir).ok())
            .collect();
        let (mut d, mut eta) = (0.0f64, 0.0f64);
        for (u, v) in prev.iter().zip(&next) {
            match (u, v) {
                (Some(u), Some(v)) => {
                    d = d.max((u - v).norm());
                    eta = eta.max(rounding_allowance(u, v));
                }
                _ => non_finite = true,
            }
        }
        distances.push(d);
        noise.push(eta);
        prev = next;
    }

    let kind = ResidualKind::Delta { a, m };
    let first = depth.saturating_sub(cfg.window);
    let mut residuals = Vec::new();
    for n in first..=depth {
        let view = Scaled {
            map: f,
            a,
            m,
            n,
            direction: dir,
        };
        match residual_sup(&kind, &view, grid, DEFAULT_TUPLE_BUDGET, 0) {
            Ok(s) => residuals.push(ResidualSample {
                n,
                relative: s.sup_relative,
                absolute: s.sup,
            }),
            Err(LabError::NonFinite) => non_finite = true,
            Err(e) => return Err(e),
        }
    }

    let status = classify(&distances, &noise, &residuals, cfg, non_finite);
    Ok(ExtractionResult {
        limit: Scaled {
            map: f.clone(),
            a,
            m,
            n: depth,
            direction: dir,
        },
        distances,
        noise,
        residuals,
        status,
    })
}

fn classify(
    distances: &[f64],
    noise: &[f64],
    residuals: &[ResidualSample],
    cfg: &ExtractionConfig,
    non_finite: bool,
) -> ExtractionStatus {
    if non_finite || distances.iter().any(|d| !d.is_finite()) {
        return ExtractionStatus::Diverged;
    }
    let last = distances.len() - 1;
    let start = last.saturating_sub(cfg.window as usize);
    let floor = |i: usize| SIGNIFICANCE * noise[i];
    if distances[last] > floor(last) && distances[last] > 2.0 * distances[start] {
        return ExtractionStatus::Diverged;
    }
    let terminal = residuals.last().map_or(0.0, |r| r.relative);
    if terminal <= cfg.residual_tol {
        return ExtractionStatus::Converged;
    }
    let distances_shrink = (start..last).all(|i| distances[i + 1] < distances[i] || distances[i + 1] <= floor(i + 1));
    let residuals_shrink = residuals.windows(2).all(|w| w[1].relative < w[0].relative);
    if distances_shrink && residuals_shrink {
        ExtractionStatus::Converged
    } else {
        ExtractionStatus::Stagnated
    }
}

/// Grid estimate of `d_phi(g, h) = inf { K : |g(x) - h(x)| <= K phi(x, 0) }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricEstimate {
    Finite { k: f64, witness: Option<Element> },
    /// A positive difference where `phi(x, 0)` vanishes.
    Infinite { witness: Element },
    /// Ratios growing geometrically toward the innermost shell.
    Unbounded { witness: Element, growth: f64 },
}

impl MetricEstimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricEstimate::Finite { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&Element> {
        match self {
            MetricEstimate::Finite { witness, .. } => witness.as_ref(),
            MetricEstimate::Infinite { witness } | MetricEstimate::Unbounded { witness, .. } => Some(witness),
        }
    }
}

/// Smallest per-shell growth factor that counts as unbounded.
const GROWTH_THRESHOLD: f64 = 1.001;

/// `samples` yields `(shell, point, excess, weight)`.
fn metric_from_samples<'a>(shells: usize, samples: impl Iterator<Item = (usize, &'a Element, f64, f64)>) -> MetricEstimate {
    let mut per_shell = vec![0.0f64; shells + 1];
    let mut per_shell_witness: Vec<Option<&Element>> = vec![None; shells + 1];
    let mut best = 0.0f64;
    let mut best_witness: Option<&Element> = None;
    for (shell, x, excess, weight) in samples {
        if excess <= 0.0 {
            continue;
        }
        if weight <= 0.0 {
            return MetricEstimate::Infinite { witness: x.clone() };
        }
        let ratio = excess / weight;
        if ratio > per_shell[shell] {
            per_shell[shell] = ratio;
            per_shell_witness[shell] = Some(x);
        }
        if ratio > best {
            best = ratio;
            best_witness = Some(x);
        }
    }
    if shells >= 2 {
        let j = shells;
        let g1 = per_shell[j] / per_shell[j - 1];
        let g2 = per_shell[j - 1] / per_shell[j - 2];
        if per_shell[j - 2] > 0.0 && g1 > GROWTH_THRESHOLD && g2 > GROWTH_THRESHOLD && per_shell[j] >= best {
            return MetricEstimate::Unbounded {
                witness: per_shell_witness[j].expect("positive ratio has a witness").clone(),
                growth: g1.min(g2),
            };
        }
    }
    MetricEstimate::Finite {
        k: best,
        witness: best_witness.cloned(),
    }
}

/// Estimates `d_phi(g, h)` on the grid. Both maps must vanish at zero.
pub fn generalized_metric<G: AlgebraMap + ?Sized, H: AlgebraMap + ?Sized>(
    g: &G,
    h: &H,
    phi: &ControlFunction,
    grid: &EvalGrid,
) -> Result<MetricEstimate> {
    metric_impl(g, h, phi, grid, false)
}

/// As [`generalized_metric`], but differences within rounding allowance of
/// zero are discounted.
pub fn generalized_metric_above_noise<G: AlgebraMap + ?Sized, H: AlgebraMap + ?Sized>(
    g: &G,
    h: &H,
    phi: &ControlFunction,
    grid: &EvalGrid,
) -> Result<MetricEstimate> {
    metric_impl(g, h, phi, grid, true)
}

fn metric_impl<G: AlgebraMap + ?Sized, H: AlgebraMap + ?Sized>(
    g: &G,
    h: &H,
    phi: &ControlFunction,
    grid: &EvalGrid,
    discount_noise: bool,
) -> Result<MetricEstimate> {
    if phi.arity() != 2 {
        return Err(LabError::Structural(format!("metric weight {} must be binary", phi.shape.name())));
    }
    let zero = Element::zeros(grid.dim());
    if !g.eval(&zero)?.is_zero() || !h.eval(&zero)?.is_zero() {
        return Err(LabError::Structural("generalized metric needs maps vanishing at zero".into()));
    }
    let mut samples = Vec::with_capacity(grid.len());
    for p in grid.points() {
        let (u, v) = (g.eval(&p.x)?, h.eval(&p.x)?);
        let mut excess = (&u - &v).norm();
        if discount_noise {
            excess -= rounding_allowance(&u, &v);
        }
        samples.push((p.shell, &p.x, excess, phi.at_axis(p.x.norm())));
    }
    Ok(metric_from_samples(grid.shells, samples.into_iter()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardStep {
    pub n: u32,
    /// `max_x |T^n f(x) - T^(n+1) f(x)| / phi(x, 0)`; `None` when infinite.
    pub distance: Option<f64>,
    /// Rounding allowance on the same scale.
    pub noise: f64,
    /// `L^n d(f, Tf)`.
    pub contraction_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub n: u32,
    /// Largest per-point ratio of consecutive distances, over points where
    /// both distances stand clear of rounding noise.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub l: f64,
    pub direction: ScaleDirection,
    pub depth: u32,
    pub steps: Vec<PicardStep>,
    pub ratios: Vec<RatioSample>,
    /// Mean of the measured ratios.
    pub rho_hat: Option<f64>,
    /// `|rho_hat - L| <= ratio_tol * L`.
    pub rate_matches_l: Option<bool>,
    pub distance_to_limit: MetricEstimate,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

/// Checks, on the grid, the homogeneity-step inequality
/// `|2 f(ax) - 2 a^m f(x)| <= phi(x, 0)`, the first-step bound on
/// `d(f, Tf)`, the contraction `d(T^n f, T^(n+1) f) <= L^n d(f, Tf)`, and
/// the fixed-point distance `d(f, F) <= d(f, Tf) / (1 - L)`.
pub fn picard_diagnostics<M: AlgebraMap + ?Sized>(
    f: &M,
    phi: &ControlFunction,
    cert: &ContractionCertificate,
    cfg: &ExtractionConfig,
    grid: &EvalGrid,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if !cert.feasible {
        return Err(LabError::Config(format!(
            "contraction certificate infeasible: {}",
            cert.violated().join(", ")
        )));
    }
    if phi.arity() != 2 {
        return Err(LabError::Structural(format!("metric weight {} must be binary", phi.shape.name())));
    }
    let (a, m, dir, depth) = (cfg.a, cfg.m, cfg.direction, cfg.depth);
    let l = cert.l;
    let tol = cfg.rel_tol;
    let pts: Vec<&Element> = grid.points().iter().map(|p| &p.x).collect();
    let weights: Vec<f64> = pts.iter().map(|x| phi.at_axis(x.norm())).collect();

    // iterates[n][i] = T^n f(x_i), n = 0..=depth+1
    let mut iterates: Vec<Vec<Element>> = Vec::with_capacity(depth as usize + 2);
    for n in 0..=depth + 1 {
        iterates.push(pts.iter().map(|x| evaluate_scaled(f, x, a, m, n, dir)).collect::<Result<_>>()?);
    }

    let af = a as f64;
    let am = af.powi(m as i32);
    let abs_am = am.abs();
    let mut step = Tracker::new("homogeneity_step", "|2 f(a x) - 2 a^m f(x)| <= phi(x, 0)");
    for (i, x) in pts.iter().enumerate() {
        let fx = &iterates[0][i];
        let fax = f.eval(&x.scale_real(af))?;
        let (u, v) = (fax.scale_real(2.0), fx.scale_real(2.0 * am));
        step.observe((&u - &v).norm(), weights[i] * (1.0 + tol), rounding_allowance(&u, &v), &[x]);
    }

    // per-point scaled distances
    let n_steps = depth as usize + 1;
    let mut diff = vec![vec![0.0f64; pts.len()]; n_steps];
    let mut eta = vec![vec![0.0f64; pts.len()]; n_steps];
    for n in 0..n_steps {
        for i in 0..pts.len() {
            let (u, v) = (&iterates[n][i], &iterates[n + 1][i]);
            diff[n][i] = (u - v).norm();
            eta[n][i] = rounding_allowance(u, v);
        }
    }
    let mut d_hat: Vec<Option<f64>> = Vec::with_capacity(n_steps);
    let mut d_arg: Vec<usize> = Vec::with_capacity(n_steps);
    let mut noise: Vec<f64> = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let (mut best, mut arg, mut nz, mut infinite) = (0.0f64, 0usize, 0.0f64, false);
        for i in 0..pts.len() {
            if weights[i] > 0.0 {
                let r = diff[n][i] / weights[i];
                if r > best {
                    best = r;
                    arg = i;
                }
                nz = nz.max(eta[n][i] / weights[i]);
            } else if diff[n][i] > eta[n][i] {
                infinite = true;
                arg = i;
            }
        }
        d_hat.push(if infinite { None } else { Some(best) });
        d_arg.push(arg);
        noise.push(nz);
    }

    let first_bound = match dir {
        ScaleDirection::Shrink => l / (2.0 * abs_am),
        ScaleDirection::Expand => 1.0 / (2.0 * abs_am),
    };
    let mut first = Tracker::new("first_step_bound", match dir {
        ScaleDirection::Shrink => "d(f, T f) <= L / (2 |a|^m)",
        ScaleDirection::Expand => "d(f, T f) <= 1 / (2 |a|^m)",
    });
    first.observe(
        d_hat[0].unwrap_or(f64::INFINITY),
        first_bound * (1.0 + tol),
        noise[0],
        &[pts[d_arg[0]]],
    );

    let mut contraction = Tracker::new("picard_contraction", "d(T^n f, T^(n+1) f) <= L^n d(f, T f)");
    let mut steps = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let ln = l.powi(n as i32);
        let bound = d_hat[0].map(|d0| ln * d0);
        steps.push(PicardStep {
            n: n as u32,
            distance: d_hat[n],
            noise: noise[n],
            contraction_bound: bound,
        });
        contraction.observe(
            d_hat[n].unwrap_or(f64::INFINITY),
            bound.unwrap_or(f64::INFINITY) * (1.0 + tol),
            noise[n] + ln * noise[0],
            &[pts[d_arg[n]]],
        );
    }

    let mut ratios = Vec::new();
    for n in 0..n_steps - 1 {
        let mut best: Option<f64> = None;
        for i in 0..pts.len() {
            let clear = |k: usize| diff[k][i] > SIGNIFICANCE * eta[k][i];
            if clear(n) && clear(n + 1) {
                let r = diff[n + 1][i] / diff[n][i];
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
        }
        if let Some(ratio) = best {
            ratios.push(RatioSample { n: n as u32, ratio });
        }
    }
    let rho_hat = if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().map(|r| r.ratio).sum::<f64>() / ratios.len() as f64)
    };
    let rate_matches_l = rho_hat.map(|r| (r - l).abs() <= cfg.ratio_tol * l);

    let limit = Scaled {
        map: f,
        a,
        m,
        n: depth,
        direction: dir,
    };
    let mut fixed = Tracker::new("fixed_point_distance", "d(f, F) <= d(f, T f) / (1 - L)");
    let mut limit_samples = Vec::with_capacity(pts.len());
    for (i, p) in grid.points().iter().enumerate() {
        let u = &iterates[0][i];
        let v = limit.eval(&p.x)?;
        let allowance = rounding_allowance(u, &v);
        let d = (u - &v).norm();
        limit_samples.push((p.shell, &p.x, d - allowance, weights[i]));
        if weights[i] > 0.0 {
            let rhs = d_hat[0].unwrap_or(f64::INFINITY) / (1.0 - l);
            fixed.observe(
                d / weights[i],
                rhs * (1.0 + tol),
                allowance / weights[i] + noise[0] / (1.0 - l),
                &[&p.x],
            );
        } else {
            fixed.observe(d, 0.0, allowance, &[&p.x]);
        }
    }
    let distance_to_limit = metric_from_samples(grid.shells, limit_samples.into_iter());

    let verdicts = vec![step.finish(), first.finish(), contraction.finish(), fixed.finish()];
    let passed = verdicts.iter().all(|v| v.passed);
    Ok(ConvergenceReport {
        l,
        direction: dir,
        depth,
        steps,
        ratios,
        rho_hat,
        rate_matches_l,
        distance_to_limit,
        verdicts,
        passed,
    })
}
