//! Pass/fail records for checked inequalities.

use serde::{Deserialize, Serialize};

use crate::algebra::Element;

/// Outcome of checking `lhs <= rhs` over a set of sample points.
///
/// `witness` is the point with the largest excess `lhs - rhs - allowance`,
/// i.e. the violating point when the check fails and the tightest point when
/// it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub inequality: String,
    pub passed: bool,
    pub samples: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Rounding allowance granted at the witness.
    pub allowance: f64,
    /// Largest `lhs / rhs`; `None` when some `rhs` is zero under a positive
    /// `lhs`.
    pub max_ratio: Option<f64>,
    pub witness: Vec<Element>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    /// A verdict with no sampled inequality, e.g. a structural claim.
    pub fn flag(claim: &str, inequality: &str, passed: bool, witness: Vec<Element>, note: Option<String>) -> Self {
        Verdict {
            claim: claim.to_string(),
            inequality: inequality.to_string(),
            passed,
            samples: 0,
            lhs: 0.0,
            rhs: 0.0,
            allowance: 0.0,
            max_ratio: Some(0.0),
            witness,
            note,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Accumulates observations of one inequality.
#[derive(Clone, Debug)]
pub struct Tracker {
    claim: String,
    inequality: String,
    samples: usize,
    excess: f64,
    lhs: f64,
    rhs: f64,
    allowance: f64,
    ratio: f64,
    unbounded: bool,
    witness: Vec<Element>,
}

impl Tracker {
    pub fn new(claim: &str, inequality: &str) -> Self {
        Tracker {
            claim: claim.to_string(),
            inequality: inequality.to_string(),
            samples: 0,
            excess: f64::NEG_INFINITY,
            lhs: 0.0,
            rhs: 0.0,
            allowance: 0.0,
            ratio: 0.0,
            unbounded: false,
            witness: Vec::new(),
        }
    }

    /// Records `lhs <= rhs + allowance` at `point`.
    pub fn observe(&mut self, lhs: f64, rhs: f64, allowance: f64, point: &[&Element]) {
        self.samples += 1;
        if lhs > 0.0 {
            if rhs > 0.0 {
                self.ratio = self.ratio.max(lhs / rhs);
            } else {
                self.unbounded = true;
            }
        }
        let excess = if lhs.is_nan() { f64::INFINITY } else { lhs - rhs - allowance };
        if excess > self.excess {
            self.excess = excess;
            self.lhs = lhs;
            self.rhs = rhs;
            self.allowance = allowance;
            self.witness = point.iter().map(|e| (*e).clone()).collect();
        }
    }

    pub fn passed(&self) -> bool {
        self.excess <= 0.0
    }

    pub fn finish(self) -> Verdict {
        Verdict {
            passed: self.passed(),
            claim: self.claim,
            inequality: self.inequality,
            samples: self.samples,
            lhs: self.lhs,
            rhs: self.rhs,
            allowance: self.allowance,
            max_ratio: if self.unbounded { None } else { Some(self.ratio) },
            witness: self.witness,
            note: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracks_worst_point() {
        let mut t = Tracker::new("demo", "a <= b");
        let (p, q) = (Element::real(1.0), Element::real(2.0));
        t.observe(1.0, 2.0, 0.0, &[&p]);
        t.observe(1.9, 2.0, 0.0, &[&q]);
        let v = t.finish();
        assert!(v.passed);
        assert_eq!(v.witness, vec![q]);
        assert_eq!(v.max_ratio, Some(0.95));
    }

    #[test]
    fn violation_and_unbounded_ratio() {
        let mut t = Tracker::new("demo", "a <= b");
        let p = Element::real(1.0);
        t.observe(1.0, 0.0, 0.5, &[&p]);
        let v = t.finish();
        assert!(!v.passed);
        assert_eq!(v.max_ratio, None);
    }

    #[test]
    fn empty_tracker_passes() {
        assert!(Tracker::new("demo", "a <= b").finish().passed);
    }
}
