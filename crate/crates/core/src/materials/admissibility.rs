use serde::Serialize;

use super::law::{LawClass, MaterialLaw};
use crate::error::{Error, Result};

/// Clause of the admissibility conditions a sample can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Positivity,
    FluxMonotone,
    LowerBound,
    UpperBound,
    StrongMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub clause: Clause,
    /// Sample point (for collinear pairs, the first of the two).
    pub s: f64,
    pub value: f64,
    pub bound: f64,
}

/// Outcome of the sampled strong-monotonicity check. Passing is necessary
/// for the declared constant, not sufficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongMonotoneCheck {
    pub kappa: f64,
    pub pairs_checked: usize,
    pub necessary_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub class: LawClass,
    pub s_max: f64,
    pub n_samples: usize,
    pub violations: Vec<Violation>,
    pub strong_monotone: Option<StrongMonotoneCheck>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self, clause: Clause) -> Option<&Violation> {
        self.violations.iter().find(|v| v.clause == clause)
    }
}

const REL_SLACK: f64 = 1e-12;

fn leq(a: f64, b: f64) -> bool {
    a <= b + REL_SLACK * (1.0 + a.abs().max(b.abs()))
}

/// Samples a law on `s_k = k·s_max/(n−1)` and checks monotone flux plus the
/// bounds of its declared class. Bounds that were not declared are skipped.
pub fn check_admissibility(law: &MaterialLaw, s_max: f64, n_samples: usize) -> Result<AdmissibilityReport> {
    if law.is_limit() {
        return Err(Error::NoEvaluator(law.class.name()));
    }
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(Error::InvalidParameter(format!("s_max must be positive, got {s_max}")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {n_samples}")));
    }
    let samples: Vec<f64> = (0..n_samples).map(|k| s_max * k as f64 / (n_samples - 1) as f64).collect();
    let mut violations = Vec::new();

    for &s in &samples[1..] {
        let g = law.gamma(s);
        if !(g > 0.0) || !g.is_finite() {
            violations.push(Violation { clause: Clause::Positivity, s, value: g, bound: 0.0 });
        }
    }

    for w in samples.windows(2) {
        let (f0, f1) = (law.flux(w[0]), law.flux(w[1]));
        if !(f1 > f0) {
            violations.push(Violation { clause: Clause::FluxMonotone, s: w[1], value: f1, bound: f0 });
        }
    }

    for &s in &samples[1..] {
        let g = law.gamma(s);
        if let Some(lo) = lower_bound(law, s) {
            if !leq(lo, g) {
                violations.push(Violation { clause: Clause::LowerBound, s, value: g, bound: lo });
            }
        }
        if let Some(hi) = upper_bound(law, s) {
            if !leq(g, hi) {
                violations.push(Violation { clause: Clause::UpperBound, s, value: g, bound: hi });
            }
        }
    }

    let strong_monotone = law.kappa.map(|kappa| {
        let m = n_samples.min(41);
        let grid: Vec<f64> = (0..m)
            .flat_map(|k| {
                let s = s_max * k as f64 / (m - 1) as f64;
                [s, -s]
            })
            .collect();
        let mut pairs = 0;
        for (i, &x1) in grid.iter().enumerate() {
            for &x2 in &grid[i + 1..] {
                let d = x2 - x1;
                if d == 0.0 {
                    continue;
                }
                pairs += 1;
                let lhs = (signed_flux(law, x2) - signed_flux(law, x1)) * d;
                let rhs = kappa * strong_rhs(law, x1, x2);
                if !leq(rhs, lhs) {
                    violations.push(Violation { clause: Clause::StrongMonotone, s: x1, value: lhs, bound: rhs });
                }
            }
        }
        StrongMonotoneCheck { kappa, pairs_checked: pairs, necessary_only: true }
    });

    Ok(AdmissibilityReport { class: law.class, s_max, n_samples, violations, strong_monotone })
}

fn signed_flux(law: &MaterialLaw, x: f64) -> f64 {
    law.flux(x.abs()) * x.signum()
}

fn strong_rhs(law: &MaterialLaw, x1: f64, x2: f64) -> f64 {
    let d = (x2 - x1).abs();
    match (law.class, law.q) {
        (LawClass::Growth, Some(q)) if q < 2.0 => (1.0 + x1 * x1 + x2 * x2).powf(0.5 * (q - 2.0)) * d * d,
        (LawClass::Growth, Some(q)) | (LawClass::Vanishing, Some(q)) => d.powf(q),
        _ => d * d,
    }
}

fn ratio_pow(law: &MaterialLaw, s: f64) -> Option<f64> {
    let (q, s0) = (law.q?, law.s0?);
    Some((s / s0).powf(q - 2.0))
}

fn lower_bound(law: &MaterialLaw, s: f64) -> Option<f64> {
    let lo = law.lower?;
    match law.class {
        LawClass::Vanishing => Some(lo * ratio_pow(law, s)?),
        _ => Some(lo),
    }
}

fn upper_bound(law: &MaterialLaw, s: f64) -> Option<f64> {
    let hi = law.upper?;
    match law.class {
        LawClass::Growth => {
            let r = ratio_pow(law, s)?;
            if law.q? >= 2.0 {
                Some(hi * (1.0 + r))
            } else {
                Some(hi * r)
            }
        }
        _ => Some(hi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::LawShape;

    #[test]
    fn sigmoid_bounded_is_admissible() {
        let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 1.0, b: 1.0, s0: 1.0 }, 1.0, 2.0).unwrap();
        let report = check_admissibility(&law, 10.0, 1000).unwrap();
        assert!(report.is_admissible(), "{:?}", report.violations);
    }

    #[test]
    fn inverse_square_fails_flux_monotonicity() {
        let law = MaterialLaw::custom(LawClass::Bounded, "inv-sq", |s| 1.0 / (s * s), None, None);
        let report = check_admissibility(&law, 10.0, 1000).unwrap();
        assert!(report.first_violation(Clause::FluxMonotone).is_some());
    }

    #[test]
    fn square_law_growth_q4_passes_without_lower_bound() {
        let law = MaterialLaw::growth(LawShape::Power { c: 1.0, s0: 1.0, q: 4.0 }, None, 1.0, 4.0, 1.0).unwrap();
        let report = check_admissibility(&law, 10.0, 1000).unwrap();
        assert!(report.is_admissible(), "{:?}", report.violations);
    }

    #[test]
    fn declared_bounds_are_enforced() {
        let law = MaterialLaw::bounded(LawShape::Affine { a: 1.0, b: 1.0 }, 1.0, 2.0).unwrap();
        let report = check_admissibility(&law, 10.0, 100).unwrap();
        let v = report.first_violation(Clause::UpperBound).unwrap();
        assert!(v.s > 1.0 && v.s < 1.2);
        assert!(report.first_violation(Clause::LowerBound).is_none());
    }

    #[test]
    fn strong_monotone_sampled() {
        let ok = MaterialLaw::constant(2.0).unwrap();
        let report = check_admissibility(&ok, 3.0, 50).unwrap();
        assert!(report.is_admissible());
        assert!(report.strong_monotone.as_ref().unwrap().necessary_only);
        let bad = MaterialLaw::bounded(LawShape::Sigmoid { a: 1.0, b: 1.0, s0: 1.0 }, 1.0, 2.0)
            .unwrap()
            .with_kappa(5.0);
        let report = check_admissibility(&bad, 3.0, 50).unwrap();
        assert!(report.first_violation(Clause::StrongMonotone).is_some());
    }

    #[test]
    fn rejects_bad_sampling() {
        let law = MaterialLaw::constant(1.0).unwrap();
        assert!(check_admissibility(&law, 1.0, 1).is_err());
        assert!(check_admissibility(&law, 0.0, 10).is_err());
        assert!(check_admissibility(&MaterialLaw::pec(), 1.0, 10).is_err());
    }
}
