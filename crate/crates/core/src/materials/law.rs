use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::primitive;
use crate::error::{Error, Result};

/// Nonlinearity class of a law, fixing which bounds and test materials apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawClass {
    /// Constant (linear) material.
    Linear,
    /// Bounded from zero and infinity.
    Bounded,
    /// Bounded from zero, possibly unbounded above with power growth.
    Growth,
    /// Bounded above, possibly vanishing with power decay.
    Vanishing,
    /// Perfect conductor limit.
    Pec,
    /// Perfect insulator limit.
    Pei,
}

impl LawClass {
    pub fn name(self) -> &'static str {
        match self {
            LawClass::Linear => "linear",
            LawClass::Bounded => "bounded",
            LawClass::Growth => "growth",
            LawClass::Vanishing => "vanishing",
            LawClass::Pec => "pec",
            LawClass::Pei => "pei",
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Functional form of `γ(s)`.
#[derive(Clone)]
pub enum LawShape {
    Constant(f64),
    /// `a + b·s`
    Affine { a: f64, b: f64 },
    /// `c·(s/s0)^(q−2)`
    Power { c: f64, s0: f64, q: f64 },
    /// `a + b·tanh(s/s0)`
    Sigmoid { a: f64, b: f64, s0: f64 },
    /// Black-box evaluator; the derivative is optional (secant fallback).
    Custom { name: String, gamma: ScalarFn, dgamma: Option<ScalarFn> },
    /// No evaluator (pec/pei).
    Limit,
}

impl fmt::Debug for LawShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawShape::Constant(v) => write!(f, "Constant({v})"),
            LawShape::Affine { a, b } => write!(f, "Affine({a} + {b}·s)"),
            LawShape::Power { c, s0, q } => write!(f, "Power({c}·(s/{s0})^({q}−2))"),
            LawShape::Sigmoid { a, b, s0 } => write!(f, "Sigmoid({a} + {b}·tanh(s/{s0}))"),
            LawShape::Custom { name, dgamma, .. } => {
                write!(f, "Custom({name}, derivative: {})", dgamma.is_some())
            }
            LawShape::Limit => write!(f, "Limit"),
        }
    }
}

/// A nonlinear constitutive law `γ(s)`, `s = |∇u|`, with its declared class bounds.
///
/// `lower`/`upper` are the declared constants of the class clause (for the
/// growth/vanishing classes together with `q` and `s0`). They are metadata
/// checked by [`check_admissibility`](super::check_admissibility), and they
/// define the test materials used by the imaging rules.
#[derive(Debug, Clone)]
pub struct MaterialLaw {
    pub class: LawClass,
    pub shape: LawShape,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub q: Option<f64>,
    pub s0: Option<f64>,
    /// Strong-monotonicity constant; stored and sample-checked, never consumed.
    pub kappa: Option<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_bounds(lower: Option<f64>, upper: Option<f64>) -> Result<()> {
    if let Some(l) = lower {
        positive("lower bound", l)?;
    }
    if let Some(u) = upper {
        positive("upper bound", u)?;
    }
    if let (Some(l), Some(u)) = (lower, upper) {
        if l > u {
            return Err(Error::InvalidLaw(format!("lower bound {l} exceeds upper bound {u}")));
        }
    }
    Ok(())
}

fn check_shape(shape: &LawShape) -> Result<()> {
    match *shape {
        LawShape::Constant(v) => positive("constant value", v),
        LawShape::Affine { a, b } => {
            if a < 0.0 || b < 0.0 || a + b <= 0.0 || !a.is_finite() || !b.is_finite() {
                Err(Error::InvalidLaw(format!("affine law needs a, b ≥ 0 (not both zero), got a={a}, b={b}")))
            } else {
                Ok(())
            }
        }
        LawShape::Power { c, s0, q } => {
            positive("power coefficient", c)?;
            positive("power scale s0", s0)?;
            if q <= 1.0 || !q.is_finite() {
                return Err(Error::InvalidLaw(format!("power exponent q must exceed 1, got {q}")));
            }
            Ok(())
        }
        LawShape::Sigmoid { a, b, s0 } => {
            positive("sigmoid scale s0", s0)?;
            if b == 0.0 || a + b.min(0.0) < 0.0 || !a.is_finite() || !b.is_finite() {
                Err(Error::InvalidLaw(format!("sigmoid law needs b ≠ 0 and a + min(b, 0) ≥ 0, got a={a}, b={b}")))
            } else {
                Ok(())
            }
        }
        LawShape::Custom { .. } | LawShape::Limit => Ok(()),
    }
}

impl MaterialLaw {
    pub fn constant(value: f64) -> Result<Self> {
        positive("constant value", value)?;
        Ok(Self {
            class: LawClass::Linear,
            shape: LawShape::Constant(value),
            lower: Some(value),
            upper: Some(value),
            q: None,
            s0: None,
            kappa: Some(value),
        })
    }

    pub fn bounded(shape: LawShape, lower: f64, upper: f64) -> Result<Self> {
        check_shape(&shape)?;
        check_bounds(Some(lower), Some(upper))?;
        Ok(Self { class: LawClass::Bounded, shape, lower: Some(lower), upper: Some(upper), q: None, s0: None, kappa: None })
    }

    pub fn growth(shape: LawShape, lower: Option<f64>, upper: f64, q: f64, s0: f64) -> Result<Self> {
        check_shape(&shape)?;
        check_bounds(lower, Some(upper))?;
        positive("class scale s0", s0)?;
        if q <= 1.0 || !q.is_finite() {
            return Err(Error::InvalidLaw(format!("growth class needs q > 1, got {q}")));
        }
        Ok(Self { class: LawClass::Growth, shape, lower, upper: Some(upper), q: Some(q), s0: Some(s0), kappa: None })
    }

    pub fn vanishing(shape: LawShape, lower: f64, upper: f64, q: f64, s0: f64) -> Result<Self> {
        check_shape(&shape)?;
        check_bounds(Some(lower), Some(upper))?;
        positive("class scale s0", s0)?;
        if q < 2.0 || !q.is_finite() {
            return Err(Error::InvalidLaw(format!("vanishing class needs q ≥ 2, got {q}")));
        }
        Ok(Self {
            class: LawClass::Vanishing,
            shape,
            lower: Some(lower),
            upper: Some(upper),
            q: Some(q),
            s0: Some(s0),
            kappa: None,
        })
    }

    pub fn pec() -> Self {
        Self { class: LawClass::Pec, shape: LawShape::Limit, lower: None, upper: None, q: None, s0: None, kappa: None }
    }

    pub fn pei() -> Self {
        Self { class: LawClass::Pei, shape: LawShape::Limit, lower: None, upper: None, q: None, s0: None, kappa: None }
    }

    pub fn custom(
        class: LawClass,
        name: impl Into<String>,
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Self {
        Self {
            class,
            shape: LawShape::Custom { name: name.into(), gamma: Arc::new(gamma), dgamma: None },
            lower,
            upper,
            q: None,
            s0: None,
            kappa: None,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn with_class_exponent(mut self, q: f64, s0: f64) -> Self {
        self.q = Some(q);
        self.s0 = Some(s0);
        self
    }

    pub fn is_limit(&self) -> bool {
        matches!(self.class, LawClass::Pec | LawClass::Pei)
    }

    /// `Some(value)` when `γ` does not depend on `s`.
    pub fn constant_value(&self) -> Option<f64> {
        match self.shape {
            LawShape::Constant(v) => Some(v),
            LawShape::Affine { a, b } if b == 0.0 => Some(a),
            _ => None,
        }
    }

    /// `γ(s)`; `+∞` for a perfect conductor and `0` for a perfect insulator.
    pub fn gamma(&self, s: f64) -> f64 {
        match &self.shape {
            LawShape::Constant(v) => *v,
            LawShape::Affine { a, b } => a + b * s,
            LawShape::Power { c, s0, q } => c * (s / s0).powf(q - 2.0),
            LawShape::Sigmoid { a, b, s0 } => a + b * (s / s0).tanh(),
            LawShape::Custom { gamma, .. } => gamma(s),
            LawShape::Limit => match self.class {
                LawClass::Pec => f64::INFINITY,
                _ => 0.0,
            },
        }
    }

    /// Analytic `dγ/ds` when the shape provides one.
    pub fn dgamma(&self, s: f64) -> Option<f64> {
        match &self.shape {
            LawShape::Constant(_) => Some(0.0),
            LawShape::Affine { b, .. } => Some(*b),
            LawShape::Power { c, s0, q } => Some(c * (q - 2.0) * (s / s0).powf(q - 3.0) / s0),
            LawShape::Sigmoid { b, s0, .. } => {
                let ch = (s / s0).cosh();
                Some(b / (s0 * ch * ch))
            }
            LawShape::Custom { dgamma, .. } => dgamma.as_ref().map(|d| d(s)),
            LawShape::Limit => None,
        }
    }

    /// `dγ/ds`, falling back to a symmetric secant where no derivative is available.
    pub fn dgamma_or_secant(&self, s: f64) -> f64 {
        if let Some(d) = self.dgamma(s) {
            return d;
        }
        let h = 1e-6 * s.max(1e-3);
        let lo = (s - h).max(0.0);
        (self.gamma(s + h) - self.gamma(lo)) / (s + h - lo)
    }

    /// Flux magnitude `γ(s)·s` (zero at `s = 0`).
    pub fn flux(&self, s: f64) -> f64 {
        if s == 0.0 {
            0.0
        } else {
            self.gamma(s) * s
        }
    }

    /// Energy density `Q(s) = ∫₀ˢ γ(η)·η dη`.
    pub fn q_primitive(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("Q(s) needs finite s ≥ 0, got {s}")));
        }
        let q = match &self.shape {
            LawShape::Constant(v) => 0.5 * v * s * s,
            LawShape::Affine { a, b } => 0.5 * a * s * s + b * s * s * s / 3.0,
            LawShape::Power { c, s0, q } => c * s.powf(*q) / (q * s0.powf(q - 2.0)),
            LawShape::Sigmoid { a, b, s0 } => 0.5 * a * s * s + b * s0 * s0 * primitive::x_tanh_integral(s / s0),
            LawShape::Custom { gamma, .. } => primitive::quadrature_primitive(|e| gamma(e), s),
            LawShape::Limit => {
                return Err(Error::NoEvaluator(self.class.name()));
            }
        };
        Ok(q)
    }
}

/// Which side of the background the anomaly lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// `γ_NL > γ_BG`
    High,
    /// `γ_NL < γ_BG`
    Low,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_examples() {
        assert!((MaterialLaw::constant(1.0).unwrap().q_primitive(1.0).unwrap() - 0.5).abs() < 1e-15);
        let affine = MaterialLaw::bounded(LawShape::Affine { a: 1.0, b: 1.0 }, 1.0, 100.0).unwrap();
        assert!((affine.q_primitive(1.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let power = MaterialLaw::growth(LawShape::Power { c: 1.0, s0: 1.0, q: 4.0 }, None, 1.0, 4.0, 1.0).unwrap();
        assert!((power.q_primitive(2.0).unwrap() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn q_at_zero_vanishes() {
        let laws = [
            MaterialLaw::constant(3.0).unwrap(),
            MaterialLaw::bounded(LawShape::Sigmoid { a: 1.0, b: 1.0, s0: 0.5 }, 1.0, 2.0).unwrap(),
            MaterialLaw::custom(LawClass::Bounded, "sq", |s| 1.0 + s * s, Some(1.0), None),
        ];
        for law in &laws {
            assert_eq!(law.q_primitive(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn limits_have_no_energy_density() {
        assert_eq!(MaterialLaw::pec().q_primitive(1.0), Err(Error::NoEvaluator("pec")));
        assert_eq!(MaterialLaw::pei().q_primitive(1.0), Err(Error::NoEvaluator("pei")));
        assert_eq!(MaterialLaw::pec().gamma(1.0), f64::INFINITY);
        assert_eq!(MaterialLaw::pei().gamma(1.0), 0.0);
    }

    #[test]
    fn secant_matches_analytic_derivative() {
        let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 1.0, b: 2.0, s0: 0.7 }, 1.0, 3.0).unwrap();
        let custom = MaterialLaw::custom(LawClass::Bounded, "sig", |s| 1.0 + 2.0 * (s / 0.7).tanh(), None, None);
        for s in [0.01, 0.3, 1.0, 4.0] {
            let exact = law.dgamma(s).unwrap();
            assert!((custom.dgamma_or_secant(s) - exact).abs() < 1e-6 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MaterialLaw::constant(0.0).is_err());
        assert!(MaterialLaw::bounded(LawShape::Constant(1.0), 2.0, 1.0).is_err());
        assert!(MaterialLaw::growth(LawShape::Affine { a: 1.0, b: 1.0 }, Some(1.0), 1.0, 1.0, 1.0).is_err());
        assert!(MaterialLaw::vanishing(LawShape::Sigmoid { a: 0.0, b: 1.0, s0: 1.0 }, 0.1, 1.0, 1.5, 1.0).is_err());
        assert!(MaterialLaw::bounded(LawShape::Power { c: 1.0, s0: 1.0, q: 0.5 }, 1.0, 2.0).is_err());
    }
}
