//! Closed forms and quadrature for energy densities.

use std::f64::consts::PI;

// Maclaurin coefficients of tanh(x) = Σ a_n x^(2n−1).
const TANH_SERIES: [f64; 9] = [
    1.0,
    -1.0 / 3.0,
    2.0 / 15.0,
    -17.0 / 315.0,
    62.0 / 2835.0,
    -1382.0 / 155925.0,
    21844.0 / 6081075.0,
    -929569.0 / 638512875.0,
    6404582.0 / 10854718875.0,
];

/// `Li₂(−z)` for `0 ≤ z ≤ 1` by direct summation.
fn dilog_neg(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 1..2000 {
        pow *= -z;
        let term = pow / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// `J(t) = ∫₀ᵗ x·tanh(x) dx` for `t ≥ 0`.
pub fn x_tanh_integral(t: f64) -> f64 {
    if t < 0.25 {
        let t2 = t * t;
        let mut pow = t2 * t;
        let mut sum = 0.0;
        for (n, a) in TANH_SERIES.iter().enumerate() {
            sum += a * pow / (2 * n + 3) as f64;
            pow *= t2;
        }
        sum
    } else {
        let z = (-2.0 * t).exp();
        0.5 * t * t + t * z.ln_1p() - PI * PI / 24.0 - 0.5 * dilog_neg(z)
    }
}

/// `∫₀ˢ γ(η)·η dη` by double-exponential quadrature.
pub fn quadrature_primitive(gamma: impl Fn(f64) -> f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    quadrature::double_exponential::integrate(|e| gamma(e) * e, 0.0, s, 1e-12).integral
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_tanh_integral_matches_quadrature() {
        for &t in &[1e-4, 0.1, 0.2499, 0.25, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let reference = quadrature::double_exponential::integrate(|x| x * x.tanh(), 0.0, t, 1e-14).integral;
            assert!((x_tanh_integral(t) - reference).abs() < 1e-12 * (1.0 + reference), "t={t}");
        }
    }

    #[test]
    fn x_tanh_integral_continuous_at_switch() {
        let a = x_tanh_integral(0.25 - 1e-12);
        let b = x_tanh_integral(0.25);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dilog_at_minus_one() {
        assert!((dilog_neg(1.0) + PI * PI / 12.0).abs() < 1e-6);
    }
}
