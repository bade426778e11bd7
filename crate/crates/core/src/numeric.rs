//! Stable elementary and special functions shared by the loss implementations.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// log(Σ exp(x_i)) with max-shift for stability.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Elementwise log softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Elementwise softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|x| x.exp()).collect()
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x) = −softplus(−x).
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Trigamma ψ'(x) for x > 0, by recurrence into the asymptotic regime.
///
/// ψ'(x) = ψ'(x+1) + 1/x² is applied until x ≥ 10, then the Bernoulli
/// series 1/x + 1/(2x²) + Σ B₂ₙ/x^(2n+1) is summed through the x⁻¹¹ term,
/// which leaves a truncation error below 1e-13 at the cutoff.
pub fn trigamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "trigamma domain is x > 0, got {x}");
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9) + 5/(66x^11)
    let series = inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_evaluation() {
        let xs = [0.3f64, -1.2, 2.5];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let xs = [1000.0f64, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.1, -3.0, 2.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_extremes() {
        assert!((softplus(40.0) - 40.0).abs() < 1e-12);
        assert!(softplus(-40.0) > 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn trigamma_reference_values() {
        let pi2_6 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        assert!((trigamma(2.0) - (pi2_6 - 1.0)).abs() < 1e-12);
        let psi1_5 = pi2_6 - 1.0 - 0.25 - 1.0 / 9.0 - 1.0 / 16.0;
        assert!((trigamma(5.0) - psi1_5).abs() < 1e-12);
        // half-integer argument exercises the recurrence off the lattice
        let pi2_2 = std::f64::consts::PI * std::f64::consts::PI / 2.0;
        assert!((trigamma(0.5) - pi2_2).abs() < 1e-11);
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[1.3, 2.7, 4.0, 9.5, 15.0] {
            let h = 1e-6;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(
                (trigamma(x) - fd).abs() / fd.abs() < 1e-7,
                "x={x}: trigamma {} vs fd {fd}",
                trigamma(x)
            );
        }
    }
}
