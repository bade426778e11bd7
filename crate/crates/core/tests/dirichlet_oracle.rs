//! Numeric-integration oracles for the evidential losses.
//!
//! The Dirichlet NLL is −log ∫ Cat(y|π) Dir(π|α) dπ over the simplex. Under
//! the stick-breaking change of variables that integral factorizes into 1-D
//! Euler integrals ∫ u^(c−1) (1−u)^(s−1) du, which are evaluated here by
//! adaptive Simpson quadrature — no gamma functions and no use of the closed
//! form under test. The 2-class KL regularizer is likewise checked against
//! direct numeric integration of f·ln f.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ws2s_core::label_types::{DirichletParams, HardLabel};
use ws2s_core::losses::{dirichlet_kl_regularizer, dirichlet_nll};

/// Adaptive Simpson on [a, b] with absolute tolerance `eps`.
fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        eps: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, eps * 0.5, depth - 1)
                + recurse(f, m, b, right, eps * 0.5, depth - 1)
        }
    }
    let whole = simpson(&f, a, b);
    recurse(&f, a, b, whole, eps, 48)
}

/// ∫₀¹ u^(p) (1−u)^(q) du by quadrature, exponents ≥ 0.
fn euler_integral(p: f64, q: f64) -> f64 {
    let f = move |u: f64| -> f64 {
        let up = if p == 0.0 { 1.0 } else { u.powf(p) };
        let vq = if q == 0.0 { 1.0 } else { (1.0 - u).powf(q) };
        up * vq
    };
    // coarse magnitude estimate to set a relative tolerance
    let coarse: f64 = (1..200).map(|i| f(i as f64 / 200.0) / 200.0).sum();
    let eps = (coarse.abs() * 1e-8).max(1e-16);
    adaptive_simpson(f, 0.0, 1.0, eps)
}

/// ∫_simplex Π π_k^(c_k − 1) dπ via the stick-breaking factorization.
fn simplex_power_integral(c: &[f64]) -> f64 {
    let k = c.len();
    let mut tail: Vec<f64> = vec![0.0; k];
    let mut acc = 0.0;
    for i in (0..k).rev() {
        tail[i] = acc;
        acc += c[i];
    }
    let mut product = 1.0;
    for i in 0..k - 1 {
        product *= euler_integral(c[i] - 1.0, tail[i] - 1.0);
    }
    product
}

/// −log ∫ Cat(target|π) Dir(π|α) dπ, everything numeric.
fn nll_by_integration(alpha: &[f64], target: usize) -> f64 {
    let mut numerator_c = alpha.to_vec();
    numerator_c[target] += 1.0;
    let numerator = simplex_power_integral(&numerator_c);
    let denominator = simplex_power_integral(alpha);
    -(numerator / denominator).ln()
}

#[test]
fn closed_form_nll_matches_quadrature_on_random_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for case in 0..100 {
        let k = rng.gen_range(2..=5);
        let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(1.0..10.0)).collect();
        let target = rng.gen_range(0..k);
        let closed = dirichlet_nll(
            &DirichletParams::new(alpha.clone()).unwrap(),
            HardLabel::new(target),
        )
        .unwrap()
        .value;
        let numeric = nll_by_integration(&alpha, target);
        assert!(
            (closed - numeric).abs() < 1e-3,
            "case {case}: α={alpha:?} target {target}: closed {closed} vs numeric {numeric}"
        );
    }
}

#[test]
fn closed_form_nll_matches_quadrature_on_spec_cases() {
    for (alpha, target) in [
        (vec![2.0, 1.0], 0usize),
        (vec![5.0, 1.0, 1.0], 0),
        (vec![1.0, 1.0, 1.0], 2),
    ] {
        let closed = dirichlet_nll(
            &DirichletParams::new(alpha.clone()).unwrap(),
            HardLabel::new(target),
        )
        .unwrap()
        .value;
        let numeric = nll_by_integration(&alpha, target);
        assert!((closed - numeric).abs() < 1e-6, "{closed} vs {numeric}");
    }
}

/// For K = 2 the simplex is a segment, so KL(Dir(α̃) ‖ Dir(1)) can be
/// integrated directly as ∫ f ln f with the density normalized numerically.
#[test]
fn kl_regularizer_matches_direct_integration_two_classes() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for _ in 0..25 {
        let alpha = vec![rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0)];
        let target = rng.gen_range(0..2);
        // masked concentrations: target entry becomes 1
        let a1 = if target == 0 { 1.0 } else { alpha[0] };
        let a2 = if target == 1 { 1.0 } else { alpha[1] };
        let norm = euler_integral(a1 - 1.0, a2 - 1.0);
        let f = move |x: f64| -> f64 {
            let up = if a1 == 1.0 { 1.0 } else { x.powf(a1 - 1.0) };
            let vq = if a2 == 1.0 { 1.0 } else { (1.0 - x).powf(a2 - 1.0) };
            let density = up * vq / norm;
            if density <= 0.0 {
                0.0
            } else {
                density * density.ln()
            }
        };
        let numeric = adaptive_simpson(f, 0.0, 1.0, 1e-10);
        let closed = dirichlet_kl_regularizer(
            &DirichletParams::new(alpha.clone()).unwrap(),
            HardLabel::new(target),
            1.0,
        )
        .unwrap()
        .value;
        assert!(
            (closed - numeric).abs() < 1e-4,
            "α={alpha:?} t={target}: closed {closed} vs numeric {numeric}"
        );
    }
}

/// The spec's frozen regularizer example, re-derived by quadrature.
#[test]
fn kl_regularizer_spec_example_by_integration() {
    let alpha = vec![1.0, 2.0];
    let norm = euler_integral(0.0, 1.0);
    let f = move |x: f64| -> f64 {
        let density = (1.0 - x) / norm;
        if density <= 0.0 {
            0.0
        } else {
            density * density.ln()
        }
    };
    let numeric = adaptive_simpson(f, 0.0, 1.0, 1e-12);
    assert!((numeric - 0.19314718055994531).abs() < 1e-8);
    let closed = dirichlet_kl_regularizer(
        &DirichletParams::new(alpha).unwrap(),
        HardLabel::new(0),
        1.0,
    )
    .unwrap()
    .value;
    assert!((closed - numeric).abs() < 1e-8);
}
