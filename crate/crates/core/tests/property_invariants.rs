//! Property tests for the structural invariants of the shared types and
//! metrics.

use proptest::prelude::*;

use ws2s_core::label_types::{harden, normalize, DirichletParams};
use ws2s_core::losses::{aux_confidence_loss, cdpo_loss, AuxBase, Target};
use ws2s_core::metrics::{levenshtein, slu_f1, SlotPrediction};

fn raw_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1e3f64, 1..8)
}

proptest! {
    #[test]
    fn normalize_is_idempotent(v in raw_vector()) {
        let once = normalize(&v).unwrap();
        let twice = normalize(once.probs()).unwrap();
        prop_assert_eq!(once.probs(), twice.probs());
    }

    #[test]
    fn normalized_entries_sum_to_one(v in raw_vector()) {
        let d = normalize(&v).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.probs().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn harden_ignores_positive_rescaling(v in raw_vector(), scale in 1e-2..1e2f64) {
        let base = harden(&normalize(&v).unwrap());
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let rescaled = harden(&normalize(&scaled).unwrap());
        prop_assert_eq!(base, rescaled);
    }

    #[test]
    fn softplus_link_always_satisfies_unit_floor(
        logits in prop::collection::vec(-50.0..50.0f64, 1..10)
    ) {
        let d = DirichletParams::from_logits(&logits);
        prop_assert!(d.alpha().iter().all(|a| *a >= 1.0));
        prop_assert!((d.strength() - d.alpha().iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn levenshtein_is_a_metric(
        a in prop::collection::vec(0usize..5, 0..8),
        b in prop::collection::vec(0usize..5, 0..8),
        c in prop::collection::vec(0usize..5, 0..8),
    ) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        if levenshtein(&a, &b) == 0 {
            prop_assert_eq!(a.clone(), b.clone());
        }
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn aux_loss_is_affine_in_gamma(
        logits in prop::collection::vec(-3.0..3.0f64, 2..5),
        t in 0usize..2,
        g1 in 0.0..1.0f64,
        g2 in 0.0..1.0f64,
    ) {
        // skip near-ties where the self-target argmax is ambiguous
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assume!(sorted[0] - sorted[1] > 1e-6);
        let target = Target::Hard(ws2s_core::label_types::HardLabel::new(t));
        let f = |g: f64| aux_confidence_loss(&logits, &target, g, AuxBase::CrossEntropy).unwrap().value;
        let mid = 0.5 * (g1 + g2);
        prop_assert!((f(mid) - 0.5 * (f(g1) + f(g2))).abs() < 1e-10);
    }

    #[test]
    fn cdpo_swap_identity_at_dyadic_epsilon(
        c in -3.0..3.0f64,
        r in -3.0..3.0f64,
        beta in 0.1..4.0f64,
        eps_num in 0u32..=8,
    ) {
        let eps = eps_num as f64 / 8.0;
        let a = cdpo_loss(c, r, beta, eps).unwrap();
        let b = cdpo_loss(r, c, beta, 1.0 - eps).unwrap();
        prop_assert_eq!(a.value, b.value);
    }
}

fn arbitrary_slots() -> impl Strategy<Value = SlotPrediction> {
    prop::collection::btree_map("[a-d]{1,3}", "[a-d ]{1,6}", 0..4).prop_map(|m| {
        let cleaned: std::collections::BTreeMap<String, String> = m
            .into_iter()
            .filter(|(_, v)| !v.trim().is_empty())
            .map(|(k, v)| (k, v.trim().to_string()))
            .collect();
        SlotPrediction::new(cleaned).unwrap()
    })
}

proptest! {
    #[test]
    fn slu_f1_bounded_and_exact_iff_equal(
        preds in prop::collection::vec(arbitrary_slots(), 1..5)
    ) {
        let score = slu_f1(&preds, &preds).unwrap();
        prop_assert!((score - 1.0).abs() < 1e-12);

        // against a shuffled/perturbed copy the score stays in [0, 1]
        let mut refs = preds.clone();
        refs.reverse();
        let score = slu_f1(&preds, &refs).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&score));
    }
}
