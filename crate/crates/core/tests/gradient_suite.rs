//! Central finite-difference checks for every analytic gradient exposed by
//! the losses module, plus the parameter-space gradients of the training
//! objectives. Tolerance: relative error ≤ 1e-4 over 100 random
//! configurations per loss.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ws2s_core::label_types::{
    ClassDistribution, DirichletParams, EnsembleWeights, HardLabel, TrainSchedule, WeightScheme,
};
use ws2s_core::losses::{
    aux_confidence_loss, cdpo_loss, cross_entropy, dirichlet_kl_regularizer, dirichlet_nll,
    dpo_loss, edl_loss, naive_multiweak_loss, weighted_multiweak_edl_loss, AuxBase, GenEdlOptions,
    Target,
};
use ws2s_core::models::{
    classifier_gradients, generator_gradients, ClassificationSample, ClassifierConfig,
    ClassifierLossKind, ClassifierModel, GeneratorConfig, GeneratorLossKind, GeneratorLossSpec,
    GeneratorModel, GenerationSample, GenSupervision, HeadMode, LossState, Supervision,
};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const CASES: usize = 100;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference check of `grad` against scalar function `f` perturbed
/// coordinate-wise around `x`.
fn check_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], grad: &[f64], what: &str) {
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += H;
        let mut minus = x.to_vec();
        minus[i] -= H;
        let fd = (f(&plus) - f(&minus)) / (2.0 * H);
        assert!(
            rel_err(fd, grad[i]) <= TOL,
            "{what}: coord {i} analytic {} vs fd {fd}",
            grad[i]
        );
    }
}

fn random_logits(rng: &mut ChaCha20Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

/// Logits whose top-1 margin is comfortably above the FD step, so the
/// self-target argmax cannot flip under perturbation.
fn stable_argmax_logits(rng: &mut ChaCha20Rng, k: usize) -> Vec<f64> {
    loop {
        let logits = random_logits(rng, k);
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] > 1e-3 {
            return logits;
        }
    }
}

fn random_alpha(rng: &mut ChaCha20Rng, k: usize) -> DirichletParams {
    DirichletParams::new((0..k).map(|_| rng.gen_range(1.0..10.0)).collect()).unwrap()
}

fn random_distribution(rng: &mut ChaCha20Rng, k: usize) -> ClassDistribution {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    ws2s_core::label_types::normalize(&raw).unwrap()
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    for _ in 0..CASES / 2 {
        let k = rng.gen_range(2..6);
        let logits = random_logits(&mut rng, k);
        let t = HardLabel::new(rng.gen_range(0..k));
        let loss = cross_entropy(&logits, &Target::Hard(t)).unwrap();
        check_grad(
            |x| cross_entropy(x, &Target::Hard(t)).unwrap().value,
            &logits,
            &loss.grad,
            "ce hard",
        );
    }
    for _ in 0..CASES / 2 {
        let k = rng.gen_range(2..6);
        let logits = random_logits(&mut rng, k);
        let d = random_distribution(&mut rng, k);
        let loss = cross_entropy(&logits, &Target::Soft(&d)).unwrap();
        check_grad(
            |x| cross_entropy(x, &Target::Soft(&d)).unwrap().value,
            &logits,
            &loss.grad,
            "ce soft",
        );
    }
}

#[test]
fn aux_loss_gradients_both_bases() {
    let mut rng = ChaCha20Rng::seed_from_u64(102);
    for case in 0..CASES {
        let k = rng.gen_range(2..6);
        let logits = stable_argmax_logits(&mut rng, k);
        let gamma = rng.gen_range(0.0..1.0);
        let weak = HardLabel::new(rng.gen_range(0..k));
        let base = if case % 2 == 0 {
            AuxBase::CrossEntropy
        } else {
            AuxBase::Edl {
                lambda_t: rng.gen_range(0.0..1.5),
            }
        };
        let loss = aux_confidence_loss(&logits, &Target::Hard(weak), gamma, base).unwrap();
        check_grad(
            |x| {
                aux_confidence_loss(x, &Target::Hard(weak), gamma, base)
                    .unwrap()
                    .value
            },
            &logits,
            &loss.grad,
            "aux",
        );
    }
}

#[test]
fn naive_multiweak_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(103);
    for _ in 0..CASES {
        let k = rng.gen_range(2..6);
        let n = rng.gen_range(1..6);
        let logits = random_logits(&mut rng, k);
        let labels: Vec<HardLabel> = (0..n).map(|_| HardLabel::new(rng.gen_range(0..k))).collect();
        let weights = EnsembleWeights::new(
            WeightScheme::Fixed,
            (0..n).map(|_| rng.gen_range(0.1..1.0)).collect(),
        )
        .unwrap();
        let loss = naive_multiweak_loss(&logits, &labels, &weights).unwrap();
        check_grad(
            |x| naive_multiweak_loss(x, &labels, &weights).unwrap().value,
            &logits,
            &loss.grad,
            "naive multiweak",
        );
    }
}

#[test]
fn dirichlet_nll_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(104);
    for _ in 0..CASES {
        let k = rng.gen_range(2..6);
        let alpha = random_alpha(&mut rng, k);
        let t = HardLabel::new(rng.gen_range(0..k));
        let loss = dirichlet_nll(&alpha, t).unwrap();
        check_grad(
            |a| {
                dirichlet_nll(&DirichletParams::new(a.to_vec()).unwrap(), t)
                    .unwrap()
                    .value
            },
            alpha.alpha(),
            &loss.grad,
            "dirichlet nll",
        );
    }
}

#[test]
fn kl_regularizer_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(105);
    for _ in 0..CASES {
        let k = rng.gen_range(2..6);
        let alpha = random_alpha(&mut rng, k);
        let t = HardLabel::new(rng.gen_range(0..k));
        let lambda_t = rng.gen_range(0.0..2.0);
        let loss = dirichlet_kl_regularizer(&alpha, t, lambda_t).unwrap();
        check_grad(
            |a| {
                dirichlet_kl_regularizer(&DirichletParams::new(a.to_vec()).unwrap(), t, lambda_t)
                    .unwrap()
                    .value
            },
            alpha.alpha(),
            &loss.grad,
            "kl regularizer",
        );
    }
}

#[test]
fn edl_loss_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(106);
    for _ in 0..CASES {
        let k = rng.gen_range(2..6);
        let alpha = random_alpha(&mut rng, k);
        let t = HardLabel::new(rng.gen_range(0..k));
        let lambda_t = rng.gen_range(0.0..2.0);
        let loss = edl_loss(&alpha, t, lambda_t).unwrap();
        check_grad(
            |a| {
                edl_loss(&DirichletParams::new(a.to_vec()).unwrap(), t, lambda_t)
                    .unwrap()
                    .value
            },
            alpha.alpha(),
            &loss.grad,
            "edl",
        );
    }
}

#[test]
fn weighted_edl_gradients_classification_and_generation_mode() {
    let mut rng = ChaCha20Rng::seed_from_u64(107);
    for case in 0..CASES {
        let k = rng.gen_range(2..6);
        let n = rng.gen_range(1..5);
        let alpha = random_alpha(&mut rng, k);
        let assignments: Vec<ClassDistribution> =
            (0..n).map(|_| random_distribution(&mut rng, k)).collect();
        let weights = EnsembleWeights::new(
            WeightScheme::Fixed,
            (0..n).map(|_| rng.gen_range(0.1..1.0)).collect(),
        )
        .unwrap();
        let lambda_t = rng.gen_range(0.0..1.5);
        // wide clamp bounds keep the loss smooth at the sampled point
        let gen = GenEdlOptions {
            kl_coefficient: 1.0 / k as f64,
            clamp_lo: -1e9,
            clamp_hi: 1e9,
        };
        let gen_opt = if case % 2 == 0 { None } else { Some(&gen) };
        let loss =
            weighted_multiweak_edl_loss(&alpha, &assignments, &weights, lambda_t, gen_opt)
                .unwrap();
        check_grad(
            |a| {
                weighted_multiweak_edl_loss(
                    &DirichletParams::new(a.to_vec()).unwrap(),
                    &assignments,
                    &weights,
                    lambda_t,
                    gen_opt,
                )
                .unwrap()
                .value
            },
            alpha.alpha(),
            &loss.grad,
            "weighted edl",
        );
    }
}

#[test]
fn dpo_and_cdpo_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(108);
    for _ in 0..CASES {
        let c = rng.gen_range(-3.0..3.0);
        let r = rng.gen_range(-3.0..3.0);
        let beta = rng.gen_range(0.2..4.0);
        let loss = dpo_loss(c, r, beta);
        check_grad(
            |x| dpo_loss(x[0], x[1], beta).value,
            &[c, r],
            &loss.grad,
            "dpo",
        );

        let eps = rng.gen_range(0.0..1.0);
        let closs = cdpo_loss(c, r, beta, eps).unwrap();
        check_grad(
            |x| cdpo_loss(x[0], x[1], beta, eps).unwrap().value,
            &[c, r],
            &closs.grad,
            "cdpo",
        );
    }
}

fn random_classifier_batch(
    rng: &mut ChaCha20Rng,
    n_features: usize,
    k: usize,
    weak: bool,
) -> Vec<ClassificationSample> {
    let n_samples = rng.gen_range(1..4);
    (0..n_samples)
        .map(|_| {
            let features = (0..n_features).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let supervision = if weak {
                let n = rng.gen_range(1..4);
                let labels = (0..n)
                    .map(|_| {
                        let conf = random_distribution(rng, k);
                        let hard = ws2s_core::label_types::harden(&conf);
                        ws2s_core::label_types::WeakLabelClassification::new(hard, conf).unwrap()
                    })
                    .collect();
                Supervision::Weak {
                    labels,
                    weights: EnsembleWeights::new(
                        WeightScheme::Fixed,
                        (0..n).map(|_| rng.gen_range(0.2..1.0)).collect(),
                    )
                    .unwrap(),
                }
            } else {
                Supervision::Truth(HardLabel::new(rng.gen_range(0..k)))
            };
            ClassificationSample {
                features,
                supervision,
            }
        })
        .collect()
}

/// Parameter-space finite differences for the classifier objectives.
#[test]
fn classifier_parameter_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(109);
    let kinds = [
        (ClassifierLossKind::CrossEntropy, HeadMode::Softmax, false),
        (ClassifierLossKind::NaiveMultiweak, HeadMode::Softmax, true),
        (ClassifierLossKind::WeightedEdl, HeadMode::Edl, true),
    ];
    for round in 0..12 {
        let (kind, head, weak) = kinds[round % kinds.len()];
        let config = ClassifierConfig {
            n_features: 3,
            hidden: 4,
            n_classes: 3,
            head,
        };
        let mut model = ClassifierModel::new(config, rng.gen());
        let batch = random_classifier_batch(&mut rng, 3, 3, weak);
        let state = LossState {
            gamma: 0.0,
            lambda_t: rng.gen_range(0.0..1.0),
        };
        let (_, grad) = classifier_gradients(&model, &batch, kind, state).unwrap();
        let base = model.params().to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += H;
            model.set_params(&plus);
            let (lp, _) = classifier_gradients(&model, &batch, kind, state).unwrap();
            let mut minus = base.clone();
            minus[i] -= H;
            model.set_params(&minus);
            let (lm, _) = classifier_gradients(&model, &batch, kind, state).unwrap();
            model.set_params(&base);
            let fd = (lp - lm) / (2.0 * H);
            assert!(
                rel_err(fd, grad[i]) <= TOL,
                "classifier {kind:?} param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }
}

/// Parameter-space finite differences for the generation-mode objectives,
/// including the naive multi-teacher sequence loss and the bridged
/// evidential loss.
#[test]
fn generator_parameter_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(110);
    let config = GeneratorConfig {
        vocab: 6,
        embed: 3,
        window: 4,
        hidden: 4,
        pad_id: 0,
        head: HeadMode::Softmax,
    };
    for round in 0..8 {
        let mut model = GeneratorModel::new(config, rng.gen());
        let n = rng.gen_range(1..3);
        let targets: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let t = rng.gen_range(1..5);
                (0..t).map(|_| rng.gen_range(0..6)).collect()
            })
            .collect();
        let weights = EnsembleWeights::new(
            WeightScheme::Fixed,
            (0..n).map(|_| rng.gen_range(0.2..1.0)).collect(),
        )
        .unwrap();
        let sample = GenerationSample {
            prompt: vec![rng.gen_range(0..6)],
            supervision: GenSupervision::WeakSequences { targets, weights },
        };
        let spec = GeneratorLossSpec {
            kind: GeneratorLossKind::NaiveMultiweak,
            schedule: TrainSchedule::default(),
            aux: false,
            soft_mode: ws2s_core::bridge::SoftLabelMode::Full,
        };
        let state = LossState {
            gamma: 0.0,
            lambda_t: 0.0,
        };
        let batch = [sample];
        let (_, grad) = generator_gradients(&model, &batch, &spec, state).unwrap();
        let base = model.params().to_vec();
        for i in (round % 2..base.len()).step_by(2) {
            let mut plus = base.clone();
            plus[i] += H;
            model.set_params(&plus);
            let (lp, _) = generator_gradients(&model, &batch, &spec, state).unwrap();
            let mut minus = base.clone();
            minus[i] -= H;
            model.set_params(&minus);
            let (lm, _) = generator_gradients(&model, &batch, &spec, state).unwrap();
            model.set_params(&base);
            let fd = (lp - lm) / (2.0 * H);
            assert!(
                rel_err(fd, grad[i]) <= TOL,
                "generation naive param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }
}
