//! Training objectives with analytic gradients.
//!
//! Every function returns a [`LossValue`] whose gradient is taken with
//! respect to the operation's immediate model-side input: pre-softmax logits
//! for the cross-entropy family, Dirichlet concentrations for the evidential
//! family, and the pair of policy log-ratios for DPO/cDPO. Callers that need
//! parameter gradients chain these through the model's backward pass (see
//! [`crate::models`]); the evidential losses chain through
//! α = softplus(logit) + 1 when driven from logits.

use crate::error::CoreError;
use crate::label_types::{
    harden, ClassDistribution, DirichletParams, EnsembleWeights, HardLabel, TrainSchedule,
};
use crate::models::StepModel;
use crate::numeric::{digamma, ln_gamma, log_softmax, sigmoid, softplus, trigamma};
use crate::Result;

/// A scalar loss plus its gradient with respect to the operation's input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn zeros(arity: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; arity],
        }
    }

    fn add_scaled(&mut self, other: &LossValue, scale: f64) {
        self.value += scale * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += scale * o;
        }
    }
}

/// Training target: a committed class or a full distribution.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(HardLabel),
    Soft(&'a ClassDistribution),
}

impl Target<'_> {
    fn check_arity(&self, k: usize) -> Result<()> {
        let ok = match self {
            Target::Hard(h) => h.class_index < k,
            Target::Soft(d) => d.len() == k,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch(format!(
                "target does not fit arity {k}"
            )))
        }
    }
}

/// Cross-entropy −Σ t_k log softmax(logits)_k; gradient softmax − t.
pub fn cross_entropy(logits: &[f64], target: &Target) -> Result<LossValue> {
    if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::ShapeMismatch(
            "logits must be non-empty and finite".into(),
        ));
    }
    target.check_arity(logits.len())?;
    let log_p = log_softmax(logits);
    let p: Vec<f64> = log_p.iter().map(|x| x.exp()).collect();
    match target {
        Target::Hard(h) => {
            let value = -log_p[h.class_index];
            let mut grad = p;
            grad[h.class_index] -= 1.0;
            Ok(LossValue { value, grad })
        }
        Target::Soft(d) => {
            let value = -d
                .probs()
                .iter()
                .zip(&log_p)
                .map(|(t, lp)| t * lp)
                .sum::<f64>();
            let grad = p
                .iter()
                .zip(d.probs())
                .map(|(pi, ti)| pi - ti)
                .collect();
            Ok(LossValue { value, grad })
        }
    }
}

/// Self-training weight γ at `step`, growing linearly to `gamma_max`.
pub fn gamma_at(step: usize, schedule: &TrainSchedule) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(CoreError::ScheduleRange {
            step,
            total_steps: schedule.total_steps,
        });
    }
    if schedule.total_steps == 0 {
        return Ok(0.0);
    }
    Ok(schedule.gamma_max * step as f64 / schedule.total_steps as f64)
}

/// Base objective the auxiliary confidence loss mixes over.
#[derive(Debug, Clone, Copy)]
pub enum AuxBase {
    CrossEntropy,
    /// Evidential base; carries the current KL annealing coefficient.
    Edl { lambda_t: f64 },
}

/// Convex mix (1−γ)·weak + γ·self of two loss terms over the same input.
pub fn mix_aux(weak_term: &LossValue, self_term: &LossValue, gamma: f64) -> Result<LossValue> {
    if weak_term.grad.len() != self_term.grad.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "aux terms have arity {} vs {}",
            weak_term.grad.len(),
            self_term.grad.len()
        )));
    }
    let mut out = LossValue::zeros(weak_term.grad.len());
    out.add_scaled(weak_term, 1.0 - gamma);
    out.add_scaled(self_term, gamma);
    Ok(out)
}

/// Auxiliary confidence loss: (1−γ)·base(logits, weak) + γ·base(logits, self),
/// where the self target is the model's own hardened prediction held constant
/// (no gradient flows through the argmax).
pub fn aux_confidence_loss(
    logits: &[f64],
    weak_target: &Target,
    gamma: f64,
    base: AuxBase,
) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::ShapeMismatch(format!(
            "gamma {gamma} not in [0, 1]"
        )));
    }
    match base {
        AuxBase::CrossEntropy => {
            let weak = cross_entropy(logits, weak_target)?;
            let probs = crate::numeric::softmax(logits);
            let self_label = harden(&ClassDistribution::new(probs)?);
            let self_term = cross_entropy(logits, &Target::Hard(self_label))?;
            mix_aux(&weak, &self_term, gamma)
        }
        AuxBase::Edl { lambda_t } => {
            let alpha = DirichletParams::from_logits(logits);
            let weak = edl_from_logits(logits, &alpha, weak_target, lambda_t)?;
            let self_label = harden(&alpha.mean());
            let self_term =
                edl_from_logits(logits, &alpha, &Target::Hard(self_label), lambda_t)?;
            mix_aux(&weak, &self_term, gamma)
        }
    }
}

/// EDL loss driven from logits: α = exp(logits)+1, hard or soft target,
/// gradient chained back to the logits.
fn edl_from_logits(
    logits: &[f64],
    alpha: &DirichletParams,
    target: &Target,
    lambda_t: f64,
) -> Result<LossValue> {
    let in_alpha = match target {
        Target::Hard(h) => edl_loss(alpha, *h, lambda_t)?,
        Target::Soft(d) => {
            edl_soft_assignment(alpha, d, lambda_t, 1.0)?
        }
    };
    let grad = crate::models::chain_evidence(&in_alpha.grad, logits);
    Ok(LossValue {
        value: in_alpha.value,
        grad,
    })
}

/// Weighted sum of per-teacher cross-entropies, Σᵢ λᵢ · CE(logits, yᵢ).
pub fn naive_multiweak_loss(
    logits: &[f64],
    weak_labels: &[HardLabel],
    weights: &EnsembleWeights,
) -> Result<LossValue> {
    if weak_labels.is_empty() {
        return Err(CoreError::ShapeMismatch("no weak labels".into()));
    }
    if weak_labels.len() != weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} labels vs {} weights",
            weak_labels.len(),
            weights.len()
        )));
    }
    let mut out = LossValue::zeros(logits.len());
    for (label, lambda) in weak_labels.iter().zip(weights.lambdas()) {
        let term = cross_entropy(logits, &Target::Hard(*label))?;
        out.add_scaled(&term, *lambda);
    }
    Ok(out)
}

/// Teacher-forced sequence loss value with per-step logit gradients.
#[derive(Debug, Clone)]
pub struct SequenceLossValue {
    pub value: f64,
    /// `step_grads[i][j]` is d value / d logits at step j of sequence i.
    pub step_grads: Vec<Vec<Vec<f64>>>,
}

/// Generation-mode naive loss: Σᵢ λᵢ (1/Tᵢ) Σⱼ CE at step j under teacher
/// forcing on sequence i. Sequences are token ids in the scoring model's
/// vocabulary.
pub fn naive_multiweak_sequence_loss<M: StepModel + ?Sized>(
    model: &M,
    prompt: &[usize],
    weak_sequences: &[Vec<usize>],
    weights: &EnsembleWeights,
) -> Result<SequenceLossValue> {
    if weak_sequences.len() != weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} sequences vs {} weights",
            weak_sequences.len(),
            weights.len()
        )));
    }
    let mut value = 0.0;
    let mut step_grads = Vec::with_capacity(weak_sequences.len());
    for (seq, lambda) in weak_sequences.iter().zip(weights.lambdas()) {
        if seq.is_empty() {
            return Err(CoreError::EmptySequence("weak target sequence".into()));
        }
        let scale = lambda / seq.len() as f64;
        let mut grads_i = Vec::with_capacity(seq.len());
        for (j, token) in seq.iter().enumerate() {
            let logits = model.step_logits(prompt, &seq[..j])?;
            if *token >= logits.len() {
                return Err(CoreError::UnknownSymbol(format!("token id {token}")));
            }
            let term = cross_entropy(&logits, &Target::Hard(HardLabel::new(*token)))?;
            value += scale * term.value;
            grads_i.push(term.grad.iter().map(|g| scale * g).collect());
        }
        step_grads.push(grads_i);
    }
    Ok(SequenceLossValue { value, step_grads })
}

/// Negative log-likelihood of a one-hot draw under the Dirichlet prior:
/// log α₀ − log α_target, with gradient in α.
pub fn dirichlet_nll(alpha: &DirichletParams, target: HardLabel) -> Result<LossValue> {
    let a = alpha.alpha();
    if target.class_index >= a.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "target {} outside {} classes",
            target.class_index,
            a.len()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::InvalidConcentration(
            "non-finite concentration".into(),
        ));
    }
    let a0 = alpha.strength();
    let value = a0.ln() - a[target.class_index].ln();
    let grad = (0..a.len())
        .map(|k| {
            let mut g = 1.0 / a0;
            if k == target.class_index {
                g -= 1.0 / a[k];
            }
            g
        })
        .collect();
    Ok(LossValue { value, grad })
}

/// KL(Dir(a) ‖ Dir(1)) in closed form.
fn dirichlet_kl_to_uniform(a: &[f64]) -> f64 {
    let k = a.len() as f64;
    let a0: f64 = a.iter().sum();
    let mut v = ln_gamma(a0) - ln_gamma(k);
    for &ai in a {
        v -= ln_gamma(ai);
        v += (ai - 1.0) * (digamma(ai) - digamma(a0));
    }
    v
}

/// Evidence-removal regularizer: builds α̃ = y + (1−y)⊙α and returns
/// λ_t · KL(Dir(α̃) ‖ Dir(1)); gradient in α (zero at the target index).
pub fn dirichlet_kl_regularizer(
    alpha: &DirichletParams,
    target: HardLabel,
    lambda_t: f64,
) -> Result<LossValue> {
    let a = alpha.alpha();
    if target.class_index >= a.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "target {} outside {} classes",
            target.class_index,
            a.len()
        )));
    }
    let k = a.len();
    let masked: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if i == target.class_index { 1.0 } else { ai })
        .collect();
    let m0: f64 = masked.iter().sum();
    let value = lambda_t * dirichlet_kl_to_uniform(&masked);
    let shared = (m0 - k as f64) * trigamma(m0);
    let grad = (0..k)
        .map(|j| {
            if j == target.class_index {
                0.0
            } else {
                lambda_t * ((a[j] - 1.0) * trigamma(a[j]) - shared)
            }
        })
        .collect();
    Ok(LossValue { value, grad })
}

/// Full evidential loss: NLL plus the annealed KL regularizer.
pub fn edl_loss(alpha: &DirichletParams, target: HardLabel, lambda_t: f64) -> Result<LossValue> {
    let mut out = dirichlet_nll(alpha, target)?;
    let reg = dirichlet_kl_regularizer(alpha, target, lambda_t)?;
    out.add_scaled(&reg, 1.0);
    Ok(out)
}

/// Options for generation-mode evidential training.
#[derive(Debug, Clone, Copy)]
pub struct GenEdlOptions {
    /// Extra scaling of the KL term (balances it against the NLL magnitude
    /// in large vocabularies).
    pub kl_coefficient: f64,
    /// Per-token loss clamp.
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl GenEdlOptions {
    pub fn from_schedule(s: &TrainSchedule) -> Self {
        Self {
            kl_coefficient: s.kl_coefficient_gen,
            clamp_lo: s.clamp_lo,
            clamp_hi: s.clamp_hi,
        }
    }
}

/// Σ_k p_k · EDL(α, class k) for one probability assignment p, with the KL
/// term scaled by `kl_scale`. O(K) via shared per-entry precomputation.
fn edl_soft_assignment(
    alpha: &DirichletParams,
    assignment: &ClassDistribution,
    lambda_t: f64,
    kl_scale: f64,
) -> Result<LossValue> {
    let a = alpha.alpha();
    let k = a.len();
    if assignment.len() != k {
        return Err(CoreError::ShapeMismatch(format!(
            "assignment arity {} vs {} classes",
            assignment.len(),
            k
        )));
    }
    let p = assignment.probs();
    let a0 = alpha.strength();
    let lam = lambda_t * kl_scale;

    // NLL part: Σ_k p_k (ln a0 − ln a_k); gradient 1/a0 − p_j/a_j.
    let mut value = a0.ln() - p.iter().zip(a).map(|(pk, ak)| pk * ak.ln()).sum::<f64>();
    let mut grad: Vec<f64> = (0..k).map(|j| 1.0 / a0 - p[j] / a[j]).collect();

    if lam != 0.0 {
        // Shared sums over the unmasked concentrations.
        let sum_lngamma: f64 = a.iter().map(|&x| ln_gamma(x)).sum();
        let sum_apsi: f64 = a.iter().map(|&x| (x - 1.0) * digamma(x)).sum();
        let lngamma_k = ln_gamma(k as f64);
        let psi1: Vec<f64> = a.iter().map(|&x| trigamma(x)).collect();

        // Per-target-class corrections: masking class t sets α̃_t = 1 and
        // shifts the strength to a0 − α_t + 1.
        let mut c = vec![0.0; k]; // (α̃0(t) − K) ψ'(α̃0(t))
        let mut weighted_c = 0.0; // Σ_t p_t c(t)
        for t in 0..k {
            let m0 = a0 - a[t] + 1.0;
            let klv = ln_gamma(m0) - (sum_lngamma - ln_gamma(a[t])) - lngamma_k
                + (sum_apsi - (a[t] - 1.0) * digamma(a[t]))
                - (m0 - k as f64) * digamma(m0);
            value += lam * p[t] * klv;
            c[t] = (m0 - k as f64) * trigamma(m0);
            weighted_c += p[t] * c[t];
        }
        for j in 0..k {
            // Σ_{t≠j} p_t [(α_j−1)ψ'(α_j) − c(t)]
            let own = (a[j] - 1.0) * psi1[j];
            grad[j] += lam * (own * (1.0 - p[j]) - (weighted_c - p[j] * c[j]));
        }
    }
    Ok(LossValue { value, grad })
}

/// Weighted multi-teacher evidential loss, Σᵢ λᵢ Σ_k p_k⁽ⁱ⁾ · EDL(α, k).
///
/// Each teacher contributes its full probability assignment over the K
/// classes. With `gen` options present the KL term is scaled by the
/// generation coefficient and the resulting per-token value is clamped
/// (gradient zero where the clamp binds).
pub fn weighted_multiweak_edl_loss(
    alpha: &DirichletParams,
    assignments: &[ClassDistribution],
    weights: &EnsembleWeights,
    lambda_t: f64,
    gen: Option<&GenEdlOptions>,
) -> Result<LossValue> {
    if assignments.is_empty() {
        return Err(CoreError::ShapeMismatch("no probability assignments".into()));
    }
    if assignments.len() != weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} assignments vs {} weights",
            assignments.len(),
            weights.len()
        )));
    }
    let kl_scale = gen.map(|g| g.kl_coefficient).unwrap_or(1.0);
    let mut out = LossValue::zeros(alpha.len());
    for (assignment, lambda) in assignments.iter().zip(weights.lambdas()) {
        let term = edl_soft_assignment(alpha, assignment, lambda_t, kl_scale)?;
        out.add_scaled(&term, *lambda);
    }
    if let Some(g) = gen {
        if out.value < g.clamp_lo {
            out = LossValue {
                value: g.clamp_lo,
                grad: vec![0.0; alpha.len()],
            };
        } else if out.value > g.clamp_hi {
            out = LossValue {
                value: g.clamp_hi,
                grad: vec![0.0; alpha.len()],
            };
        }
    }
    Ok(out)
}

/// Standard DPO loss −log σ(β·(logratio_c − logratio_r)).
///
/// Gradient is with respect to `(logratio_c, logratio_r)` in that order.
pub fn dpo_loss(policy_logratio_c: f64, policy_logratio_r: f64, beta: f64) -> LossValue {
    let x = beta * (policy_logratio_c - policy_logratio_r);
    let value = softplus(-x);
    let s = sigmoid(-x); // σ(-x) = 1 - σ(x)
    LossValue {
        value,
        grad: vec![-beta * s, beta * s],
    }
}

/// Conservative DPO: (1−ε)·DPO(c, r) + ε·DPO(r, c).
pub fn cdpo_loss(
    policy_logratio_c: f64,
    policy_logratio_r: f64,
    beta: f64,
    epsilon: f64,
) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CoreError::InvalidEpsilon(epsilon));
    }
    let fwd = dpo_loss(policy_logratio_c, policy_logratio_r, beta);
    let rev = dpo_loss(policy_logratio_r, policy_logratio_c, beta);
    // rev's gradient is in (r, c) order; swap back when combining.
    Ok(LossValue {
        value: (1.0 - epsilon) * fwd.value + epsilon * rev.value,
        grad: vec![
            (1.0 - epsilon) * fwd.grad[0] + epsilon * rev.grad[1],
            (1.0 - epsilon) * fwd.grad[1] + epsilon * rev.grad[0],
        ],
    })
}
