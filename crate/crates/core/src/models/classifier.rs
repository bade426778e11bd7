use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::HeadMode;
use crate::error::CoreError;
use crate::label_types::{harden, ClassDistribution, DirichletParams, HardLabel};
use crate::numeric::softmax;
use crate::Result;

/// Architecture of a feature classifier: one tanh hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_features: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub head: HeadMode,
}

/// features → tanh hidden → K logits, with a softmax or evidential head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    /// Layout: W1 (H×F row-major), b1 (H), W2 (K×H row-major), b2 (K).
    params: Vec<f64>,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = Self::count(&config);
        let mut params = vec![0.0; n];
        let (f, h, k) = (config.n_features, config.hidden, config.n_classes);
        let r1 = (6.0 / (f + h) as f64).sqrt();
        let r2 = (6.0 / (h + k) as f64).sqrt();
        for p in params.iter_mut().take(h * f) {
            *p = rng.gen_range(-r1..r1);
        }
        let w2_start = h * f + h;
        for p in params.iter_mut().skip(w2_start).take(k * h) {
            *p = rng.gen_range(-r2..r2);
        }
        Self { config, params }
    }

    fn count(c: &ClassifierConfig) -> usize {
        c.hidden * c.n_features + c.hidden + c.n_classes * c.hidden + c.n_classes
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    fn slices(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (f, h, k) = (
            self.config.n_features,
            self.config.hidden,
            self.config.n_classes,
        );
        let w1 = &self.params[..h * f];
        let b1 = &self.params[h * f..h * f + h];
        let w2 = &self.params[h * f + h..h * f + h + k * h];
        let b2 = &self.params[h * f + h + k * h..];
        (w1, b1, w2, b2)
    }

    /// Forward pass returning (hidden activations, logits).
    pub(crate) fn forward_cached(&self, features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (f, h, k) = (
            self.config.n_features,
            self.config.hidden,
            self.config.n_classes,
        );
        if features.len() != f {
            return Err(CoreError::ShapeMismatch(format!(
                "{} features vs expected {f}",
                features.len()
            )));
        }
        let (w1, b1, w2, b2) = self.slices();
        let mut hid = vec![0.0; h];
        for j in 0..h {
            let mut z = b1[j];
            let row = &w1[j * f..(j + 1) * f];
            for (wi, xi) in row.iter().zip(features) {
                z += wi * xi;
            }
            hid[j] = z.tanh();
        }
        let mut logits = vec![0.0; k];
        for c in 0..k {
            let mut z = b2[c];
            let row = &w2[c * h..(c + 1) * h];
            for (wi, hi) in row.iter().zip(&hid) {
                z += wi * hi;
            }
            logits[c] = z;
        }
        Ok((hid, logits))
    }

    /// Logits for a feature vector.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(features)?.1)
    }

    /// Predictive class distribution: softmax of the logits, or the Dirichlet
    /// mean α/α₀ for an evidential head.
    pub fn predictive(&self, features: &[f64]) -> Result<ClassDistribution> {
        let logits = self.logits(features)?;
        match self.config.head {
            HeadMode::Softmax => ClassDistribution::new(softmax(&logits)),
            HeadMode::Edl => Ok(DirichletParams::from_logits(&logits).mean()),
        }
    }

    /// Committed prediction.
    pub fn predict(&self, features: &[f64]) -> Result<HardLabel> {
        Ok(harden(&self.predictive(features)?))
    }

    /// Accumulate parameter gradients for one sample given d loss / d logits.
    pub(crate) fn backward(
        &self,
        features: &[f64],
        hidden: &[f64],
        grad_logits: &[f64],
        grad_out: &mut [f64],
    ) {
        let (f, h, k) = (
            self.config.n_features,
            self.config.hidden,
            self.config.n_classes,
        );
        debug_assert_eq!(grad_out.len(), self.params.len());
        let (_, _, w2, _) = self.slices();
        let w1_len = h * f;
        let w2_start = w1_len + h;
        let b2_start = w2_start + k * h;
        // output layer
        for c in 0..k {
            let g = grad_logits[c];
            let row = &mut grad_out[w2_start + c * h..w2_start + (c + 1) * h];
            for (slot, hi) in row.iter_mut().zip(hidden) {
                *slot += g * hi;
            }
            grad_out[b2_start + c] += g;
        }
        // hidden layer
        for j in 0..h {
            let mut dh = 0.0;
            for c in 0..k {
                dh += grad_logits[c] * w2[c * h + j];
            }
            let dz = dh * (1.0 - hidden[j] * hidden[j]);
            let row = &mut grad_out[j * f..(j + 1) * f];
            for (slot, xi) in row.iter_mut().zip(features) {
                *slot += dz * xi;
            }
            grad_out[w1_len + j] += dz;
        }
    }
}

/// Deterministic forward pass; in evidential mode also returns α.
pub fn classifier_forward(
    model: &ClassifierModel,
    features: &[f64],
) -> Result<(Vec<f64>, Option<DirichletParams>)> {
    let logits = model.logits(features)?;
    let alpha = match model.config.head {
        HeadMode::Softmax => None,
        HeadMode::Edl => Some(DirichletParams::from_logits(&logits)),
    };
    Ok((logits, alpha))
}
