use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{HeadMode, StepModel};
use crate::error::CoreError;
use crate::label_types::{ClassDistribution, DirichletParams};
use crate::numeric::softmax;
use crate::Result;

/// Architecture of the fixed-window autoregressive generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab: usize,
    pub embed: usize,
    /// Context window in tokens; shorter contexts are left-padded.
    pub window: usize,
    pub hidden: usize,
    pub pad_id: usize,
    pub head: HeadMode,
}

/// Token embeddings → concatenated window → tanh hidden → vocab logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    /// Layout: Emb (V×E row-major), W1 (H×(W·E) row-major), b1 (H),
    /// W2 (V×H row-major), b2 (V).
    params: Vec<f64>,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        assert!(config.pad_id < config.vocab, "pad id must be in vocab");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = Self::count(&config);
        let mut params = vec![0.0; n];
        let (v, e, w, h) = (config.vocab, config.embed, config.window, config.hidden);
        let re = 0.5;
        let r1 = (6.0 / (w * e + h) as f64).sqrt();
        let r2 = (6.0 / (h + v) as f64).sqrt();
        let emb_len = v * e;
        let w1_len = h * w * e;
        for p in params.iter_mut().take(emb_len) {
            *p = rng.gen_range(-re..re);
        }
        for p in params.iter_mut().skip(emb_len).take(w1_len) {
            *p = rng.gen_range(-r1..r1);
        }
        let w2_start = emb_len + w1_len + h;
        for p in params.iter_mut().skip(w2_start).take(v * h) {
            *p = rng.gen_range(-r2..r2);
        }
        Self { config, params }
    }

    fn count(c: &GeneratorConfig) -> usize {
        c.vocab * c.embed
            + c.hidden * c.window * c.embed
            + c.hidden
            + c.vocab * c.hidden
            + c.vocab
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

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let c = &self.config;
        let emb_len = c.vocab * c.embed;
        let w1_len = c.hidden * c.window * c.embed;
        (
            emb_len,
            emb_len + w1_len,
            emb_len + w1_len + c.hidden,
            emb_len + w1_len + c.hidden + c.vocab * c.hidden,
        )
    }

    /// Last `window` tokens of prompt ++ prefix, left-padded with `pad_id`.
    pub(crate) fn window_ids(&self, prompt: &[usize], prefix: &[usize]) -> Result<Vec<usize>> {
        let w = self.config.window;
        for &t in prompt.iter().chain(prefix) {
            if t >= self.config.vocab {
                return Err(CoreError::UnknownSymbol(format!("token id {t}")));
            }
        }
        let total = prompt.len() + prefix.len();
        let mut out = vec![self.config.pad_id; w.saturating_sub(total)];
        let keep = total.min(w);
        let tail: Vec<usize> = prompt
            .iter()
            .chain(prefix)
            .skip(total - keep)
            .cloned()
            .collect();
        out.extend(tail);
        Ok(out)
    }

    /// Forward pass on a full window, returning (x, hidden, logits) caches.
    pub(crate) fn forward_window(&self, window: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = &self.config;
        debug_assert_eq!(window.len(), c.window);
        let (emb_end, w1_end, b1_end, w2_end) = self.offsets();
        let emb = &self.params[..emb_end];
        let w1 = &self.params[emb_end..w1_end];
        let b1 = &self.params[w1_end..b1_end];
        let w2 = &self.params[b1_end..w2_end];
        let b2 = &self.params[w2_end..];

        let xe = c.window * c.embed;
        let mut x = vec![0.0; xe];
        for (slot, &tok) in window.iter().enumerate() {
            x[slot * c.embed..(slot + 1) * c.embed]
                .copy_from_slice(&emb[tok * c.embed..(tok + 1) * c.embed]);
        }
        let mut hid = vec![0.0; c.hidden];
        for j in 0..c.hidden {
            let mut z = b1[j];
            let row = &w1[j * xe..(j + 1) * xe];
            for (wi, xi) in row.iter().zip(&x) {
                z += wi * xi;
            }
            hid[j] = z.tanh();
        }
        let mut logits = vec![0.0; c.vocab];
        for v in 0..c.vocab {
            let mut z = b2[v];
            let row = &w2[v * c.hidden..(v + 1) * c.hidden];
            for (wi, hi) in row.iter().zip(&hid) {
                z += wi * hi;
            }
            logits[v] = z;
        }
        (x, hid, logits)
    }

    /// Accumulate parameter gradients for one step given d loss / d logits.
    pub(crate) fn backward_step(
        &self,
        window: &[usize],
        x: &[f64],
        hidden: &[f64],
        grad_logits: &[f64],
        grad_out: &mut [f64],
    ) {
        let c = &self.config;
        let (emb_end, w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &self.params[emb_end..w1_end];
        let w2 = &self.params[b1_end..w2_end];
        let xe = c.window * c.embed;

        // output layer
        for v in 0..c.vocab {
            let g = grad_logits[v];
            if g == 0.0 {
                continue;
            }
            let row = &mut grad_out[b1_end + v * c.hidden..b1_end + (v + 1) * c.hidden];
            for (slot, hi) in row.iter_mut().zip(hidden) {
                *slot += g * hi;
            }
            grad_out[w2_end + v] += g;
        }
        // hidden layer and embeddings
        let mut dx = vec![0.0; xe];
        for j in 0..c.hidden {
            let mut dh = 0.0;
            for v in 0..c.vocab {
                dh += grad_logits[v] * w2[v * c.hidden + j];
            }
            let dz = dh * (1.0 - hidden[j] * hidden[j]);
            if dz == 0.0 {
                continue;
            }
            let row = &w1[j * xe..(j + 1) * xe];
            let grow = &mut grad_out[emb_end + j * xe..emb_end + (j + 1) * xe];
            for i in 0..xe {
                grow[i] += dz * x[i];
                dx[i] += dz * row[i];
            }
            grad_out[w1_end + j] += dz;
        }
        for (slot, &tok) in window.iter().enumerate() {
            let grow = &mut grad_out[tok * c.embed..(tok + 1) * c.embed];
            for (g, d) in grow.iter_mut().zip(&dx[slot * c.embed..(slot + 1) * c.embed]) {
                *g += d;
            }
        }
    }

    fn distribution_from_logits(&self, logits: &[f64]) -> Result<ClassDistribution> {
        match self.config.head {
            HeadMode::Softmax => ClassDistribution::new(softmax(logits)),
            HeadMode::Edl => Ok(DirichletParams::from_logits(logits).mean()),
        }
    }
}

impl StepModel for GeneratorModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn step_logits(&self, prompt: &[usize], prefix: &[usize]) -> Result<Vec<f64>> {
        let window = self.window_ids(prompt, prefix)?;
        Ok(self.forward_window(&window).2)
    }

    fn step_distribution(&self, prompt: &[usize], prefix: &[usize]) -> Result<ClassDistribution> {
        let logits = self.step_logits(prompt, prefix)?;
        self.distribution_from_logits(&logits)
    }

    fn context_window(&self) -> usize {
        self.config.window
    }
}

/// Next-token distribution for an explicit context of at most `window` tokens.
pub fn generator_step(model: &GeneratorModel, context: &[usize]) -> Result<ClassDistribution> {
    if context.len() > model.config.window {
        return Err(CoreError::ContextOverflow {
            prompt_len: context.len(),
            window: model.config.window,
        });
    }
    model.step_distribution(context, &[])
}
