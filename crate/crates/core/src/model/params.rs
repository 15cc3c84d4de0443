use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PpaError, Result};
use crate::matrix::RealMatrix;

/// Shape of the toy transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Longest sequence the learned positional table covers.
    pub max_len: usize,
    /// Start the unembedding at zero so every initial logit is 0.
    pub zero_unembedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: 64,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            max_len: 256,
            zero_unembedding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(PpaError::Domain(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(PpaError::Domain(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

/// Weights of one pre-norm attention + MLP block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: RealMatrix,
    pub ln1_bias: RealMatrix,
    pub w_q: RealMatrix,
    pub w_k: RealMatrix,
    pub w_v: RealMatrix,
    pub w_o: RealMatrix,
    pub ln2_gain: RealMatrix,
    pub ln2_bias: RealMatrix,
    pub w_up: RealMatrix,
    pub b_up: RealMatrix,
    pub w_down: RealMatrix,
    pub b_down: RealMatrix,
}

/// Every trainable tensor of the model. Also used as the gradient and
/// optimizer-state container, since those share the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub rng_seed: u64,
    pub token_embedding: RealMatrix,
    pub position_embedding: RealMatrix,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: RealMatrix,
    pub lnf_bias: RealMatrix,
    pub unembedding: RealMatrix,
}

fn ones(n: usize) -> RealMatrix {
    let mut m = RealMatrix::zeros(1, n);
    m.fill(1.0);
    m
}

impl ModelParams {
    /// Seeded initialization; the same seed always gives the same bits.
    pub fn init(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let d = config.d_model;
        let ff = config.d_ff();
        let proj = 1.0 / (d as f64).sqrt();
        let down = 1.0 / (ff as f64).sqrt() / (2.0 * config.n_layers as f64).sqrt();
        let token_embedding = RealMatrix::randn(config.vocab, d, 1.0, &mut rng);
        let position_embedding = RealMatrix::randn(config.max_len, d, 1.0, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: ones(d),
                ln1_bias: RealMatrix::zeros(1, d),
                w_q: RealMatrix::randn(d, d, proj, &mut rng),
                w_k: RealMatrix::randn(d, d, proj, &mut rng),
                w_v: RealMatrix::randn(d, d, proj, &mut rng),
                w_o: RealMatrix::randn(
                    d,
                    d,
                    proj / (2.0 * config.n_layers as f64).sqrt(),
                    &mut rng,
                ),
                ln2_gain: ones(d),
                ln2_bias: RealMatrix::zeros(1, d),
                w_up: RealMatrix::randn(d, ff, proj, &mut rng),
                b_up: RealMatrix::zeros(1, ff),
                w_down: RealMatrix::randn(ff, d, down, &mut rng),
                b_down: RealMatrix::zeros(1, d),
            })
            .collect();
        let unembedding = if config.zero_unembedding {
            RealMatrix::zeros(d, config.vocab)
        } else {
            RealMatrix::randn(d, config.vocab, proj, &mut rng)
        };
        Ok(ModelParams {
            config,
            rng_seed,
            token_embedding,
            position_embedding,
            layers,
            lnf_gain: ones(d),
            lnf_bias: RealMatrix::zeros(1, d),
            unembedding,
        })
    }

    /// Same layout, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Tensors in declaration order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &RealMatrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let named = [
                ("ln1_gain", &l.ln1_gain),
                ("ln1_bias", &l.ln1_bias),
                ("w_q", &l.w_q),
                ("w_k", &l.w_k),
                ("w_v", &l.w_v),
                ("w_o", &l.w_o),
                ("ln2_gain", &l.ln2_gain),
                ("ln2_bias", &l.ln2_bias),
                ("w_up", &l.w_up),
                ("b_up", &l.b_up),
                ("w_down", &l.w_down),
                ("b_down", &l.b_down),
            ];
            out.extend(named.into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        out.push(("lnf_gain".to_string(), &self.lnf_gain));
        out.push(("lnf_bias".to_string(), &self.lnf_bias));
        out.push(("unembedding".to_string(), &self.unembedding));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut RealMatrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            (
                "position_embedding".to_string(),
                &mut self.position_embedding,
            ),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let named = [
                ("ln1_gain", &mut l.ln1_gain),
                ("ln1_bias", &mut l.ln1_bias),
                ("w_q", &mut l.w_q),
                ("w_k", &mut l.w_k),
                ("w_v", &mut l.w_v),
                ("w_o", &mut l.w_o),
                ("ln2_gain", &mut l.ln2_gain),
                ("ln2_bias", &mut l.ln2_bias),
                ("w_up", &mut l.w_up),
                ("b_up", &mut l.b_up),
                ("w_down", &mut l.w_down),
                ("b_down", &mut l.b_down),
            ];
            out.extend(named.into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        out.push(("lnf_gain".to_string(), &mut self.lnf_gain));
        out.push(("lnf_bias".to_string(), &mut self.lnf_bias));
        out.push(("unembedding".to_string(), &mut self.unembedding));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}
