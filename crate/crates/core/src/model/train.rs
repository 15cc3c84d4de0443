use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PpaError, Result};
use crate::mask::{mask_rows, total_attended, MaskConfig};

use super::network::{logits_at, loss_and_grads, Example};
use super::params::ModelParams;
use super::task::RecallTask;

/// RNG stream used for training batches; evaluation uses a different one so
/// held-out sequences never coincide with training sequences.
const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Linear warmup steps before cosine decay to zero.
    pub warmup: usize,
    pub optimizer: Optimizer,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub eval_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1500,
            batch_size: 16,
            lr: 1e-2,
            warmup: 20,
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.98,
                eps: 1e-9,
            },
            grad_clip: Some(1.0),
            eval_examples: 400,
        }
    }
}

impl TrainConfig {
    /// Learning rate at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let t = (step - self.warmup) as f64 / span;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub p: f64,
    pub steps: usize,
    pub initial_loss: f64,
    /// Mean batch loss over the last `min(20, steps)` steps.
    pub final_loss: f64,
    pub eval_accuracy: f64,
    pub attended_entries_per_token: f64,
    pub loss_history: Vec<f64>,
}

struct OptimizerState {
    first: ModelParams,
    second: ModelParams,
    step: usize,
}

impl OptimizerState {
    fn new(params: &ModelParams) -> Self {
        OptimizerState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, opt: Optimizer, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((_, w), (_, g)), (_, m)), (_, v)) in tensors {
            let w = w.data_mut();
            let g = g.data();
            let m = m.data_mut();
            match opt {
                Optimizer::SgdMomentum { momentum } => {
                    for i in 0..w.len() {
                        m[i] = momentum * m[i] + g[i];
                        w[i] -= lr * m[i];
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let v = v.data_mut();
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) {
    let sq: f64 = grads
        .tensors()
        .iter()
        .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        for (_, t) in grads.tensors_mut() {
            t.scale(max_norm / norm);
        }
    }
}

fn check_fits(params: &ModelParams, task: &RecallTask) -> Result<()> {
    task.validate()?;
    if task.vocab != params.config.vocab {
        return Err(PpaError::Domain(format!(
            "task vocabulary {} differs from model vocabulary {}",
            task.vocab, params.config.vocab
        )));
    }
    if task.length > params.config.max_len {
        return Err(PpaError::Overlong {
            len: task.length,
            max: params.config.max_len,
        });
    }
    Ok(())
}

/// Train in place. Identical inputs give a bit-identical report and model.
pub fn train(
    params: &mut ModelParams,
    task: &RecallTask,
    cfg: &MaskConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if train_cfg.steps == 0 || train_cfg.batch_size == 0 {
        return Err(PpaError::Domain("steps and batch_size must be >= 1".into()));
    }
    check_fits(params, task)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);
    let mut state = OptimizerState::new(params);
    let mut history = Vec::with_capacity(train_cfg.steps);
    for step in 0..train_cfg.steps {
        let batch: Vec<Example> = (0..train_cfg.batch_size)
            .map(|_| task.sample(&mut rng).map(|s| s.to_example()))
            .collect::<Result<_>>()?;
        let (loss, mut grads) = loss_and_grads(params, &batch, cfg)?;
        if !loss.is_finite() {
            return Err(PpaError::Diverged { step, loss });
        }
        history.push(loss);
        if let Some(max_norm) = train_cfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        state.apply(params, &grads, train_cfg.optimizer, train_cfg.lr_at(step));
        if !params.is_finite() {
            return Err(PpaError::Diverged {
                step,
                loss: f64::NAN,
            });
        }
    }
    let tail = history.len().min(20);
    let final_loss = history[history.len() - tail..].iter().sum::<f64>() / tail as f64;
    let eval_accuracy = evaluate(params, task, cfg, train_cfg.eval_examples, seed)?;
    let total = total_attended(task.length as u64, cfg)?;
    Ok(TrainReport {
        p: cfg.p,
        steps: train_cfg.steps,
        initial_loss: history[0],
        final_loss,
        eval_accuracy,
        attended_entries_per_token: total as f64 / task.length as f64,
        loss_history: history,
    })
}

/// Fraction of held-out sequences whose argmax logit at the query position
/// is the bound value. Ties resolve to the lowest token id.
pub fn evaluate(
    params: &ModelParams,
    task: &RecallTask,
    cfg: &MaskConfig,
    n_examples: usize,
    seed: u64,
) -> Result<f64> {
    if n_examples == 0 {
        return Err(PpaError::Domain("n_examples must be >= 1".into()));
    }
    check_fits(params, task)?;
    let rows = mask_rows(task.length, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    let mut correct = 0usize;
    for _ in 0..n_examples {
        let sample = task.sample(&mut rng)?;
        let logits = logits_at(params, &sample.tokens, &[sample.query_pos], &rows)?;
        let row = logits.row(0);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best == sample.answer {
            correct += 1;
        }
    }
    Ok(correct as f64 / n_examples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = TrainConfig {
            steps: 100,
            warmup: 10,
            lr: 1.0,
            ..TrainConfig::default()
        };
        assert!((c.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((c.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((c.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(c.lr_at(55) < 0.6 && c.lr_at(55) > 0.4);
        assert!(c.lr_at(99) < 0.01);
    }
}
