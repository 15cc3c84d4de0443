//! Analytic gradients against central finite differences.

use ppa_core::attention::{attention_backward, sparse_gather_attention};
use ppa_core::mask::MaskConfig;
use ppa_core::model::{loss_and_grads, Example, ModelConfig, ModelParams};
use ppa_core::RealMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Relative error with an absolute floor so entries that are exactly or
/// nearly zero are judged on an absolute scale.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn attention_objective(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    cfg: &MaskConfig,
    d_out: &RealMatrix,
) -> f64 {
    let out = sparse_gather_attention(q, k, v, cfg, 0.6).unwrap().output;
    out.data()
        .iter()
        .zip(d_out.data())
        .map(|(a, b)| a * b)
        .sum()
}

#[test]
fn attention_backward_matches_finite_differences() {
    for seed in 0..10u64 {
        for p in [0.0, 0.5, 1.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = MaskConfig::new(p, 1).unwrap();
            let mut inputs = [
                RealMatrix::randn(4, 3, 1.0, &mut rng),
                RealMatrix::randn(4, 3, 1.0, &mut rng),
                RealMatrix::randn(4, 3, 1.0, &mut rng),
            ];
            let d_out = RealMatrix::randn(4, 3, 1.0, &mut rng);
            let g =
                attention_backward(&inputs[0], &inputs[1], &inputs[2], &cfg, 0.6, &d_out).unwrap();
            let analytic = [g.dq, g.dk, g.dv];
            for which in 0..3 {
                for idx in 0..12 {
                    let orig = inputs[which].data()[idx];
                    inputs[which].data_mut()[idx] = orig + H;
                    let plus =
                        attention_objective(&inputs[0], &inputs[1], &inputs[2], &cfg, &d_out);
                    inputs[which].data_mut()[idx] = orig - H;
                    let minus =
                        attention_objective(&inputs[0], &inputs[1], &inputs[2], &cfg, &d_out);
                    inputs[which].data_mut()[idx] = orig;
                    let numeric = (plus - minus) / (2.0 * H);
                    let a = analytic[which].data()[idx];
                    assert!(
                        rel_err(a, numeric) <= TOL,
                        "seed {seed} p {p} tensor {which} idx {idx}: {a} vs {numeric}"
                    );
                }
            }
        }
    }
}

fn miniature(seed: u64) -> (ModelParams, Vec<Example>) {
    let cfg = ModelConfig {
        vocab: 7,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        max_len: 6,
        zero_unembedding: false,
    };
    let params = ModelParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let batch = (0..2)
        .map(|_| Example {
            tokens: (0..6).map(|_| rng.gen_range(0..7)).collect(),
            targets: vec![(5, rng.gen_range(0..7)), (2, rng.gen_range(0..7))],
        })
        .collect();
    (params, batch)
}

#[test]
fn model_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        for p in [0.0, 0.5, 1.0] {
            let cfg = MaskConfig::new(p, 2).unwrap();
            let (mut params, batch) = miniature(seed);
            let (_, grads) = loss_and_grads(&params, &batch, &cfg).unwrap();
            let analytic: Vec<(String, Vec<f64>)> = grads
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.data().to_vec()))
                .collect();
            let n_tensors = analytic.len();
            for t in 0..n_tensors {
                let len = analytic[t].1.len();
                for idx in 0..len {
                    let orig = params.tensors()[t].1.data()[idx];
                    params.tensors_mut()[t].1.data_mut()[idx] = orig + H;
                    let plus = loss_and_grads(&params, &batch, &cfg).unwrap().0;
                    params.tensors_mut()[t].1.data_mut()[idx] = orig - H;
                    let minus = loss_and_grads(&params, &batch, &cfg).unwrap().0;
                    params.tensors_mut()[t].1.data_mut()[idx] = orig;
                    let numeric = (plus - minus) / (2.0 * H);
                    let a = analytic[t].1[idx];
                    assert!(
                        rel_err(a, numeric) <= TOL,
                        "seed {seed} p {p} {} [{idx}]: {a} vs {numeric}",
                        analytic[t].0
                    );
                }
            }
        }
    }
}
