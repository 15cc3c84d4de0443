//! Forward and backward passes of the toy transformer.
//!
//! ```text
//! x = tok[t] + pos[i]
//! per block:  x += Wo · attn(LN1(x))     (PPA mask, per head)
//!             x += W2 · relu(W1 · LN2(x) + b1) + b2
//! logits = LNf(x) · U
//! ```

use crate::attention::{gather_backward, gather_forward};
use crate::error::{PpaError, Result};
use crate::mask::{mask_rows, MaskConfig, MaskRow};
use crate::matrix::RealMatrix;

use super::params::{LayerParams, ModelParams};

const LN_EPS: f64 = 1e-5;

/// One training sequence with the positions whose next-token prediction is
/// scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// `(position, expected token)` pairs.
    pub targets: Vec<(usize, usize)>,
}

struct LnCache {
    xhat: RealMatrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &RealMatrix, gain: &RealMatrix, bias: &RealMatrix) -> (RealMatrix, LnCache) {
    let (n, d) = x.shape();
    let mut xhat = RealMatrix::zeros(n, d);
    let mut y = RealMatrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for c in 0..d {
            yr[c] = xh[c] * gain.data()[c] + bias.data()[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `d_gain`, `d_bias`.
fn layer_norm_backward(
    dy: &RealMatrix,
    cache: &LnCache,
    gain: &RealMatrix,
    d_gain: &mut RealMatrix,
    d_bias: &mut RealMatrix,
) -> RealMatrix {
    let (n, d) = dy.shape();
    let mut dx = RealMatrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        if dyr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xh = cache.xhat.row(r);
        for c in 0..d {
            d_gain.data_mut()[c] += dyr[c] * xh[c];
            d_bias.data_mut()[c] += dyr[c];
            dxhat[c] = dyr[c] * gain.data()[c];
        }
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let scale = cache.rstd[r] / d as f64;
        let out = dx.row_mut(r);
        for c in 0..d {
            out[c] = scale * (d as f64 * dxhat[c] - sum - xh[c] * dot);
        }
    }
    dx
}

fn add_row_bias(x: &mut RealMatrix, bias: &RealMatrix) {
    for r in 0..x.rows() {
        for (v, b) in x.row_mut(r).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

fn column_sums_into(x: &RealMatrix, out: &mut RealMatrix) {
    for r in 0..x.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
}

struct LayerCache {
    ln1: LnCache,
    h1: RealMatrix,
    /// Positions whose post-attention state this layer computes; `None`
    /// means every position.
    out_pos: Option<Vec<usize>>,
    h1_out: Option<RealMatrix>,
    q: RealMatrix,
    k: RealMatrix,
    v: RealMatrix,
    attn: RealMatrix,
    ln2: LnCache,
    h2: RealMatrix,
    up: RealMatrix,
    act: RealMatrix,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    /// Final residual stream, one row per output position of the last layer.
    residual: RealMatrix,
}

fn check_tokens(params: &ModelParams, tokens: &[usize]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(PpaError::Domain("token sequence is empty".into()));
    }
    if tokens.len() > cfg.max_len {
        return Err(PpaError::Overlong {
            len: tokens.len(),
            max: cfg.max_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab) {
        return Err(PpaError::OutOfVocab {
            token: t,
            vocab: cfg.vocab,
        });
    }
    Ok(())
}

fn pick_rows(x: &RealMatrix, positions: &[usize]) -> RealMatrix {
    let mut out = RealMatrix::zeros(positions.len(), x.cols());
    for (i, &p) in positions.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(p));
    }
    out
}

fn scatter_add(src: &RealMatrix, positions: &[usize], dst: &mut RealMatrix) {
    for (i, &p) in positions.iter().enumerate() {
        for (o, g) in dst.row_mut(p).iter_mut().zip(src.row(i)) {
            *o += g;
        }
    }
}

/// One block. `x` holds every position; the result holds `out_pos` rows
/// (or every row when `out_pos` is `None`).
fn layer_forward(
    layer: &LayerParams,
    x: &RealMatrix,
    rows: &[MaskRow],
    out_pos: Option<&[usize]>,
    n_heads: usize,
) -> (RealMatrix, LayerCache) {
    let (h1, ln1) = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias);
    let k = h1.matmul(&layer.w_k);
    let v = h1.matmul(&layer.w_v);
    let (h1_out, mut x_out, sub_rows) = match out_pos {
        Some(pos) => (
            Some(pick_rows(&h1, pos)),
            pick_rows(x, pos),
            Some(pos.iter().map(|&p| rows[p].clone()).collect::<Vec<_>>()),
        ),
        None => (None, x.clone(), None),
    };
    let q = h1_out.as_ref().unwrap_or(&h1).matmul(&layer.w_q);
    let rows_out: &[MaskRow] = sub_rows.as_deref().unwrap_or(&rows[..x.rows()]);
    let dh = q.cols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = RealMatrix::zeros(q.rows(), q.cols());
    for h in 0..n_heads {
        let out = gather_forward(
            &q.column_block(h * dh, dh),
            &k.column_block(h * dh, dh),
            &v.column_block(h * dh, dh),
            rows_out,
            scale,
        );
        attn.set_column_block(h * dh, &out.output);
    }
    x_out.add_assign(&attn.matmul(&layer.w_o));
    let (h2, ln2) = layer_norm(&x_out, &layer.ln2_gain, &layer.ln2_bias);
    let mut up = h2.matmul(&layer.w_up);
    add_row_bias(&mut up, &layer.b_up);
    let mut act = up.clone();
    act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut down = act.matmul(&layer.w_down);
    add_row_bias(&mut down, &layer.b_down);
    x_out.add_assign(&down);
    let cache = LayerCache {
        ln1,
        h1,
        out_pos: out_pos.map(|p| p.to_vec()),
        h1_out,
        q,
        k,
        v,
        attn,
        ln2,
        h2,
        up,
        act,
    };
    (x_out, cache)
}

/// Runs the blocks. With `last_pos` set, the final block only computes the
/// listed positions, which is all a loss at those positions needs.
fn forward_cached(
    params: &ModelParams,
    tokens: &[usize],
    rows: &[MaskRow],
    last_pos: Option<&[usize]>,
) -> ForwardCache {
    let cfg = &params.config;
    let len = tokens.len();
    let mut x = RealMatrix::zeros(len, cfg.d_model);
    for (i, &t) in tokens.iter().enumerate() {
        let out = x.row_mut(i);
        for ((o, a), b) in out
            .iter_mut()
            .zip(params.token_embedding.row(t))
            .zip(params.position_embedding.row(i))
        {
            *o = a + b;
        }
    }
    let n = params.layers.len();
    let mut layers = Vec::with_capacity(n);
    for (li, layer) in params.layers.iter().enumerate() {
        let out_pos = if li + 1 == n { last_pos } else { None };
        let (next, cache) = layer_forward(layer, &x, rows, out_pos, cfg.n_heads);
        x = next;
        layers.push(cache);
    }
    ForwardCache {
        layers,
        residual: x,
    }
}

/// Logits for every position, `L x vocab`.
pub fn forward(params: &ModelParams, tokens: &[usize], cfg: &MaskConfig) -> Result<RealMatrix> {
    check_tokens(params, tokens)?;
    let rows = mask_rows(tokens.len(), cfg)?;
    let cache = forward_cached(params, tokens, &rows, None);
    let (hf, _) = layer_norm(&cache.residual, &params.lnf_gain, &params.lnf_bias);
    Ok(hf.matmul(&params.unembedding))
}

/// Logits only at the given positions; `rows` must cover the sequence.
pub(crate) fn logits_at(
    params: &ModelParams,
    tokens: &[usize],
    positions: &[usize],
    rows: &[MaskRow],
) -> Result<RealMatrix> {
    check_tokens(params, tokens)?;
    check_positions(tokens.len(), positions)?;
    let cache = forward_cached(params, tokens, rows, Some(positions));
    let (hf, _) = layer_norm(&cache.residual, &params.lnf_gain, &params.lnf_bias);
    Ok(hf.matmul(&params.unembedding))
}

fn check_positions(len: usize, positions: &[usize]) -> Result<()> {
    match positions.iter().find(|&&p| p >= len) {
        Some(p) => Err(PpaError::Domain(format!(
            "target position {p} outside sequence of length {len}"
        ))),
        None => Ok(()),
    }
}

/// Softmax cross-entropy of one logit row; writes `softmax - onehot` into `grad`.
fn cross_entropy(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[target] -= 1.0;
    sum.ln() + max - logits[target]
}

/// Mean cross-entropy over every target in the batch and its gradient.
///
/// Per-example gradients are accumulated in ascending example order.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[Example],
    cfg: &MaskConfig,
) -> Result<(f64, ModelParams)> {
    let n_targets: usize = batch.iter().map(|e| e.targets.len()).sum();
    if batch.is_empty() || n_targets == 0 {
        return Err(PpaError::EmptyBatch);
    }
    let max_len = batch.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    let rows = mask_rows(max_len, cfg)?;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let weight = 1.0 / n_targets as f64;
    for example in batch {
        total += example_backward(params, example, &rows, weight, &mut grads)?;
    }
    Ok((total * weight, grads))
}

/// Backward through one block. `dx_out` matches the block's output rows;
/// returns the gradient for every input position.
fn layer_backward(
    layer: &LayerParams,
    lc: &LayerCache,
    rows: &[MaskRow],
    mut dx_out: RealMatrix,
    lg: &mut LayerParams,
    n_heads: usize,
) -> RealMatrix {
    let len = lc.h1.rows();
    // MLP
    lc.act.t_matmul_acc(&dx_out, &mut lg.w_down);
    column_sums_into(&dx_out, &mut lg.b_down);
    let mut dup = dx_out.matmul_t(&layer.w_down);
    for (g, &u) in dup.data_mut().iter_mut().zip(lc.up.data()) {
        if u <= 0.0 {
            *g = 0.0;
        }
    }
    lc.h2.t_matmul_acc(&dup, &mut lg.w_up);
    column_sums_into(&dup, &mut lg.b_up);
    let dh2 = dup.matmul_t(&layer.w_up);
    dx_out.add_assign(&layer_norm_backward(
        &dh2,
        &lc.ln2,
        &layer.ln2_gain,
        &mut lg.ln2_gain,
        &mut lg.ln2_bias,
    ));

    // attention
    lc.attn.t_matmul_acc(&dx_out, &mut lg.w_o);
    let dattn = dx_out.matmul_t(&layer.w_o);
    let sub_rows: Option<Vec<MaskRow>> = lc
        .out_pos
        .as_ref()
        .map(|pos| pos.iter().map(|&p| rows[p].clone()).collect());
    let rows_out: &[MaskRow] = sub_rows.as_deref().unwrap_or(&rows[..len]);
    let d = lc.q.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = RealMatrix::zeros(lc.q.rows(), d);
    let mut dk = RealMatrix::zeros(len, d);
    let mut dv = RealMatrix::zeros(len, d);
    for h in 0..n_heads {
        let g = gather_backward(
            &lc.q.column_block(h * dh, dh),
            &lc.k.column_block(h * dh, dh),
            &lc.v.column_block(h * dh, dh),
            rows_out,
            scale,
            &dattn.column_block(h * dh, dh),
        );
        dq.set_column_block(h * dh, &g.dq);
        dk.set_column_block(h * dh, &g.dk);
        dv.set_column_block(h * dh, &g.dv);
    }
    let h1_out = lc.h1_out.as_ref().unwrap_or(&lc.h1);
    h1_out.t_matmul_acc(&dq, &mut lg.w_q);
    lc.h1.t_matmul_acc(&dk, &mut lg.w_k);
    lc.h1.t_matmul_acc(&dv, &mut lg.w_v);
    let mut dh1 = dk.matmul_t(&layer.w_k);
    dh1.add_assign(&dv.matmul_t(&layer.w_v));
    let dq_in = dq.matmul_t(&layer.w_q);
    let mut dx = match &lc.out_pos {
        Some(pos) => {
            scatter_add(&dq_in, pos, &mut dh1);
            let mut dx = RealMatrix::zeros(len, d);
            scatter_add(&dx_out, pos, &mut dx);
            dx
        }
        None => {
            dh1.add_assign(&dq_in);
            dx_out
        }
    };
    dx.add_assign(&layer_norm_backward(
        &dh1,
        &lc.ln1,
        &layer.ln1_gain,
        &mut lg.ln1_gain,
        &mut lg.ln1_bias,
    ));
    dx
}

fn example_backward(
    params: &ModelParams,
    example: &Example,
    rows: &[MaskRow],
    weight: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    let cfg = &params.config;
    let tokens = &example.tokens;
    check_tokens(params, tokens)?;
    let positions: Vec<usize> = example.targets.iter().map(|t| t.0).collect();
    check_positions(tokens.len(), &positions)?;
    if let Some(&(_, t)) = example.targets.iter().find(|t| t.1 >= cfg.vocab) {
        return Err(PpaError::OutOfVocab {
            token: t,
            vocab: cfg.vocab,
        });
    }
    let cache = forward_cached(params, tokens, rows, Some(&positions));

    let (hf, lnf) = layer_norm(&cache.residual, &params.lnf_gain, &params.lnf_bias);
    let logits = hf.matmul(&params.unembedding);
    let mut dlogits = RealMatrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &(_, target)) in example.targets.iter().enumerate() {
        loss += cross_entropy(logits.row(i), target, dlogits.row_mut(i));
    }
    dlogits.scale(weight);
    hf.t_matmul_acc(&dlogits, &mut grads.unembedding);
    let dhf = dlogits.matmul_t(&params.unembedding);
    let mut dx = layer_norm_backward(
        &dhf,
        &lnf,
        &params.lnf_gain,
        &mut grads.lnf_gain,
        &mut grads.lnf_bias,
    );

    for ((layer, lc), lg) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        dx = layer_backward(layer, lc, rows, dx, lg, cfg.n_heads);
    }

    for (i, &t) in tokens.iter().enumerate() {
        let g = dx.row(i);
        for (o, v) in grads.token_embedding.row_mut(t).iter_mut().zip(g) {
            *o += v;
        }
        for (o, v) in grads.position_embedding.row_mut(i).iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(loss)
}
