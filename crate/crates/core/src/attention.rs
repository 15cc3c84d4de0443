//! Single-head causal attention under a PPA mask.
//!
//! Two forward paths compute the same function: a dense reference that
//! scores every causal `(q, k)` pair and zeroes masked weights, and a sparse
//! path that gathers only the attended keys of each row. Both reduce in
//! ascending key order, so results are reproducible bit for bit.

use crate::error::{PpaError, Result};
use crate::mask::{full_mask, mask_rows, MaskConfig, MaskRow};
use crate::matrix::RealMatrix;

/// Multiply-accumulates charged per (query, key) entry per head dimension:
/// one for the score dot product and one for the value accumulation.
pub const FLOPS_PER_ENTRY: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: RealMatrix,
    /// Multiply-accumulates performed, `FLOPS_PER_ENTRY * d * entries`.
    pub flops: u64,
    /// Number of (query, key) pairs that received a softmax weight.
    pub attended_entries: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub dq: RealMatrix,
    pub dk: RealMatrix,
    pub dv: RealMatrix,
}

/// Masked, max-shifted softmax. Masked entries come out exactly zero.
pub fn softmax_row(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(PpaError::Shape(format!(
            "{} scores but {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(PpaError::AllMasked);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= sum);
    Ok(out)
}

fn check_shapes(q: &RealMatrix, k: &RealMatrix, v: &RealMatrix) -> Result<(usize, usize)> {
    let (len, d) = q.shape();
    if len == 0 || d == 0 {
        return Err(PpaError::Shape("Q must be at least 1x1".into()));
    }
    if k.shape() != (len, d) || v.shape() != (len, d) {
        return Err(PpaError::Shape(format!(
            "Q is {:?}, K is {:?}, V is {:?}; all must match",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok((len, d))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four fixed lanes, reduced in a fixed order
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reference attention that evaluates every causal pair and applies the
/// dense `L x L` mask.
pub fn dense_masked_attention(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    cfg: &MaskConfig,
    scale: f64,
) -> Result<AttentionOutput> {
    let (len, d) = check_shapes(q, k, v)?;
    let mask = full_mask(len, cfg)?;
    let mut output = RealMatrix::zeros(len, d);
    let mut attended = 0u64;
    for row in 0..len {
        let scores: Vec<f64> = (0..=row)
            .map(|col| scale * dot(q.row(row), k.row(col)))
            .collect();
        let row_mask = &mask.row(row)[..=row];
        attended += row_mask.iter().filter(|&&m| m).count() as u64;
        let weights = softmax_row(&scores, row_mask)?;
        let out = output.row_mut(row);
        for (col, w) in weights.iter().enumerate() {
            axpy(*w, v.row(col), out);
        }
    }
    let causal = (len * (len + 1) / 2) as u64;
    Ok(AttentionOutput {
        output,
        flops: FLOPS_PER_ENTRY * d as u64 * causal,
        attended_entries: attended,
    })
}

/// Attention that touches only the attended keys of each row.
pub fn sparse_gather_attention(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    cfg: &MaskConfig,
    scale: f64,
) -> Result<AttentionOutput> {
    check_shapes(q, k, v)?;
    let rows = mask_rows(q.rows(), cfg)?;
    sparse_attention_rows(q, k, v, &rows, scale)
}

fn check_rows(len: usize, rows: &[MaskRow]) -> Result<()> {
    if rows.len() != len {
        return Err(PpaError::Shape(format!(
            "{} mask rows for {len} queries",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.query != i || row.attended.is_empty() {
            return Err(PpaError::Shape(format!("mask row {i} is malformed")));
        }
        if row.attended.iter().any(|&key| key > i) {
            return Err(PpaError::Domain(format!("mask row {i} attends the future")));
        }
    }
    Ok(())
}

/// Sparse attention over explicit index lists, one per query.
pub fn sparse_attention_rows(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    rows: &[MaskRow],
    scale: f64,
) -> Result<AttentionOutput> {
    let (len, _) = check_shapes(q, k, v)?;
    check_rows(len, rows)?;
    Ok(gather_forward(q, k, v, rows, scale))
}

/// Row `i` of `q` attends the keys listed in `rows[i]`; `k` and `v` hold
/// every position. Callers guarantee indices are in range.
pub(crate) fn gather_forward(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    rows: &[MaskRow],
    scale: f64,
) -> AttentionOutput {
    let d = q.cols();
    let mut output = RealMatrix::zeros(rows.len(), d);
    let mut weights = Vec::new();
    let mut attended = 0u64;
    for (i, row) in rows.iter().enumerate() {
        let qi = q.row(i);
        weights.clear();
        weights.extend(row.attended.iter().map(|&key| scale * dot(qi, k.row(key))));
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        weights.iter_mut().for_each(|w| *w = (*w - max).exp());
        let sum: f64 = weights.iter().sum();
        let out = output.row_mut(i);
        for (&key, w) in row.attended.iter().zip(&weights) {
            axpy(w / sum, v.row(key), out);
        }
        attended += row.attended.len() as u64;
    }
    AttentionOutput {
        output,
        flops: FLOPS_PER_ENTRY * d as u64 * attended,
        attended_entries: attended,
    }
}

/// Gradients of `sum(O ⊙ dO)` with respect to `Q`, `K` and `V`.
pub fn attention_backward(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    cfg: &MaskConfig,
    scale: f64,
    d_out: &RealMatrix,
) -> Result<AttentionGrads> {
    check_shapes(q, k, v)?;
    let rows = mask_rows(q.rows(), cfg)?;
    attention_backward_rows(q, k, v, &rows, scale, d_out)
}

pub fn attention_backward_rows(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    rows: &[MaskRow],
    scale: f64,
    d_out: &RealMatrix,
) -> Result<AttentionGrads> {
    let (len, d) = check_shapes(q, k, v)?;
    check_rows(len, rows)?;
    if d_out.shape() != (len, d) {
        return Err(PpaError::Shape(format!(
            "dO is {:?}, expected {:?}",
            d_out.shape(),
            (len, d)
        )));
    }
    Ok(gather_backward(q, k, v, rows, scale, d_out))
}

/// Backward of [`gather_forward`]. `dq` has one row per entry of `rows`;
/// `dk` and `dv` cover every key position.
pub(crate) fn gather_backward(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    rows: &[MaskRow],
    scale: f64,
    d_out: &RealMatrix,
) -> AttentionGrads {
    let d = q.cols();
    let mut dq = RealMatrix::zeros(rows.len(), d);
    let mut dk = RealMatrix::zeros(k.rows(), d);
    let mut dv = RealMatrix::zeros(v.rows(), d);
    let mut probs = Vec::new();
    let mut dprobs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let qi = q.row(i);
        let doi = d_out.row(i);
        if doi.iter().all(|&g| g == 0.0) {
            continue;
        }
        probs.clear();
        probs.extend(row.attended.iter().map(|&key| scale * dot(qi, k.row(key))));
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        probs.iter_mut().for_each(|w| *w = (*w - max).exp());
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|w| *w /= sum);

        dprobs.clear();
        dprobs.extend(row.attended.iter().map(|&key| dot(doi, v.row(key))));
        let centre: f64 = probs.iter().zip(&dprobs).map(|(p, g)| p * g).sum();

        for ((&key, &p), &g) in row.attended.iter().zip(&probs).zip(&dprobs) {
            axpy(p, doi, dv.row_mut(key));
            let ds = scale * p * (g - centre);
            axpy(ds, k.row(key), dq.row_mut(i));
            axpy(ds, qi, dk.row_mut(key));
        }
    }
    AttentionGrads { dq, dk, dv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::P_GRID;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qkv(len: usize, d: usize, seed: u64) -> (RealMatrix, RealMatrix, RealMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            RealMatrix::randn(len, d, 1.0, &mut rng),
            RealMatrix::randn(len, d, 1.0, &mut rng),
            RealMatrix::randn(len, d, 1.0, &mut rng),
        )
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_row(&[5.0], &[true]).unwrap(), vec![1.0]);
        assert_eq!(softmax_row(&[1.0; 4], &[true; 4]).unwrap(), vec![0.25; 4]);
        let w = softmax_row(&[1000.0, 999.0], &[true, true]).unwrap();
        // e / (1 + e), written out to extended precision
        let hi = 0.731_058_578_630_004_9;
        assert!((w[0] - hi).abs() < 1e-15 && (w[1] - (1.0 - hi)).abs() < 1e-15);
        let w = softmax_row(&[3.0, 1e9, 3.0], &[true, false, true]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_eq!(
            softmax_row(&[1.0, 2.0], &[false, false]),
            Err(PpaError::AllMasked)
        );
    }

    #[test]
    fn single_token_returns_value() {
        let (q, k, v) = qkv(1, 5, 1);
        let cfg = MaskConfig::new(0.5, 3).unwrap();
        let out = dense_masked_attention(&q, &k, &v, &cfg, 0.7).unwrap();
        assert_eq!(out.output, v);
        let g = attention_backward(&q, &k, &v, &cfg, 0.7, &v).unwrap();
        assert_eq!(g.dv, v);
        assert!(g.dq.data().iter().chain(g.dk.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn identical_keys_average_values() {
        let (q, _, v) = qkv(12, 4, 2);
        let mut k = RealMatrix::zeros(12, 4);
        for r in 0..12 {
            k.row_mut(r).copy_from_slice(&[0.3, -1.0, 2.0, 0.5]);
        }
        let cfg = MaskConfig::new(0.5, 2).unwrap();
        let out = sparse_gather_attention(&q, &k, &v, &cfg, 0.5).unwrap();
        for row in mask_rows(12, &cfg).unwrap() {
            for c in 0..4 {
                let mean: f64 =
                    row.attended.iter().map(|&key| v.get(key, c)).sum::<f64>() / row.len() as f64;
                assert!((out.output.get(row.query, c) - mean).abs() < 1e-12);
            }
        }
    }

    // Plain causal attention, written independently of the kernels above.
    fn causal_oracle(q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, scale: f64) -> RealMatrix {
        let (len, d) = q.shape();
        let mut out = RealMatrix::zeros(len, d);
        for i in 0..len {
            let s: Vec<f64> = (0..=i)
                .map(|j| scale * (0..d).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>())
                .collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..d {
                out.set(i, c, (0..=i).map(|j| e[j] / z * v.get(j, c)).sum());
            }
        }
        out
    }

    #[test]
    fn full_attention_matches_causal_oracle() {
        let (q, k, v) = qkv(16, 8, 7);
        let cfg = MaskConfig::new(1.0, 1).unwrap();
        let scale = 1.0 / 8f64.sqrt();
        let dense = dense_masked_attention(&q, &k, &v, &cfg, scale).unwrap();
        assert!(dense.output.max_abs_diff(&causal_oracle(&q, &k, &v, scale)) <= 1e-12);
    }

    #[test]
    fn sparse_matches_dense_and_counts() {
        for (seed, &p) in P_GRID.iter().enumerate() {
            let (q, k, v) = qkv(64, 4, seed as u64);
            let cfg = MaskConfig::new(p, 3).unwrap();
            let dense = dense_masked_attention(&q, &k, &v, &cfg, 0.5).unwrap();
            let sparse = sparse_gather_attention(&q, &k, &v, &cfg, 0.5).unwrap();
            assert!(dense.output.max_abs_diff(&sparse.output) <= 1e-9);
            let total = crate::mask::total_attended(64, &cfg).unwrap();
            assert_eq!(sparse.attended_entries, total);
            assert_eq!(dense.attended_entries, total);
            assert_eq!(sparse.flops, FLOPS_PER_ENTRY * 4 * total);
            assert_eq!(dense.flops, FLOPS_PER_ENTRY * 4 * 64 * 65 / 2);
        }
    }

    #[test]
    fn window_only_work_is_linear() {
        let cfg = MaskConfig::new(0.0, 6).unwrap();
        let per_token = |len: usize| {
            let (q, k, v) = qkv(len, 4, 0);
            let out = sparse_gather_attention(&q, &k, &v, &cfg, 1.0).unwrap();
            out.flops as f64 / len as f64
        };
        let (a, b) = (per_token(1000), per_token(4000));
        assert!((b / a - 1.0).abs() < 0.01);
    }

    #[test]
    fn shape_errors() {
        let (q, k, _) = qkv(4, 3, 0);
        let v = RealMatrix::zeros(4, 2);
        let cfg = MaskConfig::new(0.5, 2).unwrap();
        assert!(matches!(
            dense_masked_attention(&q, &k, &v, &cfg, 1.0),
            Err(PpaError::Shape(_))
        ));
        assert!(sparse_gather_attention(&q, &k, &v, &cfg, 1.0).is_err());
        let bad = RealMatrix::zeros(3, 3);
        assert!(attention_backward(&q, &k, &k, &cfg, 1.0, &bad).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let (q, k, v) = qkv(9, 3, 4);
        let cfg = MaskConfig::new(0.5, 2).unwrap();
        let g = attention_backward(&q, &k, &v, &cfg, 1.0, &RealMatrix::zeros(9, 3)).unwrap();
        for m in [&g.dq, &g.dk, &g.dv] {
            assert!(m.data().iter().all(|&x| x == 0.0));
        }
    }
}
