//! Mask construction and counting for power-based partial attention.
//!
//! Positions are 0-based absolute token indices. The relative distance
//! between a query `q` and a key `k <= q` is `j = q - k + 1`, so `j = 1` is
//! the token itself. Relative distance `j` is a stride position when
//! `floor(j^p) - floor((j-1)^p) == 1`, with `0^p := 0` for every `p`.
//! The window covers the `window` most recent tokens including the query.

use std::collections::BTreeSet;

use num_bigint::BigUint;

use crate::error::{PpaError, Result};

/// Default cap on `L` for anything that materializes an `L x L` mask.
pub const DEFAULT_DENSE_CAP: usize = 8192;

/// The nine exponents swept by default: `0, 0.125, ..., 1`.
pub const P_GRID: [f64; 9] = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

/// Relative nudge applied before flooring a floating-point power.
const FLOOR_NUDGE: f64 = 1e-9;
/// `powf` results this close (relatively) to an integer get an exact check.
const BOUNDARY_BAND: f64 = 1e-9;
/// Largest denominator recognised for the exact check.
const MAX_EXACT_DEN: u32 = 64;

/// One PPA variant: the exponent `p` and the sliding window width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub p: f64,
    pub window: usize,
}

impl MaskConfig {
    pub fn new(p: f64, window: usize) -> Result<Self> {
        let cfg = MaskConfig { p, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if self.window == 0 {
            return Err(PpaError::Domain("window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sorted attended key positions for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRow {
    pub query: usize,
    pub attended: Vec<usize>,
}

impl MaskRow {
    pub fn len(&self) -> usize {
        self.attended.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attended.is_empty()
    }
}

/// The mask variants drawn side by side when illustrating PPA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    /// Causal, every `k`-th relative distance starting with the token itself.
    FixedStride(usize),
    /// Encoder-style stride that depends on the whole sequence length.
    DynamicStride,
    /// Stride positions only, no window.
    IncrementalStride,
    /// Stride positions united with the sliding window (the PPA mask).
    IncrementalPlusWindow,
}

/// Row-major `n x n` boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        BoolMatrix {
            n,
            data: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PpaError::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Largest `r` with `r^n <= x`.
pub fn integer_root(x: u64, n: u32) -> u64 {
    if n == 1 || x < 2 {
        return x;
    }
    let fits = |r: u64| -> bool {
        (r as u128)
            .checked_pow(n)
            .map(|v| v <= x as u128)
            .unwrap_or(false)
    };
    let mut r = (x as f64).powf(1.0 / n as f64).floor() as u64;
    while r > 0 && !fits(r) {
        r -= 1;
    }
    while fits(r + 1) {
        r += 1;
    }
    r
}

/// `p` as `num / den` when it is a rational with a small denominator.
fn small_rational(p: f64) -> Option<(u32, u32)> {
    (1..=MAX_EXACT_DEN).find_map(|den| {
        let num = (p * den as f64).round();
        ((num / den as f64 - p).abs() < 1e-12).then_some((num as u32, den))
    })
}

/// `a^ea <= b^eb`, exactly.
fn pow_le(a: u64, ea: u32, b: u64, eb: u32) -> bool {
    BigUint::from(a).pow(ea) <= BigUint::from(b).pow(eb)
}

/// `floor(j^p)` with `0^p := 0`.
///
/// Exponents `1/n` with `n <= 6` go through an exact integer root. Otherwise
/// `powf` decides, except when its result is within rounding distance of an
/// integer: then a small-rational `p = num/den` is settled exactly by
/// comparing `r^den` with `j^num`, and any other `p` falls back to a relative
/// nudge of `1e-9`.
pub fn floor_pow(j: u64, p: f64) -> u64 {
    if j == 0 {
        return 0;
    }
    if p == 0.0 {
        return 1;
    }
    if p == 1.0 {
        return j;
    }
    for n in 2..=6u32 {
        if (p * n as f64 - 1.0).abs() < 1e-12 {
            return integer_root(j, n);
        }
    }
    let x = (j as f64).powf(p);
    let r = x.round();
    if (x - r).abs() > BOUNDARY_BAND * x {
        return x.floor() as u64;
    }
    match small_rational(p) {
        Some((num, den)) => {
            let r = r as u64;
            if pow_le(r, den, j, num) {
                r
            } else {
                r - 1
            }
        }
        None => (x + FLOOR_NUDGE * x).floor() as u64,
    }
}

#[inline]
fn indicator(j: u64, p: f64) -> bool {
    floor_pow(j, p) != floor_pow(j - 1, p)
}

/// `floor(j^p) - floor((j-1)^p)` for relative distance `j >= 1`.
pub fn stride_indicator(j: u64, p: f64) -> Result<u8> {
    if j < 1 {
        return Err(PpaError::Domain("relative distance j must be >= 1".into()));
    }
    check_p(p)?;
    Ok(floor_pow(j, p).saturating_sub(floor_pow(j - 1, p)) as u8)
}

/// All stride relative distances `j <= limit`, ascending.
pub fn stride_positions(limit: u64, p: f64) -> Result<Vec<u64>> {
    check_p(p)?;
    Ok((1..=limit).filter(|&j| indicator(j, p)).collect())
}

pub fn is_attended(query: usize, key: usize, cfg: &MaskConfig) -> Result<bool> {
    cfg.validate()?;
    if key > query {
        return Err(PpaError::Domain(format!(
            "key {key} lies after query {query}; future positions are never attended"
        )));
    }
    let dist = query - key;
    Ok(dist < cfg.window || indicator(dist as u64 + 1, cfg.p))
}

/// Build a row from a precomputed ascending stride set covering `query + 1`.
fn row_from_strides(query: usize, window: usize, strides: &[u64]) -> MaskRow {
    let win_start = (query + 1).saturating_sub(window);
    let mut attended = Vec::with_capacity(window.min(query + 1) + strides.len());
    // strides ascending in j means keys descending; collect those outside the window first
    let far = strides
        .iter()
        .rev()
        .map(|&j| j as usize)
        .filter(|&j| j <= query + 1 && j > window)
        .map(|j| query + 1 - j);
    attended.extend(far);
    attended.extend(win_start..=query);
    MaskRow { query, attended }
}

pub fn mask_row(query: usize, cfg: &MaskConfig) -> Result<MaskRow> {
    cfg.validate()?;
    let strides = stride_positions(query as u64 + 1, cfg.p)?;
    Ok(row_from_strides(query, cfg.window, &strides))
}

/// Every row of an `L`-token mask. Memory is proportional to the number of
/// attended entries, not to `L^2`.
pub fn mask_rows(len: usize, cfg: &MaskConfig) -> Result<Vec<MaskRow>> {
    cfg.validate()?;
    let strides = stride_positions(len as u64, cfg.p)?;
    Ok((0..len)
        .map(|q| row_from_strides(q, cfg.window, &strides))
        .collect())
}

pub fn full_mask(len: usize, cfg: &MaskConfig) -> Result<BoolMatrix> {
    full_mask_with_cap(len, cfg, DEFAULT_DENSE_CAP)
}

pub fn full_mask_with_cap(len: usize, cfg: &MaskConfig, cap: usize) -> Result<BoolMatrix> {
    check_dense_len(len, cap)?;
    let mut m = BoolMatrix::new(len);
    for row in mask_rows(len, cfg)? {
        for k in row.attended {
            m.set(row.query, k, true);
        }
    }
    Ok(m)
}

fn check_dense_len(len: usize, cap: usize) -> Result<()> {
    if len == 0 {
        return Err(PpaError::Domain("sequence length must be >= 1".into()));
    }
    if len > cap {
        return Err(PpaError::Capacity {
            requested: len,
            cap,
        });
    }
    Ok(())
}

/// Number of keys attended by the `i`-th token (1-based).
///
/// The stride set up to distance `i` has exactly `floor(i^p)` members
/// (telescoping), the window contributes `min(i, W)`, and the overlap is the
/// stride positions inside the window.
pub fn attended_count(i: u64, cfg: &MaskConfig) -> Result<u64> {
    if i < 1 {
        return Err(PpaError::Domain("token index i is 1-based".into()));
    }
    cfg.validate()?;
    Ok(count_unchecked(i, cfg))
}

#[inline]
fn count_unchecked(i: u64, cfg: &MaskConfig) -> u64 {
    let w = i.min(cfg.window as u64);
    floor_pow(i, cfg.p) + w - floor_pow(w, cfg.p)
}

/// Total attended entries of an `L`-token mask, in `O(L)` time.
pub fn total_attended(len: u64, cfg: &MaskConfig) -> Result<u64> {
    if len < 1 {
        return Err(PpaError::Domain("sequence length must be >= 1".into()));
    }
    cfg.validate()?;
    Ok((1..=len).map(|i| count_unchecked(i, cfg)).sum())
}

/// Gaps between consecutive stride positions, window excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapStats {
    /// Stride relative distances `<= L`, ascending. `positions[0] == 1`.
    pub positions: Vec<u64>,
    /// `gaps[i] = positions[i + 1] - positions[i]`.
    pub gaps: Vec<u64>,
    /// Largest realized gap, 0 when only `j = 1` is present.
    pub max_gap: u64,
}

impl GapStats {
    /// Gap ending at the 1-based stride index `index` (the gap between the
    /// `index - 1`-th and `index`-th stride positions).
    pub fn gap_at_index(&self, index: usize) -> Option<u64> {
        if index < 2 {
            return None;
        }
        self.gaps.get(index - 2).copied()
    }
}

pub fn gap_stats(cfg: &MaskConfig, len: u64) -> Result<GapStats> {
    cfg.validate()?;
    if cfg.p == 0.0 {
        return Err(PpaError::Domain(
            "gaps are undefined for p = 0: the stride set is {1}".into(),
        ));
    }
    if len < 2 {
        return Err(PpaError::Domain("gap statistics need L >= 2".into()));
    }
    let positions = stride_positions(len, cfg.p)?;
    let gaps: Vec<u64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let max_gap = gaps.iter().copied().max().unwrap_or(0);
    Ok(GapStats {
        positions,
        gaps,
        max_gap,
    })
}

/// Least-squares slope of `ln(total)` against `ln(L)`.
pub fn fit_scaling_exponent(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(PpaError::Degenerate(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|&(l, t)| l.is_nan() || t.is_nan() || l <= 0.0 || t <= 0.0)
    {
        return Err(PpaError::Degenerate(
            "lengths and totals must be positive".into(),
        ));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(PpaError::Degenerate(
            "lengths must be strictly increasing".into(),
        ));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Dense rendering of one of the illustrated mask variants.
pub fn pattern_mask(kind: PatternKind, len: usize, cfg: &MaskConfig) -> Result<BoolMatrix> {
    pattern_mask_with_cap(kind, len, cfg, DEFAULT_DENSE_CAP)
}

pub fn pattern_mask_with_cap(
    kind: PatternKind,
    len: usize,
    cfg: &MaskConfig,
    cap: usize,
) -> Result<BoolMatrix> {
    cfg.validate()?;
    check_dense_len(len, cap)?;
    let mut m = BoolMatrix::new(len);
    match kind {
        PatternKind::FixedStride(stride) => {
            if stride == 0 {
                return Err(PpaError::Domain("fixed stride must be >= 1".into()));
            }
            for q in 0..len {
                for k in 0..=q {
                    m.set(q, k, (q - k) % stride == 0);
                }
            }
        }
        PatternKind::DynamicStride => {
            // Stride depends on the full length, so the pattern is symmetric
            // and includes future keys.
            let stride = ((len as f64).powf(1.0 - cfg.p).ceil() as usize).max(1);
            for q in 0..len {
                for k in 0..len {
                    m.set(q, k, q.abs_diff(k) % stride == 0);
                }
            }
        }
        PatternKind::IncrementalStride => {
            let strides = stride_positions(len as u64, cfg.p)?;
            for q in 0..len {
                for &j in strides.iter().take_while(|&&j| j as usize <= q + 1) {
                    m.set(q, q + 1 - j as usize, true);
                }
            }
        }
        PatternKind::IncrementalPlusWindow => return full_mask_with_cap(len, cfg, cap),
    }
    Ok(m)
}

/// Tokens whose information can reach `query` through `layers` rounds of
/// masked attention.
pub fn reachable_set(query: usize, layers: usize, cfg: &MaskConfig) -> Result<BTreeSet<usize>> {
    cfg.validate()?;
    if layers == 0 {
        return Err(PpaError::Domain("layers must be >= 1".into()));
    }
    let strides = stride_positions(query as u64 + 1, cfg.p)?;
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    seen.insert(query);
    let mut frontier = vec![query];
    for _ in 0..layers {
        let mut next = Vec::new();
        for &node in &frontier {
            for k in row_from_strides(node, cfg.window, &strides).attended {
                if seen.insert(k) {
                    next.push(k);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(seen)
}
