//! Dense-versus-sparse kernel agreement and finite-difference gradient checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppa_core::attention::{
    attention_backward, dense_masked_attention, sparse_attention_rows, FLOPS_PER_ENTRY,
};
use ppa_core::mask::mask_rows;
use ppa_core::{MaskConfig, RealMatrix};

use crate::error::{CliError, Result};

pub const DEFAULT_LENGTHS: [usize; 3] = [16, 128, 512];
pub const DEFAULT_DIMS: [usize; 3] = [4, 16, 64];
pub const KERNEL_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const GRAD_LEN: usize = 4;
const GRAD_DIM: usize = 3;
// Small enough that the stride pattern shapes a 4-token mask.
const GRAD_WINDOW: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckGrid {
    pub lengths: Vec<usize>,
    pub dims: Vec<usize>,
    pub p_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seeds for the finite-difference checks on miniature instances.
    pub grad_seeds: Vec<u64>,
    pub window: usize,
    /// Corrupt one sparse index per case; the check must then fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub cases: Vec<CaseResult>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let status = if c.passed { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{} err={:.3e} {status}", c.name, c.error);
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} cases, {failed} failed", self.cases.len());
        out
    }
}

fn case_rng(seed: u64, len: usize, dim: usize, p: f64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((len as u64) << 40) ^ ((dim as u64) << 20) ^ (p * 1024.0) as u64);
    rng
}

fn qkv(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> [RealMatrix; 3] {
    [
        RealMatrix::randn(len, dim, 1.0, rng),
        RealMatrix::randn(len, dim, 1.0, rng),
        RealMatrix::randn(len, dim, 1.0, rng),
    ]
}

fn kernel_case(
    len: usize,
    dim: usize,
    p: f64,
    seed: u64,
    window: usize,
    fault: bool,
) -> Result<CaseResult> {
    let cfg = MaskConfig::new(p, window)?;
    let [q, k, v] = qkv(&mut case_rng(seed, len, dim, p), len, dim);
    let scale = 1.0 / (dim as f64).sqrt();
    let dense = dense_masked_attention(&q, &k, &v, &cfg, scale)?;
    let mut rows = mask_rows(len, &cfg)?;
    if fault {
        // Point the first key of the last row at the query itself, which is
        // already attended: a duplicated index that the kernel cannot detect.
        let last = rows.last_mut().expect("len > 0");
        if last.attended.len() > 1 {
            last.attended[0] = last.query;
        }
    }
    let sparse = sparse_attention_rows(&q, &k, &v, &rows, scale)?;
    let mut error = dense.output.max_abs_diff(&sparse.output);
    let counts_agree = dense.attended_entries == sparse.attended_entries
        && sparse.flops == FLOPS_PER_ENTRY * dim as u64 * sparse.attended_entries;
    if !counts_agree {
        error = f64::INFINITY;
    }
    Ok(CaseResult {
        name: format!("kernel L={len} d={dim} p={p} seed={seed}"),
        error,
        passed: error <= KERNEL_TOL,
    })
}

fn weighted_sum(out: &RealMatrix, w: &RealMatrix) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn gradient_case(p: f64, seed: u64) -> Result<CaseResult> {
    let cfg = MaskConfig::new(p, GRAD_WINDOW)?;
    let mut rng = case_rng(seed, GRAD_LEN, GRAD_DIM, p);
    let [q, k, v] = qkv(&mut rng, GRAD_LEN, GRAD_DIM);
    let d_out = RealMatrix::randn(GRAD_LEN, GRAD_DIM, 1.0, &mut rng);
    let scale = 1.0 / (GRAD_DIM as f64).sqrt();
    let grads = attention_backward(&q, &k, &v, &cfg, scale, &d_out)?;
    let loss = |m: &[RealMatrix; 3]| -> Result<f64> {
        let out = ppa_core::attention::sparse_gather_attention(&m[0], &m[1], &m[2], &cfg, scale)?;
        Ok(weighted_sum(&out.output, &d_out))
    };
    let base = [q, k, v];
    let analytic = [&grads.dq, &grads.dk, &grads.dv];
    let mut worst: f64 = 0.0;
    for which in 0..3 {
        for idx in 0..GRAD_LEN * GRAD_DIM {
            let mut plus = base.clone();
            plus[which].data_mut()[idx] += FD_STEP;
            let mut minus = base.clone();
            minus[which].data_mut()[idx] -= FD_STEP;
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
            let a = analytic[which].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    Ok(CaseResult {
        name: format!("gradient L={GRAD_LEN} d={GRAD_DIM} p={p} seed={seed}"),
        error: worst,
        passed: worst <= GRAD_TOL,
    })
}

pub fn check_kernels(grid: &CheckGrid) -> Result<CheckReport> {
    if grid.lengths.is_empty()
        || grid.dims.is_empty()
        || grid.p_grid.is_empty()
        || grid.seeds.is_empty()
        || grid.grad_seeds.is_empty()
    {
        return Err(CliError::Usage("check grid is empty".into()));
    }
    if grid.lengths.contains(&0) || grid.dims.contains(&0) {
        return Err(CliError::Usage(
            "lengths and dimensions must be positive".into(),
        ));
    }
    let mut report = CheckReport::default();
    for &len in &grid.lengths {
        for &dim in &grid.dims {
            for &p in &grid.p_grid {
                for &seed in &grid.seeds {
                    report.cases.push(kernel_case(
                        len,
                        dim,
                        p,
                        seed,
                        grid.window,
                        grid.inject_fault,
                    )?);
                }
            }
        }
    }
    for &p in &grid.p_grid {
        for &seed in &grid.grad_seeds {
            report.cases.push(gradient_case(p, seed)?);
        }
    }
    Ok(report)
}

/// Turn a report into the command's outcome: the first failing case names
/// the error.
pub fn verdict(report: &CheckReport) -> Result<()> {
    let failed: Vec<&CaseResult> = report.failures().collect();
    match failed.first() {
        None => Ok(()),
        Some(first) => Err(CliError::Check(format!(
            "{} of {} cases failed, first: {}",
            failed.len(),
            report.cases.len(),
            first.name
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(fault: bool) -> CheckGrid {
        CheckGrid {
            lengths: vec![16, 40],
            dims: vec![4],
            p_grid: vec![0.0, 0.5, 1.0],
            seeds: vec![0, 1],
            grad_seeds: vec![0, 1, 2],
            window: 4,
            inject_fault: fault,
        }
    }

    #[test]
    fn clean_grid_passes() {
        let report = check_kernels(&small(false)).unwrap();
        assert_eq!(report.cases.len(), 2 * 3 * 2 + 3 * 3);
        verdict(&report).unwrap();
    }

    #[test]
    fn injected_fault_is_named() {
        let report = check_kernels(&small(true)).unwrap();
        match verdict(&report) {
            Err(CliError::Check(msg)) => {
                assert!(msg.contains("kernel L=16 d=4 p=0 seed=0"), "{msg}")
            }
            other => panic!("expected failure, got {other:?}"),
        }
        // gradient cases do not use the corrupted rows
        assert!(report
            .cases
            .iter()
            .filter(|c| c.name.starts_with("gradient"))
            .all(|c| c.passed));
    }

    #[test]
    fn empty_grid_is_usage_error() {
        let mut g = small(false);
        g.seeds.clear();
        assert!(matches!(check_kernels(&g), Err(CliError::Usage(_))));
    }
}
