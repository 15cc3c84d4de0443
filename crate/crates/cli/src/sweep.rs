//! Attended-entry counts over a grid of sequence lengths.

use std::fmt::Write as _;
use std::time::Instant;

use ppa_core::mask::{fit_scaling_exponent, total_attended};
use ppa_core::MaskConfig;

use crate::error::{CliError, Result};

pub const DEFAULT_LENGTHS: [u64; 4] = [1024, 4096, 16384, 65536];

#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    pub p: f64,
    pub len: u64,
    pub total_attended: u64,
    /// Least-squares log-log slope over this and all shorter lengths of the
    /// same `p`; absent until three lengths are available.
    pub fitted_exponent: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

pub fn sweep_counts(
    p_grid: &[f64],
    lengths: &[u64],
    window: usize,
    timing: bool,
) -> Result<Vec<CountRow>> {
    if p_grid.is_empty() || lengths.is_empty() {
        return Err(CliError::Usage(
            "p and length grids must be non-empty".into(),
        ));
    }
    let mut lengths = lengths.to_vec();
    lengths.sort_unstable();
    lengths.dedup();
    let mut rows = Vec::new();
    for &p in p_grid {
        let cfg = MaskConfig::new(p, window)?;
        let mut samples = Vec::new();
        for &len in &lengths {
            let start = Instant::now();
            let total = total_attended(len, &cfg)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            samples.push((len as f64, total as f64));
            let fitted_exponent = if samples.len() >= 3 {
                Some(fit_scaling_exponent(&samples)?)
            } else {
                None
            };
            rows.push(CountRow {
                p,
                len,
                total_attended: total,
                fitted_exponent,
                wall_time_ms: timing.then_some(elapsed),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CountRow]) -> String {
    let mut out = String::from("p,L,total_attended,fitted_exponent,wall_time_ms\n");
    for r in rows {
        let fit = r
            .fitted_exponent
            .map(|e| format!("{e:.6}"))
            .unwrap_or_default();
        let wall = r
            .wall_time_ms
            .map(|t| format!("{t:.3}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.p, r.len, r.total_attended, fit, wall
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_one_is_triangular() {
        let rows = sweep_counts(&[1.0], &[10, 100, 1000], 4, false).unwrap();
        let totals: Vec<u64> = rows.iter().map(|r| r.total_attended).collect();
        assert_eq!(totals, vec![55, 5050, 500500]);
        assert!(rows[0].fitted_exponent.is_none() && rows[1].fitted_exponent.is_none());
        // equally spaced log-lengths: the least-squares slope is the end-to-end slope
        let expected = (500500f64 / 55.0).ln() / 100f64.ln();
        assert!((rows[2].fitted_exponent.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let rows = sweep_counts(&[0.5], &[16, 8, 32], 2, false).unwrap();
        let csv = to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p,L,total_attended,fitted_exponent,wall_time_ms");
        assert!(lines[1].starts_with("0.5,8,"));
        assert!(lines[1].ends_with(",,"));
        assert!(!csv.contains('\r'));
        assert!(sweep_counts(&[], &[8], 2, false).is_err());
    }
}
