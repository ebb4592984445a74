//! Discretization studies: re-solve at several node counts and compare
//! probe values against the finest level.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::Result;

/// Node counts used when none are given.
pub const DEFAULT_LEVELS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub probe_values: Vec<f64>,
    /// `|value - value at the finest level|` per probe; empty for the finest row.
    pub deltas: Vec<f64>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl ConvergenceRow {
    pub fn max_delta(&self) -> Option<f64> {
        self.deltas.iter().copied().reduce(f64::max)
    }
}

/// Levels from [`DEFAULT_LEVELS`] not exceeding `cap`.
pub fn levels_up_to(cap: usize) -> Vec<usize> {
    DEFAULT_LEVELS
        .iter()
        .copied()
        .filter(|&n| n <= cap)
        .collect()
}

/// Runs `solve(n)` for each level (ascending) and reports deltas against
/// the last one.
pub fn convergence_study(
    levels: &[usize],
    mut solve: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let start = Instant::now();
        let probe_values = solve(n)?;
        rows.push(ConvergenceRow {
            n,
            probe_values,
            deltas: Vec::new(),
            runtime: start.elapsed(),
        });
    }
    if let Some(finest) = rows.last().map(|r| r.probe_values.clone()) {
        let last = rows.len() - 1;
        for row in &mut rows[..last] {
            row.deltas = row
                .probe_values
                .iter()
                .zip(&finest)
                .map(|(a, b)| (a - b).abs())
                .collect();
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_against_finest() {
        let rows = convergence_study(&[16, 32, 64], |n| Ok(vec![1.0 / n as f64])).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].deltas, vec![1.0 / 16.0 - 1.0 / 64.0]);
        assert!(rows[2].deltas.is_empty());
        assert_eq!(levels_up_to(16), vec![16]);
        let single = convergence_study(&levels_up_to(16), |_| Ok(vec![2.0])).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0].max_delta().is_none());
    }
}
