//! Joint-action coverage times under uncoordinated uniform exploration.
//!
//! With `n` agents and `L` actions each there are `M = L^n` joint
//! configurations; drawing uniformly at random, the expected number of steps
//! to see them all is the coupon-collector time `M * H_M`, which grows as
//! `M ln M = n L^n ln L` — at least exponentially in the number of agents.
//! This module provides the analytic expectation, a Monte-Carlo simulator,
//! and a CSV sweep over team sizes.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::maddpg::derive_seed;
use crate::{Error, Result};

/// Simulation cap: larger configuration counts are analytic-only.
pub const SIMULATION_MAX_CONFIGS: u64 = 1 << 32;

/// Exact-summation cutoff for the harmonic number; beyond it the
/// Euler-Maclaurin expansion is used, whose truncation error is far below
/// f64 resolution at that size.
const HARMONIC_EXACT_LIMIT: u64 = 100_000_000;

/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// One coverage measurement alongside its analytic expectation.
#[derive(Debug, Clone)]
pub struct CoverageResult {
    pub n: u32,
    pub l: u32,
    /// `M = L^n`.
    pub configurations: u64,
    pub trials: usize,
    pub empirical_mean: f64,
    pub empirical_std: f64,
    pub analytic_expectation: f64,
}

fn config_count(n: u32, l: u32) -> Result<u64> {
    if n < 1 || l < 1 {
        return Err(Error::Range(format!("need n >= 1 and L >= 1, got n={n}, L={l}")));
    }
    (l as u64)
        .checked_pow(n)
        .ok_or_else(|| Error::Range(format!("L^n overflows a u64 for n={n}, L={l}")))
}

/// Harmonic number `H_m`, exact by summation up to a cutoff and by the
/// Euler-Maclaurin expansion beyond it.
pub fn harmonic(m: u64) -> f64 {
    if m <= HARMONIC_EXACT_LIMIT {
        // Small terms first for accurate accumulation.
        let mut acc = 0.0;
        for k in (1..=m).rev() {
            acc += 1.0 / k as f64;
        }
        acc
    } else {
        let x = m as f64;
        x.ln() + EULER_GAMMA + 1.0 / (2.0 * x) - 1.0 / (12.0 * x * x)
            + 1.0 / (120.0 * x.powi(4))
    }
}

/// Expected steps to visit all `L^n` joint configurations: `M * H_M`.
pub fn expected_coverage_time(n: u32, l: u32) -> Result<f64> {
    let m = config_count(n, l)?;
    Ok(m as f64 * harmonic(m))
}

/// Draws uniform joint configurations until all are seen, over many trials.
///
/// `per_agent_draws` samples each agent's action separately and combines
/// them into a configuration index; the default draws the configuration
/// index directly, which is distributionally identical and faster.
pub fn simulate_coverage_time(
    n: u32,
    l: u32,
    trials: usize,
    seed: u64,
    per_agent_draws: bool,
) -> Result<CoverageResult> {
    if trials < 1 {
        return Err(Error::Range("need at least one trial".into()));
    }
    let m = config_count(n, l)?;
    if m > SIMULATION_MAX_CONFIGS {
        return Err(Error::Range(format!(
            "M = {m} exceeds the simulation cap {SIMULATION_MAX_CONFIGS}; \
             use expected_coverage_time instead"
        )));
    }
    let m_usize = m as usize;
    let mut counts = Vec::with_capacity(trials);
    let mut seen = vec![false; m_usize];
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0, trial));
        seen.fill(false);
        let mut distinct = 0usize;
        let mut steps = 0u64;
        while distinct < m_usize {
            let config = if per_agent_draws {
                let mut idx = 0u64;
                for _ in 0..n {
                    idx = idx * l as u64 + rng.random_range(0..l as u64);
                }
                idx
            } else {
                rng.random_range(0..m)
            };
            steps += 1;
            let slot = &mut seen[config as usize];
            if !*slot {
                *slot = true;
                distinct += 1;
            }
        }
        counts.push(steps as f64);
    }
    let mean = counts.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(CoverageResult {
        n,
        l,
        configurations: m,
        trials,
        empirical_mean: mean,
        empirical_std: var.sqrt(),
        analytic_expectation: m as f64 * harmonic(m),
    })
}

/// One simulated result per team size in `n_range`.
pub fn coverage_sweep(
    n_range: impl IntoIterator<Item = u32>,
    l: u32,
    trials: usize,
    seed: u64,
) -> Result<Vec<CoverageResult>> {
    n_range
        .into_iter()
        .map(|n| simulate_coverage_time(n, l, trials, seed, false))
        .collect()
}

/// Writes sweep results as CSV with a fixed header.
pub fn write_coverage_csv<W: Write>(results: &[CoverageResult], mut w: W) -> Result<()> {
    writeln!(
        w,
        "n,L,M,trials,empirical_mean,empirical_std,analytic_expectation"
    )?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.n, r.l, r.configurations, r.trials, r.empirical_mean, r.empirical_std,
            r.analytic_expectation
        )?;
    }
    Ok(())
}
