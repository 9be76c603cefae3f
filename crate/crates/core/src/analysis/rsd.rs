//! Seed-deletion rate: the probability that deletion removes every seed of
//! the pseudo-label while at least one class-indicative word survives.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corrupt::deletion_count;
use crate::error::{Error, Result};
use crate::rng;

const CHUNK: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RsdQuery {
    /// Seed words in the document.
    pub n_seed: u32,
    /// Non-seed, class-indicative words in the document.
    pub n_indicative: u32,
    /// Deletion probability.
    pub p: f64,
}

impl RsdQuery {
    pub fn new(n_seed: u32, n_indicative: u32, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("deletion probability {p} outside [0, 1]")));
        }
        Ok(RsdQuery { n_seed, n_indicative, p })
    }
}

/// `p^n_seed * (1 - p^n_indicative)` under independent per-word deletion.
pub fn rsd_closed_form(q: RsdQuery) -> f64 {
    q.p.powi(q.n_seed as i32) * (1.0 - q.p.powi(q.n_indicative as i32))
}

/// Simulate independent per-word deletion over `n_seed + n_indicative`
/// words and count the trials where every seed is deleted and at least one
/// indicative word survives. Trials run in fixed chunks with their own
/// streams, so the estimate does not depend on thread count.
pub fn rsd_monte_carlo(q: RsdQuery, trials: u64, rng_seed: u64) -> f64 {
    chunked_estimate(trials, rng_seed, "rsd-mc", |rng| {
        for _ in 0..q.n_seed {
            if rng.gen::<f64>() >= q.p {
                return false; // a seed survived
            }
        }
        for _ in 0..q.n_indicative {
            if rng.gen::<f64>() >= q.p {
                return true;
            }
        }
        false
    })
}

/// The same event under the fixed-count procedure actually used for
/// corruption: `min(ceil(p*n), n-1)` positions deleted without replacement
/// from an `n = n_seed + n_indicative + n_other` token document.
pub fn rsd_procedural(q: RsdQuery, n_other: u32, trials: u64, rng_seed: u64) -> f64 {
    let n = (q.n_seed + q.n_indicative + n_other) as usize;
    let k = deletion_count(n, q.p);
    let seeds = q.n_seed as usize;
    let indicative = q.n_indicative as usize;
    chunked_estimate(trials, rng_seed, "rsd-proc", |rng| {
        let mut deleted = vec![false; n];
        if k > 0 {
            for i in index::sample(rng, n, k) {
                deleted[i] = true;
            }
        }
        // Positions [0, seeds) are seeds, then indicative words, then the rest.
        deleted[..seeds].iter().all(|&d| d) && deleted[seeds..seeds + indicative].iter().any(|&d| !d)
    })
}

fn chunked_estimate<F>(trials: u64, rng_seed: u64, name: &str, event: F) -> f64
where
    F: Fn(&mut rng::StreamRng) -> bool + Sync,
{
    if trials == 0 {
        return 0.0;
    }
    let chunks = trials.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(rng_seed, &[name.into(), c.into()]);
            let len = CHUNK.min(trials - c * CHUNK);
            (0..len).filter(|_| event(&mut rng)).count() as u64
        })
        .sum();
    hits as f64 / trials as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsdRow {
    pub n_seed: u32,
    pub n_indicative: u32,
    pub p: f64,
    pub closed_form: f64,
    pub procedural: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsdArgmax {
    pub n_seed: u32,
    pub n_indicative: u32,
    pub best_p: f64,
    pub best_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsdTable {
    pub rows: Vec<RsdRow>,
    pub argmax: Vec<RsdArgmax>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProceduralSim {
    pub n_other: u32,
    pub trials: u64,
    pub rng_seed: u64,
}

/// Evenly spaced grid `0, step, 2*step, ..., 1` computed by index to avoid
/// accumulated rounding.
pub fn unit_grid(steps: u32) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// r_SD over the grid, plus the first grid point achieving the maximum for
/// each `(n_seed, n_indicative)`.
pub fn rsd_sweep(n_seed: &[u32], n_indicative: &[u32], p_grid: &[f64], procedural: Option<ProceduralSim>) -> Result<RsdTable> {
    if n_seed.is_empty() || n_indicative.is_empty() || p_grid.is_empty() {
        return Err(Error::InvalidConfig("r_SD sweep needs non-empty grids".into()));
    }
    let mut rows = Vec::new();
    let mut argmax = Vec::new();
    for &ns in n_seed {
        for &nc in n_indicative {
            let mut best: Option<(f64, f64)> = None;
            for &p in p_grid {
                let q = RsdQuery::new(ns, nc, p)?;
                let r = rsd_closed_form(q);
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((p, r));
                }
                rows.push(RsdRow {
                    n_seed: ns,
                    n_indicative: nc,
                    p,
                    closed_form: r,
                    procedural: procedural.map(|s| rsd_procedural(q, s.n_other, s.trials, s.rng_seed)),
                });
            }
            let (best_p, best_rate) = best.expect("non-empty grid");
            argmax.push(RsdArgmax {
                n_seed: ns,
                n_indicative: nc,
                best_p,
                best_rate,
            });
        }
    }
    Ok(RsdTable { rows, argmax })
}

impl RsdTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n_seed", "n_indicative", "p", "r_sd", "r_sd_procedural"])?;
        for r in &self.rows {
            w.write_record([
                r.n_seed.to_string(),
                r.n_indicative.to_string(),
                format!("{:.6}", r.p),
                format!("{:.6}", r.closed_form),
                r.procedural.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_argmax_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n_seed", "n_indicative", "best_p", "best_r_sd"])?;
        for a in &self.argmax {
            w.write_record([
                a.n_seed.to_string(),
                a.n_indicative.to_string(),
                format!("{:.6}", a.best_p),
                format!("{:.6}", a.best_rate),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(ns: u32, nc: u32, p: f64) -> RsdQuery {
        RsdQuery::new(ns, nc, p).unwrap()
    }

    /// Exact probability by enumerating all 2^(ns+nc) deletion patterns.
    fn enumerate(ns: u32, nc: u32, p: f64) -> f64 {
        let n = ns + nc;
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            let mut prob = 1.0;
            for i in 0..n {
                prob *= if mask & (1 << i) != 0 { p } else { 1.0 - p };
            }
            let seeds_gone = (0..ns).all(|i| mask & (1 << i) != 0);
            let indicative_left = (ns..n).any(|i| mask & (1 << i) == 0);
            if seeds_gone && indicative_left {
                total += prob;
            }
        }
        total
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(rsd_closed_form(q(1, 1, 0.5)), 0.25);
        for nc in 1..5 {
            assert_eq!(rsd_closed_form(q(2, nc, 1.0)), 0.0);
        }
        assert_eq!(rsd_closed_form(q(1, 3, 0.0)), 0.0);
        // 0.9^2 * (1 - 0.9^20) = 81 * (10^20 - 9^20) / 10^22, exact in integers.
        let exact = 81 * (10u128.pow(20) - 9u128.pow(20));
        let oracle = exact as f64 / 1e22;
        let v = rsd_closed_form(q(2, 20, 0.9));
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
        assert!((v - 0.7115).abs() < 5e-5);
        assert!((rsd_monte_carlo(q(2, 20, 0.9), 1_000_000, 1) - 0.7115).abs() < 0.002);
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for ns in 0..4 {
            for nc in 0..6 {
                for p in [0.0, 0.1, 0.5, 0.9, 1.0] {
                    assert!((rsd_closed_form(q(ns, nc, p)) - enumerate(ns, nc, p)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_boundaries() {
        assert_eq!(rsd_monte_carlo(q(0, 1, 0.0), 1000, 3), 1.0);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(rsd_monte_carlo(q(1, 0, p), 1000, 3), 0.0);
        }
        assert_eq!(rsd_monte_carlo(q(1, 1, 0.5), 10_000, 9), rsd_monte_carlo(q(1, 1, 0.5), 10_000, 9));
    }

    #[test]
    fn monte_carlo_error_shrinks_with_trials() {
        let query = q(1, 5, 0.7);
        let exact = rsd_closed_form(query);
        let err = |trials| {
            (0..20u64)
                .map(|s| (rsd_monte_carlo(query, trials, s) - exact).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let small = err(1_000);
        let large = err(100_000);
        // Ten-fold reduction expected; allow slack for sampling noise.
        assert!(large < small / 4.0, "{small} vs {large}");
    }

    #[test]
    fn procedural_matches_hypergeometric_count() {
        // n=4 (1 seed, 1 indicative, 2 other), p=0.5 deletes 2 of 4 positions.
        // Seed deleted and indicative kept: choose seed + one of the 2 others = 2 of C(4,2)=6.
        let est = rsd_procedural(q(1, 1, 0.5), 2, 200_000, 4);
        assert!((est - 2.0 / 6.0).abs() < 0.005, "{est}");
    }

    #[test]
    fn sweep_argmax() {
        let grid = unit_grid(100);
        let t = rsd_sweep(&[1], &[1, 2, 5, 10, 50], &grid, None).unwrap();
        let best: Vec<f64> = t.argmax.iter().map(|a| a.best_p).collect();
        assert!(best.windows(2).all(|w| w[0] < w[1]), "{best:?}");
        let zero = rsd_sweep(&[1, 2], &[0], &grid, None).unwrap();
        assert!(zero.rows.iter().all(|r| r.closed_form == 0.0));
        assert!(rsd_sweep(&[], &[1], &grid, None).is_err());
    }

    #[test]
    fn argmax_matches_stationary_point() {
        // d/dp [p (1 - p^10)] = 1 - 11 p^10 = 0, solved by bisection.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - 11.0 * mid.powi(10) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - (1.0f64 / 11.0).powf(0.1)).abs() < 1e-12);
        let t = rsd_sweep(&[1], &[10], &unit_grid(100), None).unwrap();
        assert!((t.argmax[0].best_p - lo).abs() <= 0.01);
    }

    proptest! {
        #[test]
        fn closed_form_properties(ns in 0u32..8, nc in 0u32..50, p in 0.0f64..=1.0) {
            let r = rsd_closed_form(q(ns, nc, p));
            prop_assert!((0.0..=1.0).contains(&r));
            if nc == 0 {
                prop_assert_eq!(r, 0.0);
            }
            if ns == 0 {
                prop_assert!((r - (1.0 - p.powi(nc as i32))).abs() < 1e-15);
            }
        }
    }
}
