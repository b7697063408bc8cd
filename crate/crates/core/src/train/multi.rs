//! Repeating a run over several seeds and reporting mean ± standard deviation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Option<BTreeMap<String, f64>>,
    /// Set when the run failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    /// Aggregates over the successful runs, per metric.
    pub summary: BTreeMap<String, MeanStd>,
    pub failed: Vec<u64>,
}

impl MultiSeedReport {
    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<28} {:>10} {:>10} {:>4}\n", "metric", "mean", "std", "n");
        for (k, m) in &self.summary {
            out.push_str(&format!("{:<28} {:>10.4} {:>10.4} {:>4}\n", k, m.mean, m.std, m.n));
        }
        for s in &self.failed {
            out.push_str(&format!("seed {s}: FAILED\n"));
        }
        out
    }
}

/// Runs `run` once per seed. Failures are recorded rather than propagated;
/// the summary covers metrics reported by every successful run.
pub fn multi_seed_run<F>(seeds: &[u64], mut run: F) -> Result<MultiSeedReport>
where
    F: FnMut(u64) -> Result<BTreeMap<String, f64>>,
{
    if seeds.is_empty() {
        return Err(Error::Config("multi-seed run needs at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    let mut failed = Vec::new();
    for &seed in seeds {
        match run(seed) {
            Ok(m) => runs.push(SeedRun { seed, metrics: Some(m), error: None }),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed.push(seed);
                runs.push(SeedRun { seed, metrics: None, error: Some(format!("{}: {e}", e.category())) });
            }
        }
    }
    let ok: Vec<&BTreeMap<String, f64>> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mut summary = BTreeMap::new();
    if let Some(first) = ok.first() {
        for key in first.keys() {
            let xs: Option<Vec<f64>> = ok.iter().map(|m| m.get(key).copied()).collect();
            if let Some(xs) = xs {
                summary.insert(key.clone(), MeanStd::of(&xs));
            }
        }
    }
    Ok(MultiSeedReport { runs, summary, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(v: f64) -> BTreeMap<String, f64> {
        BTreeMap::from([("m".to_string(), v)])
    }

    #[test]
    fn single_seed_has_zero_std() {
        let r = multi_seed_run(&[3], |_| Ok(metrics(0.7))).unwrap();
        assert_eq!(r.summary["m"], MeanStd { mean: 0.7, std: 0.0, n: 1 });
    }

    #[test]
    fn identical_runs_average_to_themselves() {
        let r = multi_seed_run(&[1, 2, 3, 4, 5], |_| Ok(metrics(0.25))).unwrap();
        assert_eq!(r.summary["m"].mean, 0.25);
        assert_eq!(r.summary["m"].std, 0.0);
    }

    #[test]
    fn sample_std_and_failures() {
        let r = multi_seed_run(&[1, 2, 3], |s| {
            if s == 2 {
                Err(Error::contract("boom"))
            } else {
                Ok(metrics(s as f64))
            }
        })
        .unwrap();
        assert!(r.is_partial());
        assert_eq!(r.failed, vec![2]);
        let m = r.summary["m"];
        assert_eq!((m.mean, m.n), (2.0, 2));
        assert!((m.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(r.render_table().contains("seed 2: FAILED"));
        assert!(multi_seed_run(&[], |_| Ok(metrics(0.0))).is_err());
    }
}
