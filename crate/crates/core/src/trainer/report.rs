//! Aggregation of per-seed run reports into mean ± standard deviation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{RunReport, Strategy};
use crate::error::{Error, Result};

/// Mean with the sample (n − 1) standard deviation; std is 0 for one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    /// Percent with two decimals, e.g. `37.26 ± 0.41`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub accuracy: MeanStd,
    pub groups: BTreeMap<String, MeanStd>,
}

/// Groups reports by strategy. Refuses to mix experiments (differing
/// experiment fingerprints) unless `force` is set.
pub fn summarize(reports: &[RunReport], force: bool) -> Result<Vec<StrategySummary>> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no run reports to aggregate".into()));
    }
    let first = reports[0].experiment_fingerprint;
    if let Some(other) = reports.iter().find(|r| r.experiment_fingerprint != first) {
        if !force {
            return Err(Error::FingerprintMismatch(format!(
                "runs come from different experiments ({} vs {}); pass --force to aggregate anyway",
                first.short(),
                other.experiment_fingerprint.short()
            )));
        }
    }
    let mut by: BTreeMap<Strategy, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        by.entry(r.strategy).or_default().push(r);
    }
    Ok(by
        .into_iter()
        .map(|(strategy, mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let acc: Vec<f64> = runs.iter().map(|r| r.metrics.accuracy).collect();
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &runs {
                for (g, m) in &r.metrics.groups {
                    groups.entry(g.clone()).or_default().push(m.accuracy);
                }
            }
            StrategySummary {
                strategy,
                seeds: runs.iter().map(|r| r.seed).collect(),
                accuracy: MeanStd::of(&acc),
                groups: groups.into_iter().map(|(g, v)| (g, MeanStd::of(&v))).collect(),
            }
        })
        .collect())
}

/// Plain-text table: one row per strategy, accuracy then each group.
pub fn format_table(summaries: &[StrategySummary]) -> String {
    let groups: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.groups.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = format!("{:<10} {:>6} {:>16}", "strategy", "seeds", "accuracy");
    for g in &groups {
        let _ = write!(out, " {:>16}", g);
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(out, "{:<10} {:>6} {:>16}", s.strategy.name(), s.seeds.len(), s.accuracy.to_string());
        for g in &groups {
            let cell = s.groups.get(g).map_or_else(|| "-".to_string(), |m| m.to_string());
            let _ = write!(out, " {:>16}", cell);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::of(&[0.37, 0.39, 0.41]);
        assert!((m.mean - 0.39).abs() < 1e-12);
        assert!((m.std - 0.02).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
        assert_eq!(m.to_string(), "39.00 ± 2.00");
    }
}
