//! Result files: `results.csv` (6 significant digits, one row per seed),
//! `summary.json` (full precision) and per-seed traces.

use std::collections::BTreeMap;
use std::path::Path;

use emflow_core::training::RunResult;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `x` rounded to 6 significant digits, in plain notation where that stays
/// short and in scientific notation otherwise.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&mag) {
        return format!("{x:.5e}");
    }
    // rounding can carry into the next decade (999999.5 -> 1000000)
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let rounded: f64 = s.parse().unwrap_or(x);
    let carried = rounded.abs().log10().floor() as i32 > mag;
    let s = if decimals > 0 && carried { format!("{x:.*}", decimals - 1) } else { s };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Mean and standard error of the mean. The error needs two or more values.
pub fn mean_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub metric: f64,
    pub param_count: usize,
    pub iterations: usize,
    pub wall_ms: f64,
    pub extra: BTreeMap<String, f64>,
}

impl SeedRecord {
    pub fn from_result(seed: u64, r: &RunResult) -> Self {
        Self {
            seed,
            metric: r.final_metric,
            param_count: r.param_count,
            iterations: r.trace.last().map_or(0, |t| t.iteration + 1),
            wall_ms: r.wall_ms,
            extra: r.extra.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seed: u64,
    pub iteration: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub kind: String,
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub runs: Vec<SeedRecord>,
    #[serde(default)]
    pub failures: Vec<FailureRecord>,
}

impl Summary {
    pub fn new(name: String, kind: &str, metric: &str, runs: Vec<SeedRecord>, failures: Vec<FailureRecord>) -> Self {
        let values: Vec<f64> = runs.iter().map(|r| r.metric).collect();
        let (mean, sem) = if values.is_empty() { (None, None) } else {
            let (m, s) = mean_sem(&values);
            (Some(m), s)
        };
        Self { name, kind: kind.into(), metric: metric.into(), n: values.len(), mean, sem, runs, failures }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// One row per seed. Wall-clock time is left out so the file depends only
/// on the config and the seeds.
pub fn write_results_csv(path: &Path, metric: &str, runs: &[SeedRecord]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let extra_keys: Vec<&String> = runs.iter().flat_map(|r| r.extra.keys()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["seed".to_string(), metric.to_string(), "param_count".into(), "iterations".into()];
    header.extend(extra_keys.iter().map(|k| k.to_string()));
    w.write_record(&header).map_err(io)?;
    for r in runs {
        let mut row = vec![r.seed.to_string(), sig6(r.metric), r.param_count.to_string(), r.iterations.to_string()];
        row.extend(extra_keys.iter().map(|k| r.extra.get(*k).map_or(String::new(), |v| sig6(*v))));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(-26.48321234), "-26.4832");
        assert_eq!(sig6(2.0), "2");
        assert_eq!(sig6(3.14159265), "3.14159");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(999999.7), "1000000");
        assert_eq!(sig6(9.999996), "10");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn sig6_keeps_six_digits_of_the_value() {
        for &x in &[1.234567891, -98765.4321, 0.012345678, 7.0e12 + 3.0, 5.55555555] {
            let y: f64 = sig6(x).parse().unwrap();
            assert!(((x - y) / x).abs() <= 5e-6, "{x} -> {y}");
        }
    }

    #[test]
    fn standard_error() {
        let (m, s) = mean_sem(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // sd 1, n 3
        assert!((s.unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sem(&[4.0]), (4.0, None));
    }
}
