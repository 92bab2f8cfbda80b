//! Comparison tables: rows are datasets, columns are architectures, cells
//! are `mean ± sem` read from each run's `summary.json`.
//!
//! ```toml
//! output = "table2.csv"     # optional, relative to this file
//!
//! [[row]]
//! label = "BR"
//! runs = { "GEMF-T(c)" = "runs/table2-br-gemft", "MAF" = "runs/table2-br-maf" }
//! ```
//!
//! Lower is better for every metric the runner produces (NLL, −ELBO); the
//! `best` column names the winning architecture of each row.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::output::{sig6, Summary};
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Row {
    pub label: String,
    /// Architecture label to run directory (or `summary.json` path).
    pub runs: toml::Table,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(rename = "row")]
    pub rows: Vec<Row>,
}

pub fn parse(text: &str) -> Result<TableSpec, CliError> {
    let t: TableSpec = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid table spec: {e}")))?;
    if t.rows.is_empty() {
        return Err(CliError::Config("table spec has no [[row]] entries".into()));
    }
    Ok(t)
}

fn summary_path(base: &Path, run: &str) -> PathBuf {
    let p = base.join(run);
    if p.extension().is_some_and(|e| e == "json") {
        p
    } else {
        p.join("summary.json")
    }
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn cell(s: &Summary) -> String {
    match (s.mean, s.sem) {
        (Some(m), Some(e)) => format!("{} ± {}", sig6(m), sig6(e)),
        (Some(m), None) => sig6(m),
        _ => "failed".into(),
    }
}

/// Reads every referenced summary; all missing ones are listed together.
pub fn build(spec: &TableSpec, base: &Path) -> Result<Table, CliError> {
    let mut columns: Vec<String> = Vec::new();
    for r in &spec.rows {
        for k in r.runs.keys() {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for r in &spec.rows {
        let mut cells = vec![r.label.clone()];
        let mut best: Option<(f64, &str)> = None;
        for c in &columns {
            let Some(v) = r.runs.get(c) else {
                cells.push(String::new());
                continue;
            };
            let run = v
                .as_str()
                .ok_or_else(|| CliError::Config(format!("row '{}': run '{c}' must be a path string", r.label)))?;
            let path = summary_path(base, run);
            match Summary::read(&path) {
                Ok(s) => {
                    if let Some(m) = s.mean {
                        if best.is_none_or(|(b, _)| m < b) {
                            best = Some((m, c));
                        }
                    }
                    cells.push(cell(&s));
                }
                Err(CliError::MissingArtifact(p)) => {
                    missing.push(p);
                    cells.push(String::new());
                }
                Err(e) => return Err(e),
            }
        }
        cells.push(best.map_or(String::new(), |(_, c)| c.to_string()));
        rows.push(cells);
    }
    if !missing.is_empty() {
        return Err(CliError::MissingArtifact(missing.join(", ")));
    }
    let mut header = vec!["dataset".to_string()];
    header.extend(columns);
    header.push("best".into());
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::SeedRecord;

    fn write_run(dir: &Path, name: &str, values: &[f64]) {
        let runs = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeedRecord { seed: i as u64, metric: v, param_count: 1, iterations: 1, wall_ms: 0.0, extra: Default::default() })
            .collect();
        let d = dir.join(name);
        std::fs::create_dir_all(&d).unwrap();
        Summary::new(name.into(), "mle", "nll", runs, vec![]).write(&d.join("summary.json")).unwrap();
    }

    #[test]
    fn one_by_one() {
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), "a", &[1.0, 2.0, 3.0]);
        let spec = parse("[[row]]\nlabel = \"8G\"\nruns = { MAF = \"a\" }").unwrap();
        let t = build(&spec, dir.path()).unwrap();
        assert_eq!(t.header, ["dataset", "MAF", "best"]);
        assert_eq!(t.rows, vec![vec!["8G".to_string(), "2 ± 0.57735".into(), "MAF".into()]]);
    }

    #[test]
    fn flags_lowest_mean() {
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), "gemf", &[-26.41, -26.42]);
        write_run(dir.path(), "maf", &[-26.06, -26.07]);
        let spec = parse("[[row]]\nlabel = \"BR\"\nruns = { \"GEMF-T(c)\" = \"gemf\", MAF = \"maf/summary.json\" }").unwrap();
        let t = build(&spec, dir.path()).unwrap();
        assert_eq!(t.rows[0].last().unwrap(), "GEMF-T(c)");
    }

    #[test]
    fn bundled_specs_point_at_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_none_or(|e| e != "toml") {
                continue;
            }
            let spec = parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
            for r in &spec.rows {
                for v in r.runs.values() {
                    let name = Path::new(v.as_str().unwrap()).file_name().unwrap().to_str().unwrap();
                    assert!(crate::presets::get(name).is_some(), "{}: {name}", path.display());
                }
            }
            seen += 1;
        }
        assert_eq!(seen, 4);
    }

    #[test]
    fn missing_runs_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), "a", &[1.0]);
        let spec = parse("[[row]]\nlabel = \"x\"\nruns = { A = \"a\", B = \"nope\", C = \"gone\" }").unwrap();
        match build(&spec, dir.path()) {
            Err(CliError::MissingArtifact(m)) => {
                assert!(m.contains("nope") && m.contains("gone"), "{m}");
            }
            other => panic!("expected a missing artifact, got {:?}", other.err()),
        }
    }
}
