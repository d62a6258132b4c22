//! `compare`: merge several run directories into long and wide tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use crate::run::csv_writer;

pub const LONG_HEADER: [&str; 4] = ["run_id", "round", "metric", "value"];

/// One run's metrics keyed by `(round, metric)`.
#[derive(Debug, Clone)]
pub struct RunTable {
    pub run_id: String,
    pub dir: PathBuf,
    pub schema_version: u32,
    pub values: BTreeMap<(usize, String), f64>,
    /// Metric names in first-seen order.
    pub metrics: Vec<String>,
}

#[derive(Deserialize)]
struct ManifestHead {
    schema_version: u32,
}

/// A directory with `manifest.json` is one run; otherwise its immediate
/// subdirectories that hold a manifest are, in name order.
pub fn expand_run_dirs(dirs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join("manifest.json").is_file() {
            out.push(d.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(d)
            .with_context(|| format!("reading run directory {}", d.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").is_file())
            .collect();
        if found.is_empty() {
            bail!("{} is not a run directory (no manifest.json found)", d.display());
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn base_id(dir: &Path) -> String {
    let parts: Vec<String> = dir
        .components()
        .rev()
        .take(2)
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    match parts.as_slice() {
        [last, parent] if last.starts_with("seed_") => format!("{parent}/{last}"),
        [last, ..] => last.clone(),
        [] => "run".to_string(),
    }
}

fn read_long_csv(path: &Path, table: &mut RunTable, round_col: &str) -> anyhow::Result<()> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if round_col == "prefix" {
        for rec in rdr.records() {
            let rec = rec?;
            let round: usize = rec[0].parse().with_context(|| format!("bad prefix in {}", path.display()))?;
            let value: f64 = rec[2].parse().with_context(|| format!("bad value in {}", path.display()))?;
            table.insert(round, &rec[1], value);
        }
        return Ok(());
    }
    for rec in rdr.records() {
        let rec = rec?;
        let round: usize = rec[0].parse().with_context(|| format!("bad round in {}", path.display()))?;
        for (name, cell) in headers.iter().zip(rec.iter()).skip(1) {
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell.parse().with_context(|| format!("bad {name} in {}", path.display()))?;
            table.insert(round, name, value);
        }
    }
    Ok(())
}

impl RunTable {
    fn insert(&mut self, round: usize, metric: &str, value: f64) {
        if !self.metrics.iter().any(|m| m == metric) {
            self.metrics.push(metric.to_string());
        }
        self.values.insert((round, metric.to_string()), value);
    }

    pub fn load(dir: &Path, run_id: String) -> anyhow::Result<Self> {
        let manifest = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
        let head: ManifestHead = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
        let mut table = RunTable {
            run_id,
            dir: dir.to_path_buf(),
            schema_version: head.schema_version,
            values: BTreeMap::new(),
            metrics: Vec::new(),
        };
        read_long_csv(&dir.join("rounds.csv"), &mut table, "i")?;
        let regret = dir.join("regret.csv");
        if regret.is_file() {
            read_long_csv(&regret, &mut table, "prefix")?;
        }
        Ok(table)
    }

    pub fn get(&self, round: usize, metric: &str) -> Option<f64> {
        self.values.get(&(round, metric.to_string())).copied()
    }
}

/// Loads runs, assigning distinct ids to repeated directories.
pub fn load_runs(dirs: &[PathBuf]) -> anyhow::Result<Vec<RunTable>> {
    let dirs = expand_run_dirs(dirs)?;
    if dirs.len() < 2 {
        bail!("compare needs at least two runs, found {}", dirs.len());
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut runs = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let base = base_id(d);
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        let id = if *n == 1 { base } else { format!("{base}#{n}") };
        runs.push(RunTable::load(d, id)?);
    }
    let first = &runs[0];
    for r in &runs[1..] {
        if r.schema_version != first.schema_version {
            bail!(
                "schema version mismatch: {} has {}, {} has {}",
                first.dir.display(),
                first.schema_version,
                r.dir.display(),
                r.schema_version
            );
        }
    }
    Ok(runs)
}

/// Writes `merged_long.csv` and `merged_wide.csv` into `out`.
pub fn compare(dirs: &[PathBuf], out: &Path) -> anyhow::Result<Vec<RunTable>> {
    let runs = load_runs(dirs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut long = csv_writer(&out.join("merged_long.csv"))?;
    long.write_record(LONG_HEADER)?;
    for r in &runs {
        for ((round, metric), v) in &r.values {
            long.write_record([r.run_id.clone(), round.to_string(), metric.clone(), v.to_string()])?;
        }
    }
    long.flush()?;

    let rounds: BTreeSet<usize> = runs.iter().flat_map(|r| r.values.keys().map(|k| k.0)).collect();
    let columns: Vec<(usize, String)> = runs
        .iter()
        .enumerate()
        .flat_map(|(k, r)| r.metrics.iter().map(move |m| (k, m.clone())))
        .collect();
    let mut wide = csv_writer(&out.join("merged_wide.csv"))?;
    let mut header = vec!["round".to_string()];
    header.extend(columns.iter().map(|(k, m)| format!("{}:{m}", runs[*k].run_id)));
    wide.write_record(&header)?;
    for round in rounds {
        let mut row = vec![round.to_string()];
        row.extend(
            columns
                .iter()
                .map(|(k, m)| runs[*k].get(round, m).map(|v| v.to_string()).unwrap_or_default()),
        );
        wide.write_record(&row)?;
    }
    wide.flush()?;
    Ok(runs)
}
