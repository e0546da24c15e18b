//! Learning-curve export: long-format rows per run plus mean/std bands per
//! (method, step, metric) across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rune_core::config::{Profile, RunConfig};
use rune_core::metrics::{read_metrics, MetricsRow};

use crate::stats::{mean, population_std};

#[derive(Debug, Clone, PartialEq)]
pub struct RunCurves {
    pub method: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

/// Method label from a run's config echo: exploration mode plus label budget,
/// or `true-reward` for runs trained on the environment reward.
pub fn method_label(config: &RunConfig) -> String {
    if config.true_reward {
        "true-reward".to_string()
    } else {
        format!("{}-b{}", config.exploration.as_str(), config.total_budget)
    }
}

/// Reads `metrics.csv` and the `config.txt` echo from a run directory.
pub fn load_run(dir: &Path) -> Result<RunCurves, String> {
    let rows = read_metrics(&dir.join("metrics.csv")).map_err(|e| e.to_string())?;
    let fallback = || dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (method, seed) = match RunConfig::load(&dir.join("config.txt"), Profile::Desk) {
        Ok(c) => (method_label(&c), c.seed),
        Err(e) => {
            log::warn!("{}: no usable config.txt ({e}); naming the run after its directory", dir.display());
            (fallback(), 0)
        }
    };
    Ok(RunCurves { method, seed, rows })
}

fn metric_values(row: &MetricsRow) -> Vec<(&'static str, f64)> {
    let mut out = vec![
        ("success_rate", row.success_rate),
        ("true_return", row.true_return),
        ("beta", row.beta),
        ("budget_used", row.budget_used as f64),
    ];
    if let Some(d) = row.epic_distance {
        out.push(("epic_distance", d));
    }
    out
}

pub const CURVES_HEADER: &str = "method,seed,step,metric,value";
pub const BANDS_HEADER: &str = "method,step,metric,mean,std,n";

pub fn curves_csv(runs: &[RunCurves]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for run in runs {
        for row in &run.rows {
            for (metric, value) in metric_values(row) {
                let _ = writeln!(out, "{},{},{},{metric},{value}", run.method, run.seed, row.step);
            }
        }
    }
    out
}

/// Mean and population std across runs of the same method, per step and metric.
pub fn bands_csv(runs: &[RunCurves]) -> String {
    let mut groups: BTreeMap<(String, u64, &'static str), Vec<f64>> = BTreeMap::new();
    for run in runs {
        for row in &run.rows {
            for (metric, value) in metric_values(row) {
                groups.entry((run.method.clone(), row.step, metric)).or_default().push(value);
            }
        }
    }
    let mut out = format!("{BANDS_HEADER}\n");
    for ((method, step, metric), values) in &groups {
        let m = mean(values).expect("non-empty group");
        let s = population_std(values).expect("non-empty group");
        let _ = writeln!(out, "{method},{step},{metric},{m},{s},{}", values.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub loaded: usize,
    pub skipped: Vec<(PathBuf, String)>,
    pub curves: PathBuf,
    pub bands: PathBuf,
}

/// Writes `curves.csv` and `bands.csv` into `out`. Unreadable runs are skipped with a warning.
pub fn write_report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome, String> {
    if dirs.is_empty() {
        return Err("no run directories given".into());
    }
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        match load_run(dir) {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("skipping {}: {e}", dir.display());
                skipped.push((dir.clone(), e));
            }
        }
    }
    if runs.is_empty() {
        return Err("none of the run directories had a readable metrics.csv".into());
    }
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let curves = out.join("curves.csv");
    let bands = out.join("bands.csv");
    std::fs::write(&curves, curves_csv(&runs)).map_err(|e| format!("{}: {e}", curves.display()))?;
    std::fs::write(&bands, bands_csv(&runs)).map_err(|e| format!("{}: {e}", bands.display()))?;
    Ok(ReportOutcome {
        loaded: runs.len(),
        skipped,
        curves,
        bands,
    })
}
