//! Sweeps: one base config, one axis, several values, several seeds per value.
//!
//! Replicate `r` always runs with seed `derive_seed(base_seed, r)`, so every
//! axis value sees the same seeds. On the `seeds` axis each value is the run
//! seed itself and the whole sweep summarizes into one row.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rune_core::config::RunConfig;
use rune_core::derive_seed;
use rune_core::orchestrator::Trainer;

use crate::stats::{mean, mean_pm_std, population_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Seeds,
    Budget,
    Ensemble,
    QueriesPerSession,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Seeds => "seeds",
            SweepAxis::Budget => "budget",
            SweepAxis::Ensemble => "ensemble",
            SweepAxis::QueriesPerSession => "queries_per_session",
        }
    }

    fn apply(self, config: &mut RunConfig, value: u64) -> Result<(), String> {
        let as_usize = || usize::try_from(value).map_err(|_| format!("value {value} out of range"));
        match self {
            SweepAxis::Seeds => {}
            SweepAxis::Budget => config.total_budget = as_usize()?,
            SweepAxis::Ensemble => config.ensemble_size = as_usize()?,
            SweepAxis::QueriesPerSession => config.queries_per_session = as_usize()?,
        }
        config.validate().map_err(|(_, m)| m)
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seeds" => Ok(SweepAxis::Seeds),
            "budget" => Ok(SweepAxis::Budget),
            "ensemble" => Ok(SweepAxis::Ensemble),
            "queries_per_session" => Ok(SweepAxis::QueriesPerSession),
            other => Err(format!(
                "unknown axis `{other}` (expected seeds, budget, ensemble or queries_per_session)"
            )),
        }
    }
}

/// Parses `"1,2,5"` or a range `"1..5"` (inclusive).
pub fn parse_values(text: &str) -> Result<Vec<u64>, String> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range start `{lo}`"))?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end `{hi}`"))?;
        if hi < lo {
            return Err(format!("empty range {lo}..{hi}"));
        }
        return Ok((lo..=hi).collect());
    }
    let values: Vec<u64> = text
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse().map_err(|_| format!("bad value `{v}`")))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err("no values given".into());
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct PlannedRun {
    /// Axis value (the seed itself on the seeds axis).
    pub value: u64,
    pub replicate: u64,
    pub config: RunConfig,
}

/// Expands the cross product of axis values and replicates.
pub fn plan(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[u64],
    replicates: u64,
    out: Option<&Path>,
) -> Result<Vec<PlannedRun>, String> {
    let cells: Vec<(u64, u64)> = match axis {
        SweepAxis::Seeds => values.iter().map(|&v| (v, v)).collect(),
        _ => values
            .iter()
            .flat_map(|&v| (0..replicates.max(1)).map(move |r| (v, r)))
            .collect(),
    };
    cells
        .into_iter()
        .map(|(value, replicate)| {
            let mut config = base.clone();
            axis.apply(&mut config, value)
                .map_err(|e| format!("{} = {value}: {e}", axis.as_str()))?;
            config.seed = match axis {
                SweepAxis::Seeds => value,
                _ => derive_seed(base.seed, replicate),
            };
            config.output_dir = out.map(|dir| run_dir(dir, axis, value, replicate));
            Ok(PlannedRun {
                value,
                replicate,
                config,
            })
        })
        .collect()
}

fn run_dir(out: &Path, axis: SweepAxis, value: u64, replicate: u64) -> PathBuf {
    match axis {
        SweepAxis::Seeds => out.join(format!("seed-{value}")),
        _ => out.join(format!("{}-{value}", axis.as_str())).join(format!("seed-{replicate}")),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub value: u64,
    pub replicate: u64,
    pub seed: u64,
    pub budget: usize,
    /// Final success rate and labels spent, or the failure message.
    pub result: Result<(f64, usize), String>,
}

fn execute(run: &PlannedRun) -> RunOutcome {
    let result = Trainer::from_config(run.config.clone())
        .map_err(|e| e.to_string())
        .and_then(|t| t.run().map_err(|e| e.to_string()))
        .and_then(|r| {
            let success = r.final_row().map(|row| row.success_rate).ok_or("run produced no evaluation")?;
            if r.budget_used > run.config.total_budget {
                return Err(format!("spent {} labels on a budget of {}", r.budget_used, run.config.total_budget));
            }
            Ok((success, r.budget_used))
        });
    if let Err(e) = &result {
        log::warn!("run value={} replicate={} failed: {e}", run.value, run.replicate);
    }
    RunOutcome {
        value: run.value,
        replicate: run.replicate,
        seed: run.config.seed,
        budget: run.config.total_budget,
        result,
    }
}

/// Runs every planned run with up to `workers` threads; failures are kept, not raised.
pub fn execute_all(runs: &[PlannedRun], workers: usize) -> Vec<RunOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, runs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let outcome = execute(run);
                slots.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|o| o.expect("every run executed"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    /// `None` on the seeds axis (one row for the whole sweep).
    pub value: Option<u64>,
    pub runs: usize,
    pub failed: usize,
    pub successes: Vec<f64>,
    pub max_budget_used: usize,
}

impl CellSummary {
    pub fn mean(&self) -> Option<f64> {
        mean(&self.successes)
    }

    pub fn std(&self) -> Option<f64> {
        population_std(&self.successes)
    }
}

pub fn summarize(axis: SweepAxis, outcomes: &[RunOutcome]) -> Vec<CellSummary> {
    let mut keys: Vec<Option<u64>> = Vec::new();
    for o in outcomes {
        let key = (axis != SweepAxis::Seeds).then_some(o.value);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|key| {
            let cell: Vec<&RunOutcome> = outcomes
                .iter()
                .filter(|o| key.is_none() || Some(o.value) == key)
                .collect();
            let ok: Vec<(f64, usize)> = cell.iter().filter_map(|o| o.result.as_ref().ok().copied()).collect();
            CellSummary {
                value: key,
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                successes: ok.iter().map(|&(s, _)| s).collect(),
                max_budget_used: ok.iter().map(|&(_, b)| b).max().unwrap_or(0),
            }
        })
        .collect()
}

/// Markdown table of final success rate, `mean ± std` over seeds.
pub fn summary_table(axis: SweepAxis, cells: &[CellSummary]) -> String {
    let mut out = format!("| {} | runs | failed | labels used (max) | final success |\n", axis.as_str());
    out.push_str("|---|---|---|---|---|\n");
    for c in cells {
        let label = c.value.map_or_else(|| "all".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "| {label} | {} | {} | {} | {} |",
            c.runs,
            c.failed,
            c.max_budget_used,
            mean_pm_std(&c.successes)
        );
    }
    out
}

pub fn summary_csv(axis: SweepAxis, cells: &[CellSummary]) -> String {
    let mut out = format!("{},runs,failed,max_budget_used,mean_success,std_success\n", axis.as_str());
    for c in cells {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let label = c.value.map_or_else(|| "all".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{}",
            c.runs,
            c.failed,
            c.max_budget_used,
            opt(c.mean()),
            opt(c.std())
        );
    }
    out
}

pub fn runs_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::from("value,replicate,seed,budget,final_success,budget_used,error\n");
    for o in outcomes {
        let (success, used, error) = match &o.result {
            Ok((s, u)) => (s.to_string(), u.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), e.replace([',', '\n'], ";")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{success},{used},{error}",
            o.value, o.replicate, o.seed, o.budget
        );
    }
    out
}
