//! `metrics.csv`: one row per evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const HEADER: &str = "step,success_rate,true_return,epic_distance,beta,budget_used";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub success_rate: f64,
    pub true_return: f64,
    /// Empty in the file when EPIC evaluation is off or was skipped.
    pub epic_distance: Option<f64>,
    pub beta: f64,
    pub budget_used: usize,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let epic = self.epic_distance.map(|d| d.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step, self.success_rate, self.true_return, epic, self.beta, self.budget_used
        )
    }

    pub fn parse_csv_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(format!("expected 6 fields, got {}", fields.len()));
        }
        let float = |i: usize| -> std::result::Result<f64, String> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| format!("bad number `{}`", fields[i]))
        };
        Ok(Self {
            step: fields[0].parse().map_err(|_| format!("bad step `{}`", fields[0]))?,
            success_rate: float(1)?,
            true_return: float(2)?,
            epic_distance: if fields[3].is_empty() { None } else { Some(float(3)?) },
            beta: float(4)?,
            budget_used: fields[5].parse().map_err(|_| format!("bad budget `{}`", fields[5]))?,
        })
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}

pub fn parse_metrics(text: &str) -> std::result::Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        Some(h) => return Err(format!("unexpected header `{h}`")),
        None => return Err("empty file".into()),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRow::parse_csv_line(l).map_err(|e| format!("line {}: {e}", i + 2)))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_metrics(&text).map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))
}
