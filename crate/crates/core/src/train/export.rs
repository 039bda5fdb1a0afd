//! Learning-curve CSV and evaluation report files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-reading a history gives back exactly the recorded values.

use std::fs;
use std::path::Path;

use super::metrics::EvalReport;
use super::trainer::EpochRecord;
use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// CSV text: the header, then one row per epoch. Missing validation values
/// are empty cells.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc)
        ));
    }
    out
}

pub fn history_from_csv(text: &str, path: Option<&Path>) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::format(
            path,
            format!("history must start with `{HISTORY_HEADER}`"),
        ));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(EpochRecord {
                epoch: cells[0].parse().map_err(|_| bad("bad epoch"))?,
                train_loss: num(cells[1])?,
                train_acc: num(cells[2])?,
                val_loss: opt(cells[3])?,
                val_acc: opt(cells[4])?,
            })
        })
        .collect()
}

pub fn export_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    fs::write(path, history_to_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    history_from_csv(&text, Some(path))
}

/// Writes `<stem>.json` (structured) and `<stem>.txt` (table) next to each
/// other; `path` may carry either extension or none.
pub fn export_report(report: &EvalReport, path: &Path) -> Result<()> {
    let json_path = path.with_extension("json");
    let txt_path = path.with_extension("txt");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::format(Some(&json_path), e.to_string()))?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    fs::write(&txt_path, report.to_table()).map_err(|e| Error::io(&txt_path, e))
}

/// Reads the structured half of [`export_report`].
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let json_path = path.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(Some(&json_path), e.to_string()))
}
