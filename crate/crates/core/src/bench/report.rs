//! Scaling-curve reports with a Pareto marking.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use thiserror::Error;

use super::{read_records, DatasetError};
use crate::cost::aggregate_curve;
use crate::ledger::{BROWSE, SEARCH};
use crate::money::Money;
use crate::scaling::RunRecord;

pub const REPORT_HEADER: [&str; 8] =
    ["policy", "budget", "accuracy", "mean_cost_minor_units", "mean_search", "mean_browse", "over_budget_frac", "pareto"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportRow {
    pub policy: String,
    pub budget: u64,
    pub runs: u64,
    pub accuracy: Ratio<u64>,
    pub mean_cost: Money,
    pub mean_search: Ratio<u64>,
    pub mean_browse: Ratio<u64>,
    pub over_budget_frac: Ratio<u64>,
    pub pareto: bool,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to report")]
    EmptyInput,
    #[error(transparent)]
    Records(#[from] DatasetError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Marks rows no other row dominates (at least as accurate and at most as
/// costly, strictly better on one). Identical rows do not dominate each other.
pub fn pareto_marks(points: &[(Ratio<u64>, Money)]) -> Vec<bool> {
    points
        .iter()
        .map(|(acc, cost)| {
            !points.iter().any(|(a2, c2)| a2 >= acc && c2 <= cost && (a2 > acc || c2 < cost))
        })
        .collect()
}

/// One row per (policy, budget level).
pub fn report_rows(records: &[RunRecord]) -> Result<Vec<ReportRow>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let ungraded = records.iter().filter(|r| r.correct.is_none()).count();
    if ungraded > 0 {
        log::warn!("{ungraded} ungraded records count as incorrect");
    }
    let mut by_policy: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        by_policy.entry(r.policy.as_str()).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (policy, recs) in by_policy {
        let curve = aggregate_curve(&recs).map_err(|_| ReportError::EmptyInput)?;
        for c in curve {
            let at: Vec<&RunRecord> = recs.iter().filter(|r| r.budget == c.budget).collect();
            let over = at.iter().filter(|r| r.exhausted).count() as u64;
            let zero = Ratio::from_integer(0);
            rows.push(ReportRow {
                policy: policy.to_string(),
                budget: c.budget,
                runs: c.runs,
                accuracy: c.accuracy,
                mean_cost: c.mean_cost,
                mean_search: c.mean_tool_counts.get(SEARCH).copied().unwrap_or(zero),
                mean_browse: c.mean_tool_counts.get(BROWSE).copied().unwrap_or(zero),
                over_budget_frac: Ratio::new(over, c.runs),
                pareto: false,
            });
        }
    }
    let marks = pareto_marks(&rows.iter().map(|r| (r.accuracy, r.mean_cost)).collect::<Vec<_>>());
    for (r, m) in rows.iter_mut().zip(marks) {
        r.pareto = m;
    }
    Ok(rows)
}

/// Decimal rendering, rounded half up at `places`.
pub fn ratio_decimal(r: Ratio<u64>, places: u32) -> String {
    let scale = 10u128.pow(places);
    let n = *r.numer() as u128 * scale;
    let d = *r.denom() as u128;
    let q = (2 * n + d) / (2 * d);
    let int = q / scale;
    let frac = q % scale;
    if places == 0 {
        int.to_string()
    } else {
        format!("{int}.{frac:0width$}", width = places as usize)
    }
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in rows {
        out.write_record([
            r.policy.clone(),
            r.budget.to_string(),
            ratio_decimal(r.accuracy, 6),
            r.mean_cost.render_minor(4),
            ratio_decimal(r.mean_search, 4),
            ratio_decimal(r.mean_browse, 4),
            ratio_decimal(r.over_budget_frac, 6),
            r.pareto.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records files and writes the CSV to `out` (stdout when `None`).
pub fn emit_report(paths: &[PathBuf], out: Option<&Path>) -> Result<Vec<ReportRow>, ReportError> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(p)?);
    }
    let rows = report_rows(&records)?;
    match out {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
            write_csv(&rows, f)?;
        }
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(acc: (u64, u64), cost: i128) -> (Ratio<u64>, Money) {
        (Ratio::new(acc.0, acc.1), Money::from_minor(cost))
    }

    #[test]
    fn dominated_row_unmarked() {
        assert_eq!(pareto_marks(&[pt((10, 100), 5), pt((12, 100), 4)]), vec![false, true]);
    }

    #[test]
    fn single_and_equal_rows_marked() {
        assert_eq!(pareto_marks(&[pt((1, 2), 3)]), vec![true]);
        assert_eq!(pareto_marks(&[pt((1, 2), 3), pt((1, 2), 3)]), vec![true, true]);
    }

    #[test]
    fn decimals() {
        assert_eq!(ratio_decimal(Ratio::new(1, 3), 6), "0.333333");
        assert_eq!(ratio_decimal(Ratio::new(2, 3), 4), "0.6667");
        assert_eq!(ratio_decimal(Ratio::new(5, 1), 2), "5.00");
    }

    #[test]
    fn empty_input() {
        assert!(matches!(report_rows(&[]), Err(ReportError::EmptyInput)));
    }
}
