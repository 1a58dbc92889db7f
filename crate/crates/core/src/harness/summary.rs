use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::record::{ExperimentRecord, Mode};
use super::HarnessError;
use crate::assist::Strategy;
use crate::stats;

/// Mean with its standard error; the error is 0 for a single observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let mean = stats::mean(xs)?;
        let se = stats::std_error(xs).unwrap_or(0.0);
        Some(Self { mean, se, n: xs.len() })
    }
}

/// Per-strategy outcome of a set of runs.
///
/// Returns pool the final evaluation round's episodes across seeds. Success rate
/// and crash totals are per-seed quantities averaged across seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub seeds: usize,
    pub final_unassisted_return: Estimate,
    pub final_assisted_return: Estimate,
    /// Percentage of successful episodes in the final unassisted round.
    pub final_success_pct: Estimate,
    /// Crashes over training episodes.
    pub training_crashes: Estimate,
}

pub fn summarize(records: &[ExperimentRecord]) -> Result<Vec<StrategySummary>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    let mut by_cell: BTreeMap<(String, u64), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry((r.strategy.as_str().to_string(), r.seed)).or_default().push(r);
    }
    let mut out: BTreeMap<String, (Strategy, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for ((name, _seed), recs) in &by_cell {
        let entry = out.entry(name.clone()).or_insert((recs[0].strategy, vec![], vec![], vec![], vec![], 0));
        entry.5 += 1;
        let last_round = |mode: Mode| -> Vec<&ExperimentRecord> {
            let last = recs.iter().filter(|r| r.mode == mode).map(|r| r.episode).max();
            recs.iter().copied().filter(|r| r.mode == mode && Some(r.episode) == last).collect()
        };
        let unassisted = last_round(Mode::EvalUnassisted);
        entry.1.extend(unassisted.iter().map(|r| r.ret));
        entry.2.extend(last_round(Mode::EvalAssisted).iter().map(|r| r.ret));
        if !unassisted.is_empty() {
            let ok = unassisted.iter().filter(|r| r.succeeded()).count();
            entry.3.push(100.0 * ok as f64 / unassisted.len() as f64);
        }
        let crashes: usize = recs.iter().filter(|r| r.mode == Mode::Train).map(|r| r.collisions).sum();
        entry.4.push(crashes as f64);
    }
    let nan = Estimate { mean: f64::NAN, se: f64::NAN, n: 0 };
    Ok(out
        .into_values()
        .map(|(strategy, un, asst, succ, crashes, seeds)| StrategySummary {
            strategy,
            seeds,
            final_unassisted_return: Estimate::of(&un).unwrap_or(nan),
            final_assisted_return: Estimate::of(&asst).unwrap_or(nan),
            final_success_pct: Estimate::of(&succ).unwrap_or(nan),
            training_crashes: Estimate::of(&crashes).unwrap_or(nan),
        })
        .collect())
}

pub fn write_summary_csv<W: Write>(rows: &[StrategySummary], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "seeds",
        "unassisted_mean",
        "unassisted_se",
        "assisted_mean",
        "assisted_se",
        "success_pct_mean",
        "success_pct_se",
        "crashes_mean",
        "crashes_se",
    ])?;
    for r in rows {
        let e = |x: &Estimate| [format!("{:.6}", x.mean), format!("{:.6}", x.se)];
        let mut row = vec![r.strategy.as_str().to_string(), r.seeds.to_string()];
        for est in [&r.final_unassisted_return, &r.final_assisted_return, &r.final_success_pct, &r.training_crashes] {
            row.extend(e(est));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_summary(rows: &[StrategySummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>5}  {:>18}  {:>18}  {:>16}  {:>16}",
        "strategy", "seeds", "unassisted return", "assisted return", "success %", "train crashes"
    );
    let cell = |e: &Estimate| format!("{:.2} ± {:.2}", e.mean, e.se);
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>5}  {:>18}  {:>18}  {:>16}  {:>16}",
            r.strategy.as_str(),
            r.seeds,
            cell(&r.final_unassisted_return),
            cell(&r.final_assisted_return),
            cell(&r.final_success_pct),
            cell(&r.training_crashes),
        );
    }
    s
}
