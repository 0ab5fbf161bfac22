//! Evaluation protocol: holdout sweeps, cross-seed aggregation, average
//! ranking across settings, confidence precision, and parameter-recovery
//! reporting, plus the long-format CSV artifacts consumed by plotting tools.

use crate::calib::{training_error, write_atomic, ObservationSource};
use crate::control::Platform;
use crate::error::{Result, SysidError};
use crate::param_space::{relative_error, ParameterBounds, ParameterVector, RelativeErrorReport};
use crate::recommend::RunHistory;
use crate::sim::run_surrogate;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default threshold above which a pre-recommendation error is treated as
/// catastrophic and excluded from precision statistics (pixels).
pub const CATASTROPHIC_PX: f64 = 100.0;

/// One holdout-profile evaluation; `error` is `None` when the observation
/// for that cell was unavailable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutCell {
    /// Holdout index, 1-based (H1..H4).
    pub holdout: usize,
    /// Repeat index, 1-based.
    pub repeat: usize,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub seed: u64,
    pub cells: Vec<HoldoutCell>,
}

impl HoldoutReport {
    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_some())
    }

    /// Arithmetic mean over all cells; `None` while any cell is missing.
    pub fn seed_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        for c in &self.cells {
            sum += c.error?;
        }
        Some(sum / self.cells.len() as f64)
    }
}

/// Evaluate calibrated parameters on the four holdout profiles, `repeats`
/// observations each. Synthetic sources make repeats identical; missing
/// replay recordings leave explicit gaps rather than failing the report.
pub fn evaluate_holdout(
    platform: Platform,
    params: &ParameterVector,
    source: &ObservationSource,
    repeats: usize,
    seed: u64,
) -> Result<HoldoutReport> {
    let mut cells = Vec::with_capacity(4 * repeats);
    for (h, profile) in platform.holdout_suite().into_iter().enumerate() {
        let sim = match run_surrogate(platform, params, &profile) {
            Ok(t) => Some(t),
            Err(SysidError::DivergedSimulation { .. }) => None,
            Err(e) => return Err(e),
        };
        for r in 1..=repeats {
            let error = match (&sim, source.observe(&profile)) {
                (Some(sim), Ok(real)) => Some(training_error(sim, &real)?.mae),
                (None, _) => Some(f64::INFINITY),
                (_, Err(SysidError::MissingRecording(k))) => {
                    log::warn!("no observation for holdout {} ({k}); gap recorded", h + 1);
                    None
                }
                (_, Err(e)) => return Err(e),
            };
            cells.push(HoldoutCell { holdout: h + 1, repeat: r, error });
        }
    }
    Ok(HoldoutReport { seed, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub mean: f64,
    /// Population (divide-by-N) standard deviation.
    pub std: f64,
    pub best: f64,
}

/// Mean, population standard deviation, and minimum over per-seed means.
pub fn aggregate_seeds(means: &[f64]) -> Result<SeedAggregate> {
    if means.is_empty() {
        return Err(SysidError::DegenerateInput("no seed means to aggregate".into()));
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let best = means.iter().copied().fold(f64::MAX, f64::min);
    Ok(SeedAggregate { mean, std: var.sqrt(), best })
}

/// Ascending ranks with ties sharing the average of their positions
/// (1-based: the smallest value ranks 1).
pub fn rank_ascending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average rank
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Per-method mean rank across settings. Each inner vector holds one mean
/// per setting, `None` where the method has no result there (excluded from
/// that setting's ranking with a warning).
pub fn average_rank(methods: &[(String, Vec<Option<f64>>)]) -> Vec<(String, f64)> {
    let settings = methods.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); methods.len()];
    for s in 0..settings {
        let present: Vec<usize> = methods
            .iter()
            .enumerate()
            .filter_map(|(i, (name, v))| match v.get(s) {
                Some(Some(_)) => Some(i),
                _ => {
                    log::warn!("method {name} has no mean in setting {s}; excluded there");
                    None
                }
            })
            .collect();
        let values: Vec<f64> = present.iter().map(|&i| methods[i].1[s].unwrap()).collect();
        for (&i, r) in present.iter().zip(rank_ascending(&values)) {
            sums[i].0 += r;
            sums[i].1 += 1;
        }
    }
    methods
        .iter()
        .zip(sums)
        .map(|((name, _), (sum, n))| (name.clone(), if n == 0 { f64::NAN } else { sum / n as f64 }))
        .collect()
}

/// One recommendation's claimed confidence and its measured effect.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub confidence: f64,
    pub error_before: f64,
    pub error_after: f64,
}

impl ConfidenceRecord {
    /// A recommendation succeeds when it reduced the error.
    pub fn success(&self) -> bool {
        self.error_after < self.error_before
    }
}

/// Success rate among records with confidence at or above `tau`, excluding
/// records whose starting error exceeds `catastrophic`. `None` when no
/// record qualifies (precision is undefined, not 0 or 1).
pub fn confidence_precision(
    records: &[ConfidenceRecord],
    tau: f64,
    catastrophic: f64,
) -> Option<(f64, usize)> {
    let kept: Vec<&ConfidenceRecord> = records
        .iter()
        .filter(|r| r.error_before <= catastrophic && r.confidence >= tau)
        .collect();
    if kept.is_empty() {
        return None;
    }
    let successes = kept.iter().filter(|r| r.success()).count();
    Some((successes as f64 / kept.len() as f64, kept.len()))
}

/// How a run's best-so-far estimate approached a known ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    /// Normalized distance of the best-so-far searchable parameters to the
    /// ground truth, one entry per iteration.
    pub distances: Vec<f64>,
    /// Per-parameter and mean relative error of the final best estimate.
    pub table: RelativeErrorReport,
}

fn searchable_subvector(bounds: &ParameterBounds, p: &ParameterVector) -> Result<ParameterVector> {
    let vals: Result<Vec<(String, f64)>> = bounds
        .searchable()
        .names()
        .map(|n| {
            p.get(n)
                .map(|v| (n.to_string(), v))
                .ok_or_else(|| SysidError::LayoutMismatch(format!("missing entry {n}")))
        })
        .collect();
    Ok(ParameterVector::new(vals?))
}

/// Track recovery of the searchable (physics) parameters over a run with
/// known ground truth.
pub fn recovery_report(
    bounds: &ParameterBounds,
    history: &RunHistory,
    ground_truth: &ParameterVector,
) -> Result<RecoveryReport> {
    let sub = bounds.searchable();
    let gt = searchable_subvector(bounds, ground_truth)?;
    let mut distances = Vec::with_capacity(history.records.len());
    let mut best: Option<(f64, ParameterVector)> = None;
    for r in &history.records {
        let p = searchable_subvector(bounds, &r.params)?;
        if best.as_ref().is_none_or(|(e, _)| r.error < *e) && r.error.is_finite() {
            best = Some((r.error, p.clone()));
        }
        let reference = best.as_ref().map(|(_, b)| b.clone()).unwrap_or(p);
        distances.push(sub.normalized_distance(&reference, &gt)?);
    }
    let (_, final_best) = best.ok_or(SysidError::NoValidIteration)?;
    let table = relative_error(&final_best, &gt)?;
    Ok(RecoveryReport { distances, table })
}

/// One observation of `holdout.csv` (long format).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub platform: String,
    pub method: String,
    pub seed: u64,
    pub holdout: usize,
    pub repeat: usize,
    pub error: f64,
}

pub fn write_holdout_csv(path: &Path, rows: &[HoldoutRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_holdout_csv(path: &Path) -> Result<Vec<HoldoutRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// `ranks.csv`: one row per (setting, method) with the mean and in-setting
/// rank, then one `setting = "average"` row per method.
pub fn write_ranks_csv(
    path: &Path,
    settings: &[String],
    methods: &[(String, Vec<Option<f64>>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "method", "mean", "rank"])?;
    for (s, setting) in settings.iter().enumerate() {
        let present: Vec<usize> = methods
            .iter()
            .enumerate()
            .filter(|(_, (_, v))| matches!(v.get(s), Some(Some(_))))
            .map(|(i, _)| i)
            .collect();
        let values: Vec<f64> = present.iter().map(|&i| methods[i].1[s].unwrap()).collect();
        let ranks = rank_ascending(&values);
        for (&i, r) in present.iter().zip(&ranks) {
            w.write_record([
                setting.as_str(),
                methods[i].0.as_str(),
                &values[present.iter().position(|&j| j == i).unwrap()].to_string(),
                &r.to_string(),
            ])?;
        }
    }
    for (name, avg) in average_rank(methods) {
        w.write_record(["average", &name, "", &avg.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// `confidence.csv`: precision and support at each threshold; empty fields
/// where precision is undefined.
pub fn write_confidence_csv(
    path: &Path,
    records: &[ConfidenceRecord],
    taus: &[f64],
    catastrophic: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "precision", "n"])?;
    for &tau in taus {
        match confidence_precision(records, tau, catastrophic) {
            Some((p, n)) => w.write_record([&tau.to_string(), &p.to_string(), &n.to_string()])?,
            None => w.write_record([&tau.to_string(), "", "0"])?,
        }
    }
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// `recovery.csv`: per-parameter relative error of the final estimate plus
/// a mean row; the per-iteration distances go to a long-format sibling.
pub fn write_recovery_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "relative_percent"])?;
    for (name, pct) in &report.table.per_param {
        w.write_record([name.as_str(), &pct.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.write_record([
        "mean",
        &report.table.mean_percent.map(|v| v.to_string()).unwrap_or_default(),
    ])?;
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(path, &bytes)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "distance"])?;
    for (i, d) in report.distances.iter().enumerate() {
        w.write_record([&(i + 1).to_string(), &d.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(&path.with_file_name("recovery_distance.csv"), &bytes)
}
