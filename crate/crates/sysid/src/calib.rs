//! Iterative calibration loop: simulate, observe, align, score, track the
//! best candidate, ask a recommender for the next one, clamp, repeat.

use crate::align::{
    align, arclength_normalize, mae_tip, median_arc_length, trim_transient, MetricsReport,
};
use crate::control::{clamp_control, ControlProfile, Platform};
use crate::error::{Result, SysidError};
use crate::param_space::ParameterVector;
use crate::recommend::{
    Flags, IterationRecord, MediaRefs, RecommendationRequest, Recommender, RunHistory,
};
use crate::sim::{run_surrogate, GroundTruthScenario, Trajectory};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Maximum temporal shift searched during alignment (seconds).
pub const MAX_LAG_S: f64 = 1.0;
/// Transient skipped before computing the error metric (seconds).
pub const TRIM_S: f64 = 5.0;
/// Default iteration budget.
pub const DEFAULT_BUDGET: usize = 10;

/// Where the "real" observation for a control profile comes from.
pub enum ObservationSource {
    /// Synthetic ground truth: a hidden parameter vector simulated on demand.
    Sim2Sim(GroundTruthScenario),
    /// Imported recordings, one per control profile.
    Replay(Vec<(ControlProfile, Trajectory)>),
}

impl ObservationSource {
    /// Snap a proposed control to one with an available observation. In
    /// replay mode a profile with no recording is pulled back to the nearest
    /// recorded profile (warned); synthetic sources accept any profile.
    pub fn resolve_control(&self, proposed: &ControlProfile) -> Result<ControlProfile> {
        match self {
            ObservationSource::Sim2Sim(_) => Ok(proposed.clone()),
            ObservationSource::Replay(recs) => {
                if recs.iter().any(|(c, _)| c.key() == proposed.key()) {
                    return Ok(proposed.clone());
                }
                let nearest = recs
                    .iter()
                    .filter(|(c, _)| c.channels.len() == proposed.channels.len())
                    .min_by(|a, b| {
                        profile_distance(&a.0, proposed).total_cmp(&profile_distance(&b.0, proposed))
                    })
                    .map(|(c, _)| c.clone())
                    .ok_or_else(|| {
                        SysidError::MissingRecording(format!(
                            "no recording compatible with profile {}",
                            proposed.key()
                        ))
                    })?;
                log::warn!(
                    "no recording for proposed control {}; falling back to nearest recorded \
                     profile {}",
                    proposed.key(),
                    nearest.key()
                );
                Ok(nearest)
            }
        }
    }

    /// The observation for `control`; replay mode requires an exact match.
    pub fn observe(&self, control: &ControlProfile) -> Result<Trajectory> {
        match self {
            ObservationSource::Sim2Sim(s) => s.observe(control),
            ObservationSource::Replay(recs) => recs
                .iter()
                .find(|(c, _)| c.key() == control.key())
                .map(|(_, t)| t.clone())
                .ok_or_else(|| SysidError::MissingRecording(control.key())),
        }
    }
}

fn profile_distance(a: &ControlProfile, b: &ControlProfile) -> f64 {
    a.channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| {
            (x.amplitude - y.amplitude).powi(2)
                + (x.frequency - y.frequency).powi(2)
                + (x.phase - y.phase).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Trajectory production; swappable so loop behavior under simulator faults
/// (and future non-surrogate physics backends) is testable.
pub trait SimBackend {
    fn simulate(
        &self,
        platform: Platform,
        params: &ParameterVector,
        control: &ControlProfile,
    ) -> Result<Trajectory>;
}

/// The built-in surrogate physics.
pub struct SurrogateBackend;

impl SimBackend for SurrogateBackend {
    fn simulate(
        &self,
        platform: Platform,
        params: &ParameterVector,
        control: &ControlProfile,
    ) -> Result<Trajectory> {
        run_surrogate(platform, params, control)
    }
}

pub struct CalibrationConfig {
    pub platform: Platform,
    pub initial_params: ParameterVector,
    pub initial_control: ControlProfile,
    pub budget: usize,
    pub flags: Flags,
    pub source: ObservationSource,
    /// When set, per-iteration trajectory CSVs and run summaries land here.
    pub out_dir: Option<PathBuf>,
}

impl CalibrationConfig {
    pub fn new(
        platform: Platform,
        initial_params: ParameterVector,
        initial_control: ControlProfile,
        source: ObservationSource,
    ) -> Self {
        Self {
            platform,
            initial_params,
            initial_control,
            budget: DEFAULT_BUDGET,
            flags: Flags::default(),
            source,
            out_dir: None,
        }
    }
}

/// Per-iteration bookkeeping beyond the history record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationArtifact {
    pub iteration: usize,
    pub lag_frames: i64,
    pub lag_saturated: bool,
    pub diverged: bool,
    pub sim_csv: Option<PathBuf>,
    pub real_csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub best_params: ParameterVector,
    pub best_control: ControlProfile,
    /// Infinite when no iteration produced a finite error.
    pub best_error: f64,
    pub best_iteration: Option<usize>,
    pub history: RunHistory,
    pub artifacts: Vec<IterationArtifact>,
    /// True when the run stopped early because the recommender was
    /// unavailable; the result still carries the best candidate so far.
    pub partial: bool,
}

/// Training error between a simulated and an observed trajectory: align
/// within the lag window, drop the transient, then tip MAE (single-point
/// trajectories) or centerline MAE after rescaling both sides to the
/// observed median arc length.
pub fn training_error(sim: &Trajectory, real: &Trajectory) -> Result<MetricsReport> {
    let pair = align(sim, real, MAX_LAG_S)?;
    let pair = trim_transient(&pair, TRIM_S)?;
    let mut flags = Vec::new();
    if pair.lag_saturated {
        flags.push("lag_saturated".to_string());
    }
    let mae = if pair.points_per_frame() == 1 {
        mae_tip(&pair)?
    } else {
        let target = median_arc_length(&pair.real);
        let sims = arclength_normalize(&pair.sim, target)?;
        let reals = arclength_normalize(&pair.real, target)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (s, r) in sims.iter().zip(&reals) {
            let (Some(s), Some(r)) = (s, r) else { continue };
            for (p, q) in s.iter().zip(r) {
                sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
            count += s.len();
        }
        if count == 0 {
            return Err(SysidError::DegenerateInput(
                "every frame had zero arc length".into(),
            ));
        }
        sum / count as f64
    };
    Ok(MetricsReport {
        lag_frames: pair.lag_frames,
        mae,
        overlap_frames: pair.overlap_frames(),
        points_per_frame: pair.points_per_frame(),
        flags,
    })
}

struct Candidate {
    params: ParameterVector,
    control: ControlProfile,
    confidence: f64,
    rationale: String,
}

struct Evaluated {
    error: f64,
    lag_frames: i64,
    lag_saturated: bool,
    diverged: bool,
    sim: Option<Trajectory>,
    real: Option<Trajectory>,
}

fn evaluate(
    cfg: &CalibrationConfig,
    backend: &dyn SimBackend,
    cand: &Candidate,
) -> Result<Evaluated> {
    let sim = match backend.simulate(cfg.platform, &cand.params, &cand.control) {
        Ok(t) => t,
        Err(SysidError::DivergedSimulation { step, time }) => {
            log::warn!("simulation diverged at step {step} (t = {time:.3} s); scoring +inf");
            return Ok(Evaluated {
                error: f64::INFINITY,
                lag_frames: 0,
                lag_saturated: false,
                diverged: true,
                sim: None,
                real: None,
            });
        }
        Err(e) => return Err(e),
    };
    let real = cfg.source.observe(&cand.control)?;
    let report = training_error(&sim, &real)?;
    Ok(Evaluated {
        error: report.mae,
        lag_frames: report.lag_frames,
        lag_saturated: !report.flags.is_empty(),
        diverged: false,
        sim: Some(sim),
        real: Some(real),
    })
}

/// Mirror the control profile's amplitudes into the parameter vector's
/// control-kind entries so history rows carry the effective values.
fn sync_control_entries(
    platform: Platform,
    params: &mut ParameterVector,
    control: &ControlProfile,
) {
    for (name, ch) in platform.control_param_names().iter().zip(&control.channels) {
        params.set(name, ch.amplitude);
    }
}

/// Run the calibration loop with the built-in surrogate physics.
pub fn run_calibration(
    cfg: &CalibrationConfig,
    recommender: &mut dyn Recommender,
) -> Result<CalibrationResult> {
    run_calibration_with(cfg, recommender, &SurrogateBackend)
}

/// Run the calibration loop against an explicit simulation backend.
///
/// Each iteration evaluates the pending candidate batch (a single candidate
/// for everything except population methods), records the batch best,
/// feeds all evaluations back, then requests and clamps the next batch.
/// Diverged candidates score +infinity and the loop continues; an
/// unavailable recommender ends the run early with `partial` set. The
/// final iteration skips the recommendation call since its proposal would
/// never be evaluated.
pub fn run_calibration_with(
    cfg: &CalibrationConfig,
    recommender: &mut dyn Recommender,
    backend: &dyn SimBackend,
) -> Result<CalibrationResult> {
    let bounds = cfg.platform.bounds();
    let mut init_params = bounds.clamp(&cfg.initial_params)?;
    let init_control = cfg.source.resolve_control(&clamp_control(&cfg.initial_control))?;
    sync_control_entries(cfg.platform, &mut init_params, &init_control);

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut history = RunHistory::default();
    let mut artifacts = Vec::new();
    let mut partial = false;
    let mut batch = vec![Candidate {
        params: init_params.clone(),
        control: init_control.clone(),
        confidence: 0.5,
        rationale: "initial point".to_string(),
    }];

    for k in 1..=cfg.budget {
        let mut evals = Vec::with_capacity(batch.len());
        for cand in &batch {
            evals.push(evaluate(cfg, backend, cand)?);
        }
        let best_in_batch = evals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.error.total_cmp(&b.1.error).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("batch non-empty");
        let cand = &batch[best_in_batch];
        let ev = &evals[best_in_batch];

        let mut artifact = IterationArtifact {
            iteration: k,
            lag_frames: ev.lag_frames,
            lag_saturated: ev.lag_saturated,
            diverged: ev.diverged,
            sim_csv: None,
            real_csv: None,
        };
        if let Some(dir) = &cfg.out_dir {
            if let Some(sim) = &ev.sim {
                let p = dir.join(format!("iter_{k:02}_sim.csv"));
                sim.write_csv(&p, Some(&cand.params))?;
                artifact.sim_csv = Some(p);
            }
            if let Some(real) = &ev.real {
                let p = dir.join(format!("iter_{k:02}_real.csv"));
                real.write_csv(&p, None)?;
                artifact.real_csv = Some(p);
            }
        }
        let media =
            MediaRefs { sim: artifact.sim_csv.clone(), real: artifact.real_csv.clone() };
        artifacts.push(artifact);
        history.push(IterationRecord {
            iteration: k,
            params: cand.params.clone(),
            control: cand.control.clone(),
            error: ev.error,
            confidence: cand.confidence,
            rationale: cand.rationale.clone(),
        });

        let feedback: Vec<(ParameterVector, f64)> = batch
            .iter()
            .zip(&evals)
            .map(|(c, e)| (c.params.clone(), e.error))
            .collect();
        recommender.observe(&feedback);

        if k == cfg.budget {
            // the final proposal would never be evaluated; skip the call
            break;
        }

        let current = history.records.last().expect("just pushed");
        let req = RecommendationRequest {
            current_params: current.params.clone(),
            current_control: current.control.clone(),
            current_error: current.error,
            bounds: bounds.clone(),
            history: history.clone(),
            media: media.clone(),
            flags: cfg.flags,
        };
        match recommender.propose(&req) {
            Ok(responses) => {
                let mut next = Vec::with_capacity(responses.len());
                for r in responses {
                    let control =
                        cfg.source.resolve_control(&clamp_control(&r.control))?;
                    let mut params = bounds.clamp(&r.params)?;
                    sync_control_entries(cfg.platform, &mut params, &control);
                    next.push(Candidate {
                        params,
                        control,
                        confidence: r.confidence,
                        rationale: r.rationale,
                    });
                }
                if next.is_empty() {
                    return Err(SysidError::Config(format!(
                        "recommender {} returned no candidates",
                        recommender.name()
                    )));
                }
                batch = next;
            }
            Err(SysidError::RecommenderUnavailable(e)) => {
                log::warn!("recommender unavailable ({e}); ending the run with the best so far");
                partial = true;
                break;
            }
            Err(SysidError::ParseFailure(e)) => {
                log::warn!("unparseable recommendation ({e}); re-evaluating the current candidate");
                batch = vec![Candidate {
                    params: current.params.clone(),
                    control: current.control.clone(),
                    confidence: 0.0,
                    rationale: "held after parse failure".to_string(),
                }];
            }
            Err(e) => return Err(e),
        }
    }

    let best = history.best();
    let result = CalibrationResult {
        best_params: best.map(|r| r.params.clone()).unwrap_or(init_params),
        best_control: best.map(|r| r.control.clone()).unwrap_or(init_control),
        best_error: best.map(|r| r.error).unwrap_or(f64::INFINITY),
        best_iteration: best.map(|r| r.iteration),
        history,
        artifacts,
        partial,
    };
    if let Some(dir) = &cfg.out_dir {
        write_run_artifacts(dir, cfg, &result)?;
    }
    Ok(result)
}

/// Index (1-based) of the lowest finite error; earliest on ties.
pub fn select_best_iteration(history: &RunHistory) -> Result<usize> {
    history.best().map(|r| r.iteration).ok_or(SysidError::NoValidIteration)
}

/// `history.csv` column order: iteration, error, confidence, lag, then one
/// column per bounds entry.
pub fn write_history_csv(path: &Path, platform: Platform, history: &RunHistory) -> Result<()> {
    let bounds = platform.bounds();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "iteration".to_string(),
        "error".to_string(),
        "confidence".to_string(),
        "lag".to_string(),
    ];
    header.extend(bounds.names().map(str::to_string));
    w.write_record(&header)?;
    for r in &history.records {
        let mut row = vec![
            r.iteration.to_string(),
            r.error.to_string(),
            r.confidence.to_string(),
            "0".to_string(),
        ];
        for n in bounds.names() {
            row.push(r.params.get(n).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| SysidError::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Parse a `history.csv` produced by [`write_history_csv`].
pub fn read_history_csv(path: &Path, platform: Platform) -> Result<RunHistory> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut history = RunHistory::default();
    for rec in r.records() {
        let rec = rec?;
        let field = |name: &str| -> Result<f64> {
            let idx = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SysidError::Serde(format!("missing column {name}")))?;
            rec.get(idx)
                .ok_or_else(|| SysidError::Serde(format!("short row for {name}")))?
                .parse()
                .map_err(|e| SysidError::Serde(format!("{name}: {e}")))
        };
        let mut values = Vec::new();
        for n in platform.bounds().names() {
            values.push((n.to_string(), field(n)?));
        }
        let params = ParameterVector::new(values);
        let amps: Vec<f64> = platform
            .control_param_names()
            .iter()
            .map(|n| params.get(n).expect("control column present"))
            .collect();
        history.push(IterationRecord {
            iteration: field("iteration")? as usize,
            params: params.clone(),
            control: platform.training_profile(&amps)?,
            error: field("error")?,
            confidence: field("confidence")?,
            rationale: String::new(),
        });
    }
    Ok(history)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    platform: &'a str,
    budget: usize,
    flags: Flags,
    partial: bool,
    best_iteration: Option<usize>,
    best_error: f64,
    best_params: &'a ParameterVector,
    ground_truth: Option<&'a ParameterVector>,
}

fn write_run_artifacts(dir: &Path, cfg: &CalibrationConfig, result: &CalibrationResult) -> Result<()> {
    write_history_csv(&dir.join("history.csv"), cfg.platform, &result.history)?;
    let gt = match &cfg.source {
        ObservationSource::Sim2Sim(s) => Some(&s.ground_truth),
        ObservationSource::Replay(_) => None,
    };
    let summary = RunSummary {
        platform: cfg.platform.name(),
        budget: cfg.budget,
        flags: cfg.flags,
        partial: result.partial,
        best_iteration: result.best_iteration,
        best_error: result.best_error,
        best_params: &result.best_params,
        ground_truth: gt,
    };
    write_atomic(&dir.join("run.json"), serde_json::to_string_pretty(&summary)?.as_bytes())
}

/// Write via a sibling temp file and rename, so readers never observe a
/// half-written artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
