//! Command-line entry point: experiment specs, calibration runs, holdout
//! evaluation, and report generation.

use crate::calib::{
    read_history_csv, run_calibration, select_best_iteration, CalibrationConfig,
    ObservationSource, DEFAULT_BUDGET,
};
use crate::control::{ControlProfile, Platform};
use crate::error::{Result, SysidError};
use crate::eval::{
    aggregate_seeds, average_rank, confidence_precision, evaluate_holdout, recovery_report,
    write_confidence_csv, write_holdout_csv, write_ranks_csv, write_recovery_csv,
    ConfidenceRecord, HoldoutRow, CATASTROPHIC_PX,
};
use crate::param_space::{ParameterBounds, ParameterVector};
use crate::recommend::{
    BoRecommender, CmaEsRecommender, Flags, GoldenCdRecommender, NelderMeadRecommender,
    RandomRecommender, Recommender, ScriptedRecommender,
};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUN: i32 = 3;

#[derive(Parser)]
#[command(name = "sysid", about = "Camera-driven simulator calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration loop for every configured seed.
    Calibrate(RunArgs),
    /// Evaluate completed runs on the four holdout control profiles.
    Holdout(RunArgs),
    /// Aggregate holdout outputs into ranks, recovery, and confidence tables.
    Report(ReportArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides the spec's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list; overrides the spec's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Iteration budget; overrides the spec's.
    #[arg(long)]
    budget: Option<usize>,
    /// Recommender; overrides the spec's.
    #[arg(long)]
    method: Option<String>,
    /// Ablations: no-video, no-history, no-cot, fixed-control.
    #[arg(long, value_delimiter = ',')]
    flags: Option<Vec<String>>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Parser)]
struct ReportArgs {
    /// Directories holding holdout.csv (one per experimental setting).
    dirs: Vec<PathBuf>,
    /// Where the aggregate tables go; defaults to the first directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// On-disk experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub platform: String,
    /// "sim2sim" or "replay".
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Optional bounds file cross-checked against the built-in table.
    pub bounds_file: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Replay recordings manifest (JSON).
    pub manifest: Option<PathBuf>,
    /// Scripted-recommender response file (JSON array).
    pub script: Option<PathBuf>,
    pub vlm: Option<VlmSection>,
}

fn default_mode() -> String {
    "sim2sim".into()
}
fn default_method() -> String {
    "random".into()
}
fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VlmSection {
    pub url: String,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
}

/// One replay recording: the control profile that produced it and the
/// trajectory CSV captured under it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub phases: Vec<f64>,
    pub csv: PathBuf,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| SysidError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let platform = Platform::parse(&self.platform)?;
        if self.seeds.is_empty() {
            return Err(SysidError::Config("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(SysidError::Config("seeds must be distinct".into()));
        }
        match self.mode.as_str() {
            "sim2sim" => {}
            "replay" => {
                if self.manifest.is_none() {
                    return Err(SysidError::Config(
                        "mode = \"replay\" requires a recordings manifest".into(),
                    ));
                }
            }
            other => {
                return Err(SysidError::Config(format!(
                    "unknown mode {other:?} (expected sim2sim or replay)"
                )))
            }
        }
        if let Some(bf) = &self.bounds_file {
            let loaded = ParameterBounds::load(bf)?;
            let builtin = platform.bounds();
            let same = loaded.len() == builtin.len()
                && loaded.entries.iter().zip(&builtin.entries).all(|(a, b)| {
                    a.name == b.name && a.min == b.min && a.max == b.max && a.kind == b.kind
                });
            if !same {
                return Err(SysidError::Config(format!(
                    "bounds file {} disagrees with the {} parameter table",
                    bf.display(),
                    platform.name()
                )));
            }
        }
        parse_flags(&self.flags)?;
        Ok(())
    }

    fn platform(&self) -> Platform {
        Platform::parse(&self.platform).expect("validated")
    }
}

fn parse_flags(names: &[String]) -> Result<Flags> {
    let mut flags = Flags::default();
    for n in names {
        match n.as_str() {
            "no-video" => flags.include_video = false,
            "no-history" => flags.include_history = false,
            "no-cot" => flags.chain_of_thought = false,
            "fixed-control" => flags.tune_control = false,
            other => {
                return Err(SysidError::Config(format!(
                    "unknown flag {other:?} (expected no-video, no-history, no-cot, fixed-control)"
                )))
            }
        }
    }
    Ok(flags)
}

fn build_recommender(spec: &ExperimentSpec, seed: u64) -> Result<Box<dyn Recommender>> {
    Ok(match spec.method.as_str() {
        "random" => Box::new(RandomRecommender::new(seed)),
        "nelder_mead" | "nelder-mead" => Box::new(NelderMeadRecommender::new()),
        "golden_cd" | "golden" => Box::new(GoldenCdRecommender::new(spec.budget)),
        "bo" => Box::new(BoRecommender::new(seed)),
        "cmaes" | "cma-es" => Box::new(CmaEsRecommender::new(seed)),
        "scripted" => {
            let path = spec.script.as_ref().ok_or_else(|| {
                SysidError::Config("method = \"scripted\" requires a script file".into())
            })?;
            Box::new(ScriptedRecommender::from_file(path)?)
        }
        "vlm" => {
            let section = spec.vlm.as_ref().ok_or_else(|| {
                SysidError::Config("method = \"vlm\" requires a [vlm] section with a url".into())
            })?;
            let mut cfg = crate::recommend::VlmConfig::new(section.url.clone());
            cfg.model = section.model.clone();
            cfg.temperature = section.temperature;
            cfg.top_p = section.top_p;
            Box::new(crate::recommend::VlmRecommender::new(cfg))
        }
        other => return Err(SysidError::Config(format!("unknown method {other:?}"))),
    })
}

fn load_replay_source(spec: &ExperimentSpec) -> Result<ObservationSource> {
    let platform = spec.platform();
    let path = spec.manifest.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| SysidError::ParseFailure(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut recs = Vec::with_capacity(entries.len());
    for e in entries {
        if e.amplitudes.len() != platform.channel_count()
            || e.frequencies.len() != e.amplitudes.len()
        {
            return Err(SysidError::Config(format!(
                "manifest entry {} has {} channels, platform has {}",
                e.csv.display(),
                e.amplitudes.len(),
                platform.channel_count()
            )));
        }
        let channels = e
            .amplitudes
            .iter()
            .zip(&e.frequencies)
            .enumerate()
            .map(|(i, (a, f))| crate::control::Channel {
                amplitude: *a,
                frequency: *f,
                phase: e.phases.get(i).copied().unwrap_or(0.0),
            })
            .collect();
        let profile = ControlProfile { platform, channels };
        let traj = crate::sim::Trajectory::read_csv(&base.join(&e.csv))?;
        recs.push((profile, traj));
    }
    Ok(ObservationSource::Replay(recs))
}

/// Initial control: mid-range amplitudes at the training frequencies.
fn initial_control(platform: Platform) -> Result<ControlProfile> {
    let amps: Vec<f64> =
        platform.amplitude_bounds().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    platform.training_profile(&amps)
}

/// Decorrelate the starting parameters from the ground-truth draw, which
/// consumes the raw seed.
const INIT_SALT: u64 = 0x5EED_1234;

fn make_source(spec: &ExperimentSpec, seed: u64) -> Result<ObservationSource> {
    match spec.mode.as_str() {
        "sim2sim" => Ok(ObservationSource::Sim2Sim(crate::sim::ground_truth_scenario(
            spec.platform(),
            seed,
        )?)),
        _ => load_replay_source(spec),
    }
}

fn seed_dir(out: &Path, method: &str, seed: u64) -> PathBuf {
    out.join(method).join(format!("seed_{seed}"))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(SysidError::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn apply_overrides(spec: &mut ExperimentSpec, args: &RunArgs) -> Result<()> {
    if let Some(out) = &args.out {
        spec.out_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(b) = args.budget {
        spec.budget = b;
    }
    if let Some(m) = &args.method {
        spec.method = m.clone();
    }
    if let Some(f) = &args.flags {
        spec.flags = f.clone();
    }
    spec.validate()
}

fn cmd_calibrate(args: &RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    apply_overrides(&mut spec, args)?;
    let platform = spec.platform();
    let bounds = platform.bounds();
    let mut any_partial = false;
    for &seed in &spec.seeds {
        let dir = seed_dir(&spec.out_dir, &spec.method, seed);
        refuse_existing(&dir, args.force)?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        let source = make_source(&spec, seed)?;
        let initial = bounds.sample_uniform(seed.wrapping_add(INIT_SALT));
        let mut cfg = CalibrationConfig::new(platform, initial, initial_control(platform)?, source);
        cfg.budget = spec.budget;
        cfg.flags = parse_flags(&spec.flags)?;
        cfg.out_dir = Some(dir.clone());
        let mut rec = build_recommender(&spec, seed)?;
        let result = run_calibration(&cfg, rec.as_mut())?;
        log::info!(
            "{} seed {seed}: best error {:.3} at iteration {:?}{}",
            spec.method,
            result.best_error,
            result.best_iteration,
            if result.partial { " (partial)" } else { "" }
        );
        println!(
            "calibrate {} seed {seed}: best {:.3} @ iter {}{}",
            spec.method,
            result.best_error,
            result.best_iteration.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
            if result.partial { " [partial]" } else { "" }
        );
        any_partial |= result.partial;
    }
    if any_partial {
        return Err(SysidError::RecommenderUnavailable(
            "one or more runs ended early; see logs".into(),
        ));
    }
    Ok(())
}

#[derive(Deserialize)]
struct RunSummaryIn {
    platform: String,
    best_error: f64,
    best_params: ParameterVector,
    ground_truth: Option<ParameterVector>,
    #[serde(default)]
    partial: bool,
}

fn read_run_json(dir: &Path) -> Result<RunSummaryIn> {
    let text = std::fs::read_to_string(dir.join("run.json"))?;
    serde_json::from_str(&text).map_err(|e| SysidError::Serde(e.to_string()))
}

/// Rebuild an observation source for evaluation from a stored summary:
/// sim2sim summaries carry the ground truth (simulated on demand), replay
/// mode re-reads the manifest.
fn eval_source(spec: &ExperimentSpec, summary: &RunSummaryIn) -> Result<ObservationSource> {
    if let Some(gt) = &summary.ground_truth {
        let platform = spec.platform();
        let amps: Vec<f64> = platform
            .control_param_names()
            .iter()
            .map(|n| gt.get(n).expect("control entry present"))
            .collect();
        Ok(ObservationSource::Sim2Sim(crate::sim::GroundTruthScenario {
            platform,
            ground_truth: gt.clone(),
            training_control: platform.training_profile(&amps)?,
            observations: Default::default(),
        }))
    } else {
        load_replay_source(spec)
    }
}

fn cmd_holdout(args: &RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    apply_overrides(&mut spec, args)?;
    let platform = spec.platform();
    let out_csv = spec.out_dir.join(&spec.method).join("holdout.csv");
    refuse_existing(&out_csv, args.force)?;
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        let dir = seed_dir(&spec.out_dir, &spec.method, seed);
        let summary = read_run_json(&dir)?;
        let history = read_history_csv(&dir.join("history.csv"), platform)?;
        let best_iter = select_best_iteration(&history)?;
        let best = &history.records[best_iter - 1];
        let source = eval_source(&spec, &summary)?;
        let report = evaluate_holdout(platform, &best.params, &source, spec.repeats, seed)?;
        for c in &report.cells {
            let Some(error) = c.error else { continue };
            rows.push(HoldoutRow {
                platform: platform.name().to_string(),
                method: spec.method.clone(),
                seed,
                holdout: c.holdout,
                repeat: c.repeat,
                error,
            });
        }
    }
    write_holdout_csv(&out_csv, &rows)?;
    println!("holdout {}: {} rows -> {}", spec.method, rows.len(), out_csv.display());
    Ok(())
}

fn seed_means(rows: &[HoldoutRow], method: &str) -> Vec<f64> {
    let mut seeds: Vec<u64> =
        rows.iter().filter(|r| r.method == method).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .iter()
        .map(|&s| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.seed == s)
                .map(|r| r.error)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.dirs.is_empty() {
        return Err(SysidError::Config("report needs at least one directory".into()));
    }
    let out = args.out.clone().unwrap_or_else(|| args.dirs[0].clone());
    std::fs::create_dir_all(&out)?;

    // each input directory is one experimental setting; collect every
    // method's holdout rows beneath it
    let mut settings: Vec<(String, Vec<HoldoutRow>)> = Vec::new();
    for dir in &args.dirs {
        let mut rows = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path().join("holdout.csv");
            if p.exists() {
                rows.extend(crate::eval::read_holdout_csv(&p)?);
            }
        }
        if rows.is_empty() {
            return Err(SysidError::Config(format!(
                "no holdout.csv under {}",
                dir.display()
            )));
        }
        let name = rows
            .first()
            .map(|r| r.platform.clone())
            .unwrap_or_else(|| dir.display().to_string());
        settings.push((name, rows));
    }

    let mut methods: Vec<String> = settings
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.method.clone()))
        .collect();
    methods.sort();
    methods.dedup();

    let table: Vec<(String, Vec<Option<f64>>)> = methods
        .iter()
        .map(|m| {
            let means = settings
                .iter()
                .map(|(_, rows)| {
                    let sm = seed_means(rows, m);
                    if sm.is_empty() { None } else { Some(aggregate_seeds(&sm).unwrap().mean) }
                })
                .collect();
            (m.clone(), means)
        })
        .collect();

    let setting_names: Vec<String> = settings.iter().map(|(n, _)| n.clone()).collect();
    let ranks_csv = out.join("ranks.csv");
    refuse_existing(&ranks_csv, args.force)?;
    write_ranks_csv(&ranks_csv, &setting_names, &table)?;

    // summary table on stdout: one row per method, one column per setting,
    // average rank last
    let ranks = average_rank(&table);
    println!("{:<14} {} avg_rank", "method", setting_names.join(" "));
    for ((m, means), (_, rank)) in table.iter().zip(&ranks) {
        let cols: Vec<String> = means
            .iter()
            .map(|v| v.map(|v| format!("{v:.1}")).unwrap_or_else(|| "--".into()))
            .collect();
        println!("{m:<14} {} {rank:.1}", cols.join(" "));
    }

    // recovery + confidence from the per-seed run directories
    let mut conf_records = Vec::new();
    for dir in &args.dirs {
        for entry in std::fs::read_dir(dir)? {
            let method_dir = entry?.path();
            if !method_dir.is_dir() {
                continue;
            }
            for sub in std::fs::read_dir(&method_dir)? {
                let run_dir = sub?.path();
                if !run_dir.join("run.json").exists() {
                    continue;
                }
                let summary = read_run_json(&run_dir)?;
                let platform = Platform::parse(&summary.platform)?;
                let history = read_history_csv(&run_dir.join("history.csv"), platform)?;
                for w in history.records.windows(2) {
                    conf_records.push(ConfidenceRecord {
                        confidence: w[1].confidence,
                        error_before: w[0].error,
                        error_after: w[1].error,
                    });
                }
                if let Some(gt) = &summary.ground_truth {
                    let rep = recovery_report(&platform.bounds(), &history, gt)?;
                    write_recovery_csv(&run_dir.join("recovery.csv"), &rep)?;
                }
                let _ = (summary.best_error, summary.best_params, summary.partial);
            }
        }
    }
    let taus: Vec<f64> = (0..8).map(|i| 0.6 + 0.05 * i as f64).collect();
    let conf_csv = out.join("confidence.csv");
    refuse_existing(&conf_csv, args.force)?;
    write_confidence_csv(&conf_csv, &conf_records, &taus, CATASTROPHIC_PX)?;
    for &tau in &taus {
        if let Some((p, n)) = confidence_precision(&conf_records, tau, CATASTROPHIC_PX) {
            log::info!("precision @ {tau:.2}: {p:.3} (n = {n})");
        }
    }
    Ok(())
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Holdout(a) => cmd_holdout(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e @ SysidError::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUN
        }
    }
}
