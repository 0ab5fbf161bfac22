//! Deterministic reduced-order surrogate simulators with tunable-parameter
//! semantics, plus the shared trajectory container and its on-disk format.

mod finger;
mod rod;

pub use finger::{finger_energy, run_finger, FingerModel};
pub use rod::{rod_energy, run_rod, RodModel};

use crate::control::{ControlProfile, Platform};
use crate::error::{Result, SysidError};
use crate::param_space::ParameterVector;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Duration of the recorded portion of every run (seconds).
pub const RUN_DURATION_S: f64 = 10.0;
/// Settle time simulated before recording starts (seconds).
pub const SETTLE_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    Pixels,
    Millimeters,
}

/// Time-indexed sequence of 2D point sets: 1 point per frame for tip
/// tracking, 10 for centerlines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub fps: f64,
    pub space: CoordSpace,
    pub frames: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn points_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Write the `frame,point,x,y` CSV plus a JSON sidecar holding fps,
    /// coordinate space, and (optionally) the generating parameters.
    pub fn write_csv(&self, path: &Path, params: Option<&ParameterVector>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "point", "x", "y"])?;
        for (fi, frame) in self.frames.iter().enumerate() {
            for (pi, p) in frame.iter().enumerate() {
                w.write_record(&[
                    fi.to_string(),
                    pi.to_string(),
                    format!("{:.6}", p[0]),
                    format!("{:.6}", p[1]),
                ])?;
            }
        }
        w.flush()?;

        #[derive(Serialize)]
        struct Sidecar<'a> {
            fps: f64,
            space: CoordSpace,
            #[serde(skip_serializing_if = "Option::is_none")]
            params: Option<&'a ParameterVector>,
        }
        let sidecar = Sidecar { fps: self.fps, space: self.space, params };
        let json_path = path.with_extension("json");
        std::fs::write(json_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Read a trajectory written by [`write_csv`](Self::write_csv). This is
    /// also the import path for externally captured recordings.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Sidecar {
            fps: f64,
            space: CoordSpace,
        }
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;

        let mut r = csv::Reader::from_path(path)?;
        let mut frames: Vec<Vec<[f64; 2]>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let fi: usize = rec[0].parse().map_err(|_| SysidError::Serde("bad frame index".into()))?;
            let x: f64 = rec[2].parse().map_err(|_| SysidError::Serde("bad x".into()))?;
            let y: f64 = rec[3].parse().map_err(|_| SysidError::Serde("bad y".into()))?;
            if frames.len() <= fi {
                frames.resize(fi + 1, Vec::new());
            }
            frames[fi].push([x, y]);
        }
        let t = Trajectory { fps: sidecar.fps, space: sidecar.space, frames };
        if t.frames.iter().any(|f| f.len() != t.points_per_frame()) {
            return Err(SysidError::Serde("inconsistent point count across frames".into()));
        }
        Ok(t)
    }
}

/// Run the platform's surrogate with the physics in `params` under
/// `control`, producing the standard 10 s recording.
pub fn run_surrogate(
    platform: Platform,
    params: &ParameterVector,
    control: &ControlProfile,
) -> Result<Trajectory> {
    let fps = platform.fps();
    match platform {
        Platform::Finger => {
            let model = FingerModel::from_params(params)?;
            run_finger(&model, control, RUN_DURATION_S, fps)
        }
        Platform::TentacleAir => {
            let model = RodModel::from_air_params(params)?;
            run_rod(&model, false, control, RUN_DURATION_S, fps)
        }
        Platform::TentacleWater => {
            let model = RodModel::from_water_params(params)?;
            run_rod(&model, true, control, RUN_DURATION_S, fps)
        }
    }
}

/// Ground-truth parameters plus the "real" observations used in sim2sim
/// experiments: one recording per holdout and one for the training control.
#[derive(Debug, Clone)]
pub struct GroundTruthScenario {
    pub platform: Platform,
    pub ground_truth: ParameterVector,
    pub training_control: ControlProfile,
    pub observations: HashMap<String, Trajectory>,
}

/// Draw a ground-truth parameter vector uniformly from the platform bounds
/// (seeded) and record the surrogate under the training control and all
/// four holdouts.
pub fn ground_truth_scenario(platform: Platform, seed: u64) -> Result<GroundTruthScenario> {
    let bounds = platform.bounds();
    let gt = bounds.sample_uniform(seed);
    let amps: Vec<f64> = platform
        .control_param_names()
        .iter()
        .map(|n| gt.get(n).expect("control entry in bounds"))
        .collect();
    let training_control = platform.training_profile(&amps)?;

    let mut observations = HashMap::new();
    let mut controls = vec![training_control.clone()];
    controls.extend(platform.holdout_suite());
    for c in controls {
        let traj = run_surrogate(platform, &gt, &c)?;
        observations.insert(c.key(), traj);
    }
    Ok(GroundTruthScenario { platform, ground_truth: gt, training_control, observations })
}

impl GroundTruthScenario {
    /// Observation for `control`, simulating on demand when the profile was
    /// not part of the precomputed set (active learning changes amplitudes).
    pub fn observe(&self, control: &ControlProfile) -> Result<Trajectory> {
        if let Some(t) = self.observations.get(&control.key()) {
            return Ok(t.clone());
        }
        run_surrogate(self.platform, &self.ground_truth, control)
    }
}

pub(crate) fn check_finite(values: &[f64], step: usize, dt: f64) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || v.abs() > 1e3) {
        return Err(SysidError::DivergedSimulation { step, time: step as f64 * dt });
    }
    Ok(())
}

/// Resample a polyline to `n` points equidistant in cumulative arc length,
/// keeping the endpoints.
pub fn resample_arc_length(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    assert!(points.len() >= 2 && n >= 2);
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
        out.push([
            points[seg][0] + t * (points[seg + 1][0] - points[seg][0]),
            points[seg][1] + t * (points[seg + 1][1] - points[seg][1]),
        ]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_straight_line_is_even() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]];
        let r = resample_arc_length(&pts, 5);
        for (i, p) in r.iter().enumerate() {
            assert!((p[0] - 2.5 * i as f64).abs() < 1e-12);
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let t = Trajectory {
            fps: 25.0,
            space: CoordSpace::Pixels,
            frames: vec![vec![[1.0, 2.0], [3.5, 4.25]], vec![[5.0, 6.0], [7.0, 8.0]]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        t.write_csv(&path, None).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn ground_truth_scenario_is_deterministic() {
        let a = ground_truth_scenario(Platform::TentacleAir, 4).unwrap();
        let b = ground_truth_scenario(Platform::TentacleAir, 4).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.observations.len(), 5);
        for (k, v) in &a.observations {
            assert_eq!(v, &b.observations[k]);
        }
    }
}
