//! Temporal alignment of sim and real trajectories via bounded normalized
//! cross-correlation, transient trimming, MAE error metrics, and arc-length
//! normalization for centerlines.

use crate::error::{Result, SysidError};
use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};

/// A sim/real trajectory pair cropped to a common overlapping window.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub sim: Trajectory,
    pub real: Trajectory,
    /// Frames the sim recording leads the real one by (positive: sim
    /// events happen earlier and the sim was shifted forward to match).
    pub lag_frames: i64,
    /// True when the correlation peak sat on the lag window boundary, so
    /// the real shift may exceed the window.
    pub lag_saturated: bool,
}

impl AlignedPair {
    pub fn overlap_frames(&self) -> usize {
        self.sim.len()
    }

    pub fn points_per_frame(&self) -> usize {
        self.sim.points_per_frame()
    }
}

/// Summary of one sim/real comparison, serializable for run artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lag_frames: i64,
    pub mae: f64,
    #[serde(rename = "T")]
    pub overlap_frames: usize,
    #[serde(rename = "N")]
    pub points_per_frame: usize,
    pub flags: Vec<String>,
}

/// Per-frame scalar used for correlation: the mean vertical coordinate.
fn alignment_signal(t: &Trajectory) -> Vec<f64> {
    t.frames
        .iter()
        .map(|f| f.iter().map(|p| p[1]).sum::<f64>() / f.len() as f64)
        .collect()
}

/// Zero-mean, unit-variance copy; a constant signal maps to all zeros.
fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

const MIN_OVERLAP_S: f64 = 2.0;

/// Align `sim` to `real` by cross-correlating the mean-vertical-coordinate
/// signals over lags within `max_lag_s`, then crop both to the overlap.
///
/// Normalized correlation makes the lag estimate insensitive to amplitude
/// mismatch. A peak on the window boundary sets `lag_saturated`.
pub fn align(sim: &Trajectory, real: &Trajectory, max_lag_s: f64) -> Result<AlignedPair> {
    if sim.is_empty() || real.is_empty() {
        return Err(SysidError::DegenerateInput("empty trajectory".into()));
    }
    if sim.fps != real.fps {
        return Err(SysidError::MetricMismatch(format!(
            "fps differ: {} vs {}",
            sim.fps, real.fps
        )));
    }
    if sim.points_per_frame() != real.points_per_frame() {
        return Err(SysidError::MetricMismatch(format!(
            "point counts differ: {} vs {}",
            sim.points_per_frame(),
            real.points_per_frame()
        )));
    }
    let a = alignment_signal(sim);
    let b = alignment_signal(real);
    let max_lag = (max_lag_s * sim.fps).round() as i64;

    // Pearson correlation of the overlapping windows per lag; visiting lags
    // by increasing magnitude makes ties resolve to the smallest shift
    let mut best_lag = 0i64;
    let mut best_score = f64::MIN;
    let lags = std::iter::once(0).chain((1..=max_lag).flat_map(|k| [-k, k]));
    for lag in lags {
        // lag > 0: sim frame (t + lag) pairs with real frame t
        let pairs: Vec<(f64, f64)> = (0..b.len())
            .filter_map(|t| {
                let si = t as i64 + lag;
                (si >= 0 && (si as usize) < a.len()).then(|| (a[si as usize], b[t]))
            })
            .collect();
        if pairs.len() < 2 {
            continue;
        }
        let wa = standardize(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let wb = standardize(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let score = wa.iter().zip(&wb).map(|(x, y)| x * y).sum::<f64>() / wa.len() as f64;
        if score > best_score {
            best_score = score;
            best_lag = lag;
        }
    }
    let lag_saturated = best_lag.abs() == max_lag && max_lag > 0;

    let (sim_start, real_start) = if best_lag >= 0 { (best_lag as usize, 0) } else { (0, (-best_lag) as usize) };
    let overlap = (sim.len() - sim_start).min(real.len() - real_start);
    let min_frames = (MIN_OVERLAP_S * sim.fps).round() as usize;
    if overlap < min_frames {
        return Err(SysidError::InsufficientOverlap {
            frames: overlap,
            seconds: overlap as f64 / sim.fps,
        });
    }
    let crop = |t: &Trajectory, start: usize| Trajectory {
        fps: t.fps,
        space: t.space,
        frames: t.frames[start..start + overlap].to_vec(),
    };
    Ok(AlignedPair {
        sim: crop(sim, sim_start),
        real: crop(real, real_start),
        lag_frames: best_lag,
        lag_saturated,
    })
}

/// Drop the first `skip_s` seconds from both sides of the pair.
pub fn trim_transient(pair: &AlignedPair, skip_s: f64) -> Result<AlignedPair> {
    let skip = (skip_s * pair.sim.fps).round() as usize;
    if skip >= pair.overlap_frames() {
        return Err(SysidError::InsufficientOverlap {
            frames: pair.overlap_frames().saturating_sub(skip),
            seconds: 0.0,
        });
    }
    let crop = |t: &Trajectory| Trajectory {
        fps: t.fps,
        space: t.space,
        frames: t.frames[skip..].to_vec(),
    };
    Ok(AlignedPair {
        sim: crop(&pair.sim),
        real: crop(&pair.real),
        lag_frames: pair.lag_frames,
        lag_saturated: pair.lag_saturated,
    })
}

/// Mean Euclidean distance over all frames and all points:
/// `(1 / (T N)) sum_t sum_i || p_i^sim(t) - p_i^real(t) ||`.
pub fn mae_centerline(pair: &AlignedPair) -> Result<f64> {
    let n = pair.points_per_frame();
    if n == 0 {
        return Err(SysidError::DegenerateInput("no points per frame".into()));
    }
    let t_count = pair.overlap_frames();
    let mut sum = 0.0;
    for (fs, fr) in pair.sim.frames.iter().zip(&pair.real.frames) {
        for (p, q) in fs.iter().zip(fr) {
            sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        }
    }
    Ok(sum / (t_count * n) as f64)
}

/// Tip-trajectory MAE; requires exactly one point per frame.
pub fn mae_tip(pair: &AlignedPair) -> Result<f64> {
    if pair.points_per_frame() != 1 {
        return Err(SysidError::MetricMismatch(format!(
            "tip metric needs 1 point per frame, got {}",
            pair.points_per_frame()
        )));
    }
    mae_centerline(pair)
}

/// Rescale every frame about its base point (point 0) so the per-frame arc
/// length equals `target_length`; shape is preserved exactly. Frames with
/// zero arc length become `None` markers for repair.
pub fn arclength_normalize(
    traj: &Trajectory,
    target_length: f64,
) -> Result<Vec<Option<Vec<[f64; 2]>>>> {
    if traj.points_per_frame() < 2 {
        return Err(SysidError::MetricMismatch(
            "arc-length normalization needs at least 2 points per frame".into(),
        ));
    }
    let out = traj
        .frames
        .iter()
        .map(|f| {
            let len = frame_arc_length(f);
            if len == 0.0 {
                return None;
            }
            let s = target_length / len;
            let base = f[0];
            Some(
                f.iter()
                    .map(|p| [base[0] + s * (p[0] - base[0]), base[1] + s * (p[1] - base[1])])
                    .collect(),
            )
        })
        .collect();
    Ok(out)
}

pub fn frame_arc_length(frame: &[[f64; 2]]) -> f64 {
    frame
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

/// Median per-frame arc length, the shared normalization target.
pub fn median_arc_length(traj: &Trajectory) -> f64 {
    let mut lens: Vec<f64> = traj.frames.iter().map(|f| frame_arc_length(f)).collect();
    lens.sort_by(|a, b| a.total_cmp(b));
    let n = lens.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 { lens[n / 2] } else { 0.5 * (lens[n / 2 - 1] + lens[n / 2]) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::CoordSpace;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn sine_traj(fps: f64, duration: f64, phase_shift_s: f64, points: usize) -> Trajectory {
        let n = (fps * duration) as usize;
        let frames = (0..n)
            .map(|k| {
                let t = k as f64 / fps + phase_shift_s;
                (0..points)
                    .map(|i| [10.0 * i as f64, 100.0 + 40.0 * (2.0 * t).sin()])
                    .collect()
            })
            .collect();
        Trajectory { fps, space: CoordSpace::Pixels, frames }
    }

    fn pair_of(sim: Trajectory, real: Trajectory) -> AlignedPair {
        align(&sim, &real, 1.0).unwrap()
    }

    #[test]
    fn identical_trajectories_align_at_zero_lag() {
        let t = sine_traj(30.0, 10.0, 0.0, 1);
        let p = align(&t, &t, 1.0).unwrap();
        assert_eq!(p.lag_frames, 0);
        assert!(!p.lag_saturated);
        assert_eq!(p.overlap_frames(), t.len());
    }

    #[test]
    fn known_shift_is_recovered_within_one_frame() {
        let fps = 30.0;
        let real = sine_traj(fps, 10.0, 0.0, 1);
        let sim = sine_traj(fps, 10.0, 0.4, 1);
        // sim runs 0.4 s ahead, so real frame t matches an earlier sim frame
        let p = align(&sim, &real, 1.0).unwrap();
        let expected = -(0.4 * fps).round() as i64;
        assert!((p.lag_frames - expected).abs() <= 1, "lag {} vs {expected}", p.lag_frames);
    }

    #[test]
    fn oversized_shift_saturates_the_window() {
        let fps = 30.0;
        let real = sine_traj(fps, 12.0, 0.0, 1);
        let sim = sine_traj(fps, 12.0, 1.5, 1);
        let p = align(&sim, &real, 1.0).unwrap();
        assert_eq!(p.lag_frames.abs(), 30);
        assert!(p.lag_saturated);
    }

    #[test]
    fn too_short_overlap_is_an_error() {
        let t = sine_traj(30.0, 1.5, 0.0, 1);
        let r = align(&t, &t, 1.0);
        assert!(matches!(r, Err(SysidError::InsufficientOverlap { .. })));
    }

    #[test]
    fn trim_drops_exactly_skip_frames() {
        let t = sine_traj(30.0, 10.0, 0.0, 2);
        let p = pair_of(t.clone(), t);
        let trimmed = trim_transient(&p, 5.0).unwrap();
        assert_eq!(trimmed.overlap_frames(), 150);
        let identity = trim_transient(&p, 0.0).unwrap();
        assert_eq!(identity, p);
    }

    #[test]
    fn trim_beyond_recording_errors() {
        let t = sine_traj(30.0, 4.0, 0.0, 1);
        let p = pair_of(t.clone(), t);
        assert!(matches!(
            trim_transient(&p, 5.0),
            Err(SysidError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn mae_examples() {
        let t = sine_traj(25.0, 8.0, 0.0, 10);
        let p = pair_of(t.clone(), t.clone());
        assert_eq!(mae_centerline(&p).unwrap(), 0.0);

        let mut shifted = t.clone();
        for f in &mut shifted.frames {
            for p in f {
                p[0] += 3.0;
                p[1] += 4.0;
            }
        }
        // alignment signal shifts uniformly so lag stays 0
        let p = pair_of(t, shifted);
        assert!((mae_centerline(&p).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mae_matches_brute_force_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut rand_frames = |n: usize| -> Vec<Vec<[f64; 2]>> {
            (0..n)
                .map(|_| {
                    (0..2)
                        .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
                        .collect()
                })
                .collect()
        };
        let sim = Trajectory { fps: 30.0, space: CoordSpace::Pixels, frames: rand_frames(3) };
        let real = Trajectory { fps: 30.0, space: CoordSpace::Pixels, frames: rand_frames(3) };
        let pair = AlignedPair { sim: sim.clone(), real: real.clone(), lag_frames: 0, lag_saturated: false };

        let mut oracle = 0.0;
        for t in 0..3 {
            for i in 0..2 {
                let p = sim.frames[t][i];
                let q = real.frames[t][i];
                oracle += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
        }
        oracle /= 6.0;
        assert!((mae_centerline(&pair).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn tip_metric_requires_single_point_and_matches_centerline() {
        let t = sine_traj(30.0, 5.0, 0.0, 1);
        let mut offset = t.clone();
        for f in &mut offset.frames {
            f[0][1] += 7.0;
        }
        let pair =
            AlignedPair { sim: t.clone(), real: offset, lag_frames: 0, lag_saturated: false };
        let tip = mae_tip(&pair).unwrap();
        assert!((tip - 7.0).abs() < 1e-12);
        assert!((tip - mae_centerline(&pair).unwrap()).abs() < 1e-12);

        let multi = sine_traj(30.0, 5.0, 0.0, 3);
        let bad = pair_of(multi.clone(), multi);
        assert!(matches!(mae_tip(&bad), Err(SysidError::MetricMismatch(_))));
    }

    #[test]
    fn mae_symmetry_and_translation_covariance() {
        let a = sine_traj(25.0, 6.0, 0.0, 4);
        let mut b = a.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for f in &mut b.frames {
            for p in f {
                p[0] += rng.random_range(-5.0..5.0);
                p[1] += rng.random_range(-5.0..5.0);
            }
        }
        let ab = AlignedPair { sim: a.clone(), real: b.clone(), lag_frames: 0, lag_saturated: false };
        let ba = AlignedPair { sim: b, real: a.clone(), lag_frames: 0, lag_saturated: false };
        assert!((mae_centerline(&ab).unwrap() - mae_centerline(&ba).unwrap()).abs() < 1e-12);

        let mut c = a.clone();
        for f in &mut c.frames {
            for p in f {
                p[0] += 6.0;
                p[1] += 8.0;
            }
        }
        let ac = AlignedPair { sim: a, real: c, lag_frames: 0, lag_saturated: false };
        assert!((mae_centerline(&ac).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn arc_length_normalization_examples() {
        // straight 10-point line of length 90, target 180: spacing 20 px
        let frame: Vec<[f64; 2]> = (0..10).map(|i| [0.0, 10.0 * i as f64]).collect();
        let traj = Trajectory { fps: 25.0, space: CoordSpace::Pixels, frames: vec![frame.clone()] };
        let out = arclength_normalize(&traj, 180.0).unwrap();
        let f = out[0].as_ref().unwrap();
        for (i, p) in f.iter().enumerate() {
            assert!((p[1] - 20.0 * i as f64).abs() < 1e-9);
            assert!(p[0].abs() < 1e-12);
        }

        // identity at target
        let out = arclength_normalize(&traj, 90.0).unwrap();
        let f = out[0].as_ref().unwrap();
        for (p, q) in f.iter().zip(&traj.frames[0]) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }

        // halving preserves shape ratios
        let out = arclength_normalize(&traj, 45.0).unwrap();
        let f = out[0].as_ref().unwrap();
        assert!((frame_arc_length(f) - 45.0).abs() < 1e-9);
        for w in f.windows(2) {
            assert!((w[1][1] - w[0][1] - 5.0).abs() < 1e-9);
        }

        // degenerate frame becomes a marker
        let degen = Trajectory {
            fps: 25.0,
            space: CoordSpace::Pixels,
            frames: vec![vec![[1.0, 1.0], [1.0, 1.0]]],
        };
        assert_eq!(arclength_normalize(&degen, 90.0).unwrap()[0], None);
    }

    #[test]
    fn normalized_arc_length_hits_target_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let frame: Vec<[f64; 2]> = (0..10)
                .map(|_| [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)])
                .collect();
            let traj =
                Trajectory { fps: 25.0, space: CoordSpace::Pixels, frames: vec![frame] };
            let target = rng.random_range(50.0..400.0);
            let out = arclength_normalize(&traj, target).unwrap();
            let f = out[0].as_ref().unwrap();
            assert!((frame_arc_length(f) - target).abs() / target < 1e-9);
        }
    }

    #[test]
    fn median_arc_length_of_mixed_frames() {
        let mk = |l: f64| vec![[0.0, 0.0], [l, 0.0]];
        let traj = Trajectory {
            fps: 25.0,
            space: CoordSpace::Pixels,
            frames: vec![mk(10.0), mk(30.0), mk(20.0)],
        };
        assert_eq!(median_arc_length(&traj), 20.0);
    }
}
