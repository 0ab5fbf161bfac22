//! Sinusoidal actuation profiles, the fixed holdout control suite, and the
//! minimum-amplitude safeguard applied to active-learning proposals.

use crate::error::{Result, SysidError};
use crate::param_space::ParameterBounds;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Experimental platform. Selects parameter bounds, control conventions,
/// camera geometry, and the surrogate simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Finger,
    TentacleAir,
    TentacleWater,
}

static FINGER_BOUNDS: OnceLock<ParameterBounds> = OnceLock::new();
static TENTACLE_AIR_BOUNDS: OnceLock<ParameterBounds> = OnceLock::new();
static TENTACLE_WATER_BOUNDS: OnceLock<ParameterBounds> = OnceLock::new();

impl Platform {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "finger" => Ok(Platform::Finger),
            "tentacle" | "tentacle_air" => Ok(Platform::TentacleAir),
            "tentacle_water" | "water" => Ok(Platform::TentacleWater),
            other => Err(SysidError::UnknownPlatform(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Platform::Finger => "finger",
            Platform::TentacleAir => "tentacle_air",
            Platform::TentacleWater => "tentacle_water",
        }
    }

    /// Built-in parameter bounds (identical to the shipped `.bounds` files).
    pub fn bounds(&self) -> ParameterBounds {
        let (cell, text) = match self {
            Platform::Finger => (&FINGER_BOUNDS, include_str!("../data/finger.bounds")),
            Platform::TentacleAir => (
                &TENTACLE_AIR_BOUNDS,
                include_str!("../data/tentacle_air.bounds"),
            ),
            Platform::TentacleWater => (
                &TENTACLE_WATER_BOUNDS,
                include_str!("../data/tentacle_water.bounds"),
            ),
        };
        cell.get_or_init(|| ParameterBounds::from_toml(text).expect("built-in bounds parse"))
            .clone()
    }

    pub fn channel_count(&self) -> usize {
        match self {
            Platform::Finger => 2,
            _ => 1,
        }
    }

    /// Training frequencies per channel (Hz). Frequency is not a tunable
    /// degree of freedom during calibration.
    pub fn training_frequencies(&self) -> Vec<f64> {
        match self {
            Platform::Finger => vec![0.3, 0.35],
            _ => vec![0.15],
        }
    }

    /// Amplitude bounds per channel, in channel units (deg for the finger,
    /// rad for the tentacle).
    pub fn amplitude_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Platform::Finger => vec![(0.0, 60.0), (0.0, 60.0)],
            _ => vec![(0.2, 1.0)],
        }
    }

    /// Names of the control-kind bound entries, in channel order.
    pub fn control_param_names(&self) -> Vec<&'static str> {
        match self {
            Platform::Finger => vec!["amp_deg0", "amp_deg1"],
            _ => vec!["amplitude"],
        }
    }

    /// Output frame rate of the matched camera (Hz).
    pub fn fps(&self) -> f64 {
        match self {
            Platform::Finger => 30.0,
            _ => 25.0,
        }
    }

    /// Camera frame dimensions in pixels.
    pub fn frame_dims(&self) -> (usize, usize) {
        match self {
            Platform::Finger => (1920, 1080),
            _ => (640, 480),
        }
    }

    /// Training profile with the given per-channel amplitudes, training
    /// frequencies, and zero phase.
    pub fn training_profile(&self, amplitudes: &[f64]) -> Result<ControlProfile> {
        let freqs = self.training_frequencies();
        if amplitudes.len() != freqs.len() {
            return Err(SysidError::Config(format!(
                "{} amplitudes for {} channels",
                amplitudes.len(),
                freqs.len()
            )));
        }
        Ok(ControlProfile {
            platform: *self,
            channels: amplitudes
                .iter()
                .zip(freqs)
                .map(|(a, f)| Channel { amplitude: *a, frequency: f, phase: 0.0 })
                .collect(),
        })
    }

    /// The four fixed holdout profiles H1..H4.
    pub fn holdout_suite(&self) -> Vec<ControlProfile> {
        match self {
            Platform::Finger => {
                // amplitudes in degrees; f0 = 0.3 Hz, f1 = 0.35 Hz, 45 deg
                // phase offset on channel 1
                let phase1 = 45.0_f64.to_radians();
                [(50.0, 50.0), (50.0, 8.0), (8.0, 50.0), (8.0, 8.0)]
                    .iter()
                    .map(|(a0, a1)| ControlProfile {
                        platform: *self,
                        channels: vec![
                            Channel { amplitude: *a0, frequency: 0.3, phase: 0.0 },
                            Channel { amplitude: *a1, frequency: 0.35, phase: phase1 },
                        ],
                    })
                    .collect()
            }
            _ => [(0.9, 0.5), (0.9, 0.15), (0.3, 0.5), (0.3, 0.15)]
                .iter()
                .map(|(a, f)| ControlProfile {
                    platform: *self,
                    channels: vec![Channel { amplitude: *a, frequency: *f, phase: 0.0 }],
                })
                .collect(),
        }
    }
}

/// One sinusoid: `u(t) = A sin(2 pi f t + phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Per-channel sinusoid specification for one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProfile {
    pub platform: Platform,
    pub channels: Vec<Channel>,
}

impl ControlProfile {
    /// Actuation value of `channel` at time `t` (seconds), in channel units.
    pub fn evaluate(&self, channel: usize, t: f64) -> Result<f64> {
        let c = self.channels.get(channel).ok_or(SysidError::InvalidChannel {
            index: channel,
            channels: self.channels.len(),
        })?;
        Ok(c.amplitude * (2.0 * std::f64::consts::PI * c.frequency * t + c.phase).sin())
    }

    /// Stable identifier used to look up recordings in replay mode.
    pub fn key(&self) -> String {
        let mut s = self.platform.name().to_string();
        for c in &self.channels {
            s.push_str(&format!(
                "|a{:.4}_f{:.4}_p{:.4}",
                c.amplitude, c.frequency, c.phase
            ));
        }
        s
    }

    /// Whether all channels satisfy the platform's amplitude bounds and
    /// carry the training frequency.
    pub fn is_valid(&self) -> bool {
        let bounds = self.platform.amplitude_bounds();
        let freqs = self.platform.training_frequencies();
        self.channels.len() == bounds.len()
            && self
                .channels
                .iter()
                .zip(bounds.iter().zip(&freqs))
                .all(|(c, ((lo, hi), _))| c.amplitude >= *lo && c.amplitude <= *hi && c.frequency > 0.0)
    }
}

/// Project a proposed profile into the feasible control set: amplitudes are
/// clamped per channel (the tentacle floor of 0.2 rad is the minimum-motion
/// safeguard) and frequency is reset to the training value. Frequency
/// proposals are not honored during calibration.
pub fn clamp_control(proposed: &ControlProfile) -> ControlProfile {
    let platform = proposed.platform;
    let bounds = platform.amplitude_bounds();
    let freqs = platform.training_frequencies();
    let channels = proposed
        .channels
        .iter()
        .zip(bounds.iter().zip(&freqs))
        .map(|(c, ((lo, hi), f_train))| {
            if (c.frequency - f_train).abs() > 1e-12 {
                log::warn!(
                    "control proposal changed frequency {} -> {}; reset to training value",
                    f_train,
                    c.frequency
                );
            }
            Channel {
                amplitude: c.amplitude.clamp(*lo, *hi),
                frequency: *f_train,
                phase: c.phase,
            }
        })
        .collect();
    ControlProfile { platform, channels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_matches_formula() {
        let p = Platform::TentacleAir.training_profile(&[0.9]).unwrap();
        // phase 0, t = 0 -> 0
        assert_eq!(p.evaluate(0, 0.0).unwrap(), 0.0);

        // quarter period peak: A = 0.9, f = 0.5
        let p = ControlProfile {
            platform: Platform::TentacleAir,
            channels: vec![Channel { amplitude: 0.9, frequency: 0.5, phase: 0.0 }],
        };
        assert!((p.evaluate(0, 0.5).unwrap() - 0.9).abs() < 1e-12);

        // A = 0.3, f = 0.15, t = 1 -> 0.3 sin(0.3 pi)
        let p = ControlProfile {
            platform: Platform::TentacleAir,
            channels: vec![Channel { amplitude: 0.3, frequency: 0.15, phase: 0.0 }],
        };
        let expect = 0.3 * (0.3 * std::f64::consts::PI).sin();
        assert!((p.evaluate(0, 1.0).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 0.24271).abs() < 1e-4);
    }

    #[test]
    fn evaluate_rejects_bad_channel() {
        let p = Platform::TentacleAir.training_profile(&[0.5]).unwrap();
        assert!(matches!(
            p.evaluate(3, 0.0),
            Err(SysidError::InvalidChannel { .. })
        ));
    }

    #[test]
    fn evaluate_is_periodic_and_bounded() {
        let p = Platform::Finger.training_profile(&[30.0, 20.0]).unwrap();
        for ch in 0..2 {
            let f = p.channels[ch].frequency;
            for i in 0..200 {
                let t = i as f64 * 0.037;
                let a = p.evaluate(ch, t).unwrap();
                let b = p.evaluate(ch, t + 1.0 / f).unwrap();
                assert!((a - b).abs() < 1e-9);
                assert!(a.abs() <= p.channels[ch].amplitude + 1e-12);
            }
        }
    }

    #[test]
    fn holdout_suite_matches_fixed_table() {
        let t = Platform::TentacleAir.holdout_suite();
        assert_eq!(t.len(), 4);
        assert_eq!((t[0].channels[0].amplitude, t[0].channels[0].frequency), (0.9, 0.5));
        assert_eq!((t[3].channels[0].amplitude, t[3].channels[0].frequency), (0.3, 0.15));

        let f = Platform::Finger.holdout_suite();
        assert_eq!(f[3].channels[0].amplitude, 8.0);
        assert_eq!(f[3].channels[1].amplitude, 8.0);
        assert_eq!(f[0].channels[0].frequency, 0.3);
        assert_eq!(f[0].channels[1].frequency, 0.35);
        assert!((f[0].channels[1].phase - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(f[0].channels[0].phase, 0.0);
    }

    #[test]
    fn clamp_control_enforces_amplitude_floor_and_frequency() {
        let proposed = ControlProfile {
            platform: Platform::TentacleAir,
            channels: vec![Channel { amplitude: 0.05, frequency: 0.4, phase: 0.0 }],
        };
        let c = clamp_control(&proposed);
        assert_eq!(c.channels[0].amplitude, 0.2);
        assert_eq!(c.channels[0].frequency, 0.15);

        let proposed = ControlProfile {
            platform: Platform::Finger,
            channels: vec![
                Channel { amplitude: 75.0, frequency: 0.3, phase: 0.0 },
                Channel { amplitude: 20.0, frequency: 0.35, phase: 0.0 },
            ],
        };
        let c = clamp_control(&proposed);
        assert_eq!(c.channels[0].amplitude, 60.0);
        assert_eq!(c.channels[1].amplitude, 20.0);
    }

    #[test]
    fn clamp_control_is_idempotent_and_identity_in_bounds() {
        let p = Platform::TentacleAir.training_profile(&[0.7]).unwrap();
        let once = clamp_control(&p);
        assert_eq!(once, p);
        assert_eq!(clamp_control(&once), once);
        assert!(once.is_valid());
    }

    #[test]
    fn shipped_bounds_files_match_builtins() {
        for (platform, file) in [
            (Platform::Finger, "finger.bounds"),
            (Platform::TentacleAir, "tentacle_air.bounds"),
            (Platform::TentacleWater, "tentacle_water.bounds"),
        ] {
            let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("data")
                .join(file);
            let loaded = ParameterBounds::load(&path).unwrap();
            assert_eq!(loaded, platform.bounds());
        }
    }
}
