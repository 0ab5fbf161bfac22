//! Reduced-order articulated finger: three planar links under PD position
//! control, integrated by semi-implicit Euler at a fixed 1 ms step.

use super::{check_finite, CoordSpace, Trajectory, SETTLE_S};
use crate::control::ControlProfile;
use crate::error::{Result, SysidError};
use crate::param_space::ParameterVector;

/// Internal integration step (seconds).
const DT: f64 = 1e-3;
/// Fixed proportional gain of the PD position controller.
const KP: f64 = 1000.0;
/// Velocity scale of the smoothed dry-friction term (rad/s). A hard sign
/// is non-integrable at this step size.
const FRICTION_EPS: f64 = 1e-3;
/// Link lengths base to tip (meters).
const LINK_LENGTHS: [f64; 3] = [0.05, 0.035, 0.025];
/// Geometric inertia coefficient: distal-mass inertia per unit density is
/// `GEO * L^3` with `L` the distal chain length.
const GEO: f64 = 150.0;

/// Orthographic camera: 4 px/mm, 1920x1080 frame, base anchored left of
/// center with the finger at rest pointing +x and flexing toward +y (down).
const PX_PER_M: f64 = 4000.0;
const BASE_PX: [f64; 2] = [400.0, 540.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FingerModel {
    pub frictionloss: f64,
    pub damping: f64,
    pub armature: f64,
    pub density: f64,
}

impl FingerModel {
    pub fn from_params(params: &ParameterVector) -> Result<Self> {
        let get = |n: &str| {
            params
                .get(n)
                .ok_or_else(|| SysidError::LayoutMismatch(format!("missing parameter {n}")))
        };
        Ok(Self {
            frictionloss: get("frictionloss")?,
            damping: get("damping")?,
            armature: get("armature")?,
            density: get("density")?,
        })
    }

    /// Diagonal inertia per joint: armature plus density-scaled distal links.
    fn joint_inertias(&self) -> [f64; 3] {
        let mut inertias = [0.0; 3];
        for j in 0..3 {
            let distal: f64 = LINK_LENGTHS[j..].iter().sum();
            inertias[j] = self.armature + self.density * GEO * distal.powi(3);
        }
        inertias
    }
}

fn tip_position(q: &[f64; 3]) -> [f64; 2] {
    let mut angle = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for (j, l) in LINK_LENGTHS.iter().enumerate() {
        angle += q[j];
        x += l * angle.cos();
        y += l * angle.sin();
    }
    [x, y]
}

fn to_pixels(p: [f64; 2]) -> [f64; 2] {
    [BASE_PX[0] + p[0] * PX_PER_M, BASE_PX[1] + p[1] * PX_PER_M]
}

/// Simulate the finger under `control` and record the 2D tip position.
///
/// Joint torque is `kp (u - q) - damping q_dot - frictionloss tanh(q_dot/eps)`;
/// channel 0 commands the base joint, channel 1 the two coupled distal
/// joints (amplitudes arrive in degrees). A 2 s settle phase precedes the
/// recording. Bitwise deterministic for identical inputs.
pub fn run_finger(
    model: &FingerModel,
    control: &ControlProfile,
    duration: f64,
    fps: f64,
) -> Result<Trajectory> {
    if duration <= 0.0 {
        return Err(SysidError::Config("duration must be positive".into()));
    }
    let inertias = model.joint_inertias();
    let mut q = [0.0_f64; 3];
    let mut qd = [0.0_f64; 3];

    let n_frames = (duration * fps).round() as usize;
    let total_steps = ((SETTLE_S + duration) / DT).round() as usize;
    let mut frames = Vec::with_capacity(n_frames);
    let mut next_frame = 0usize;

    for step in 0..=total_steps {
        let t = step as f64 * DT;

        // record at t = SETTLE_S + k / fps
        while next_frame < n_frames && t + 0.5 * DT >= SETTLE_S + next_frame as f64 / fps {
            frames.push(vec![to_pixels(tip_position(&q))]);
            next_frame += 1;
        }

        let u0 = control.evaluate(0, t)?.to_radians();
        let u1 = control.evaluate(1, t)?.to_radians();
        let commands = [u0, u1, u1];
        for j in 0..3 {
            let torque = KP * (commands[j] - q[j])
                - model.damping * qd[j]
                - model.frictionloss * (qd[j] / FRICTION_EPS).tanh();
            qd[j] += DT * torque / inertias[j];
        }
        for j in 0..3 {
            q[j] += DT * qd[j];
        }
        check_finite(&q, step, DT)?;
        check_finite(&qd, step, DT)?;
    }
    debug_assert_eq!(frames.len(), n_frames);
    Ok(Trajectory { fps, space: CoordSpace::Pixels, frames })
}

/// Mechanical energy of a finger state given the commanded positions:
/// kinetic plus PD spring potential. Used by dissipation tests.
pub fn finger_energy(model: &FingerModel, q: &[f64; 3], qd: &[f64; 3], commands: &[f64; 3]) -> f64 {
    let inertias = model.joint_inertias();
    let mut e = 0.0;
    for j in 0..3 {
        e += 0.5 * inertias[j] * qd[j] * qd[j];
        e += 0.5 * KP * (commands[j] - q[j]).powi(2);
    }
    e
}
