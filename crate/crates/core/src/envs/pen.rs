//! In-hand reorientation of a pen about a fixed axis.

use std::f64::consts::PI;

use rand::Rng;

use super::{finish_step, prepare_action, wrap_angle, ObjectVariation, DAMPING};
use crate::error::Result;
use crate::mdp::{EnvSpec, RewardMode, StepOutcome, DT};

pub(crate) const OBS_DIM: usize = 6;
pub(crate) const ACT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PenParams {
    /// Rotational inertia about the fixed axis (kg·m²).
    pub inertia: f64,
    /// Torque per unit action for each fingertip channel (N·m).
    pub torque_gains: [f64; ACT_DIM],
    /// Fingertip rolling resistance (N·m·s).
    pub finger_damping: f64,
    /// Orientation tolerance (rad).
    pub tolerance: f64,
    /// The pen must also be nearly at rest (rad/s).
    pub velocity_tolerance: f64,
}

impl PenParams {
    pub fn nominal() -> Self {
        Self::with_variation(ObjectVariation::default())
    }

    pub fn with_variation(v: ObjectVariation) -> Self {
        PenParams {
            inertia: 0.1 * v.mass_scale * v.size_scale * v.size_scale,
            torque_gains: [0.5, 0.5],
            finger_damping: 0.2,
            tolerance: 0.2,
            velocity_tolerance: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PenOrientEnv {
    pub spec: EnvSpec,
    pub params: PenParams,
    pub angle: f64,
    pub angular_velocity: f64,
    pub target: f64,
}

impl PenOrientEnv {
    pub fn new(reward_mode: RewardMode, params: PenParams, angle: f64, target: f64) -> Self {
        PenOrientEnv {
            spec: super::EnvKind::Pen.spec(reward_mode, 100, super::DEFAULT_DISCOUNT),
            params,
            angle: wrap_angle(angle),
            angular_velocity: 0.0,
            target: wrap_angle(target),
        }
    }

    pub(crate) fn random<R: Rng + ?Sized>(
        reward_mode: RewardMode,
        variation: ObjectVariation,
        rng: &mut R,
    ) -> Self {
        // Uniform on (-π, π]: draw from [-π, π) and reflect the left endpoint.
        let mut target = rng.gen_range(-PI..PI);
        if target == -PI {
            target = PI;
        }
        Self::new(reward_mode, PenParams::with_variation(variation), 0.0, target)
    }

    /// Signed orientation error, target minus pen, wrapped.
    pub fn error(&self) -> f64 {
        wrap_angle(self.target - self.angle)
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![
            self.angle.sin(),
            self.angle.cos(),
            self.angular_velocity,
            self.target.sin(),
            self.target.cos(),
            self.error(),
        ]
    }

    pub fn oracle_success(&self) -> bool {
        self.error().abs() <= self.params.tolerance
            && self.angular_velocity.abs() <= self.params.velocity_tolerance
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.params.inertia * self.angular_velocity * self.angular_velocity
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let a = prepare_action(&self.spec, action)?;
        let p = &self.params;
        let torque: f64 = a.iter().zip(&p.torque_gains).map(|(a, g)| a * g).sum::<f64>()
            - p.finger_damping * self.angular_velocity;
        let acc = torque / p.inertia - DAMPING * self.angular_velocity;
        self.angular_velocity += acc * DT;
        self.angle = wrap_angle(self.angle + self.angular_velocity * DT);

        let success = self.oracle_success();
        let err = self.error().abs();
        Ok(finish_step(&self.spec, self.observe(), success, || {
            -err + if success { 5.0 } else { 0.0 }
        }))
    }
}
