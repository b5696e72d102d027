//! Undo a friction latch, then swing a biased door open to its stop.

use rand::Rng;

use super::{finish_step, prepare_action, ObjectVariation, DAMPING};
use crate::error::Result;
use crate::mdp::{EnvSpec, RewardMode, StepOutcome, DT};

pub(crate) const OBS_DIM: usize = 6;
pub(crate) const ACT_DIM: usize = 2;

/// Range of latch dry friction drawn at reset (N·m).
pub const LATCH_FRICTION_RANGE: (f64, f64) = (0.3, 0.6);

#[derive(Debug, Clone, PartialEq)]
pub struct DoorParams {
    pub latch_inertia: f64,
    pub latch_gain: f64,
    pub latch_friction: f64,
    pub latch_damping: f64,
    pub latch_max: f64,
    /// Latch angle beyond which the door is free to open.
    pub release_angle: f64,
    pub door_inertia: f64,
    /// Push torque per unit action at unit handle lever.
    pub door_gain: f64,
    pub door_damping: f64,
    /// Torque pulling the door closed.
    pub bias_torque: f64,
    pub stop_angle: f64,
    /// Handle distance from the hinge, randomized per episode.
    pub handle_lever: f64,
}

impl DoorParams {
    pub fn nominal() -> Self {
        Self::with_variation(ObjectVariation::default(), 0.45, 1.0)
    }

    pub fn with_variation(v: ObjectVariation, latch_friction: f64, handle_lever: f64) -> Self {
        DoorParams {
            latch_inertia: 0.05,
            latch_gain: 1.0,
            latch_friction,
            latch_damping: 0.1,
            latch_max: 1.0,
            release_angle: 0.6,
            door_inertia: 0.5 * v.mass_scale * v.size_scale * v.size_scale,
            door_gain: 3.0,
            door_damping: 0.5,
            bias_torque: 0.5,
            stop_angle: 1.2,
            handle_lever: handle_lever * v.size_scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoorLatchEnv {
    pub spec: EnvSpec,
    pub params: DoorParams,
    pub latch_angle: f64,
    pub latch_velocity: f64,
    pub door_angle: f64,
    pub door_velocity: f64,
}

impl DoorLatchEnv {
    pub fn new(reward_mode: RewardMode, params: DoorParams) -> Self {
        DoorLatchEnv {
            spec: super::EnvKind::Door.spec(reward_mode, 100, super::DEFAULT_DISCOUNT),
            params,
            latch_angle: 0.0,
            latch_velocity: 0.0,
            door_angle: 0.0,
            door_velocity: 0.0,
        }
    }

    pub(crate) fn random<R: Rng + ?Sized>(
        reward_mode: RewardMode,
        variation: ObjectVariation,
        rng: &mut R,
    ) -> Self {
        let friction = rng.gen_range(LATCH_FRICTION_RANGE.0..=LATCH_FRICTION_RANGE.1);
        let lever = rng.gen_range(0.8..=1.2);
        Self::new(reward_mode, DoorParams::with_variation(variation, friction, lever))
    }

    pub fn latch_released(&self) -> bool {
        self.latch_angle > self.params.release_angle
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![
            self.latch_angle,
            self.latch_velocity,
            self.door_angle,
            self.door_velocity,
            self.params.stop_angle - self.door_angle,
            self.params.handle_lever,
        ]
    }

    pub fn oracle_success(&self) -> bool {
        self.door_angle >= self.params.stop_angle
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.params.latch_inertia * self.latch_velocity.powi(2)
            + 0.5 * self.params.door_inertia * self.door_velocity.powi(2)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let a = prepare_action(&self.spec, action)?;
        self.step_latch(a[0]);
        self.step_door(a[1]);

        let success = self.oracle_success();
        let progress = (self.latch_angle / self.params.release_angle).min(1.0);
        let door = self.door_angle;
        Ok(finish_step(&self.spec, self.observe(), success, || {
            2.0 * progress + door + if success { 10.0 } else { 0.0 }
        }))
    }

    fn step_latch(&mut self, command: f64) {
        let p = &self.params;
        let drive = p.latch_gain * command - p.latch_damping * self.latch_velocity;
        if self.latch_velocity == 0.0 && drive.abs() <= p.latch_friction {
            return;
        }
        let direction = if self.latch_velocity != 0.0 {
            self.latch_velocity.signum()
        } else {
            drive.signum()
        };
        let acc = (drive - p.latch_friction * direction) / p.latch_inertia - DAMPING * self.latch_velocity;
        let v = self.latch_velocity + acc * DT;
        // Dry friction stops the latch rather than reversing it.
        self.latch_velocity = if self.latch_velocity != 0.0 && v.signum() != direction {
            0.0
        } else {
            v
        };
        self.latch_angle += self.latch_velocity * DT;
        if self.latch_angle <= 0.0 {
            self.latch_angle = 0.0;
            self.latch_velocity = self.latch_velocity.max(0.0);
        } else if self.latch_angle >= p.latch_max {
            self.latch_angle = p.latch_max;
            self.latch_velocity = self.latch_velocity.min(0.0);
        }
    }

    fn step_door(&mut self, command: f64) {
        let released = self.latch_released();
        let p = &self.params;
        let torque = p.door_gain * p.handle_lever * command - p.bias_torque - p.door_damping * self.door_velocity;
        let acc = torque / p.door_inertia - DAMPING * self.door_velocity;
        self.door_velocity += acc * DT;
        if !released {
            self.door_velocity = self.door_velocity.min(0.0);
        }
        self.door_angle += self.door_velocity * DT;
        if self.door_angle <= 0.0 {
            self.door_angle = 0.0;
            self.door_velocity = self.door_velocity.max(0.0);
        } else if self.door_angle >= p.stop_angle {
            self.door_angle = p.stop_angle;
            self.door_velocity = self.door_velocity.min(0.0);
        }
    }
}
