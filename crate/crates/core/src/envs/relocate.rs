//! Reach, grasp and carry a ball to a target in a planar workspace.

use rand::Rng;

use super::{finish_step, norm2, prepare_action, sub2, ObjectVariation, DAMPING};
use crate::error::Result;
use crate::mdp::{EnvSpec, RewardMode, StepOutcome, DT};

pub(crate) const OBS_DIM: usize = 15;
pub(crate) const ACT_DIM: usize = 3;

const WORKSPACE: f64 = 1.0;
const SPAWN: f64 = 0.7;
const MIN_SEPARATION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct RelocateParams {
    pub hand_mass: f64,
    pub object_mass: f64,
    pub object_radius: f64,
    /// Hand-to-object distance below which a grasp can close.
    pub grasp_radius: f64,
    pub success_epsilon: f64,
    /// Actuator force per unit action (N).
    pub force_gain: f64,
    /// Actuator velocity feedback (N·s/m).
    pub actuator_damping: f64,
    /// Largest inertial force the grip can transmit before the object slips (N).
    pub grip_capacity: f64,
    /// Table friction decelerating a loose object (1/s).
    pub table_friction: f64,
}

impl RelocateParams {
    pub fn nominal() -> Self {
        Self::with_variation(ObjectVariation::default())
    }

    pub fn with_variation(v: ObjectVariation) -> Self {
        let object_radius = 0.04 * v.size_scale;
        RelocateParams {
            hand_mass: 1.0,
            object_mass: 0.5 * v.mass_scale,
            object_radius,
            grasp_radius: 0.04 + object_radius,
            success_epsilon: 0.075,
            force_gain: 20.0,
            actuator_damping: 5.0,
            grip_capacity: 8.0,
            table_friction: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelocateEnv {
    pub spec: EnvSpec,
    pub params: RelocateParams,
    pub hand_pos: [f64; 2],
    pub hand_vel: [f64; 2],
    pub object_pos: [f64; 2],
    pub object_vel: [f64; 2],
    pub target: [f64; 2],
    pub grasped: bool,
    grasp_offset: [f64; 2],
}

impl RelocateEnv {
    /// A resting hand at the origin with the object and target placed
    /// explicitly.
    pub fn new(
        reward_mode: RewardMode,
        params: RelocateParams,
        object_pos: [f64; 2],
        target: [f64; 2],
    ) -> Self {
        RelocateEnv {
            spec: super::EnvKind::Relocate.spec(reward_mode, 100, super::DEFAULT_DISCOUNT),
            params,
            hand_pos: [0.0, 0.0],
            hand_vel: [0.0, 0.0],
            object_pos,
            object_vel: [0.0, 0.0],
            target,
            grasped: false,
            grasp_offset: [0.0, 0.0],
        }
    }

    pub(crate) fn random<R: Rng + ?Sized>(
        reward_mode: RewardMode,
        variation: ObjectVariation,
        rng: &mut R,
    ) -> Self {
        let mut draw = || [rng.gen_range(-SPAWN..=SPAWN), rng.gen_range(-SPAWN..=SPAWN)];
        let object = draw();
        let mut target = draw();
        while norm2(sub2(object, target)) < MIN_SEPARATION {
            target = draw();
        }
        Self::new(reward_mode, RelocateParams::with_variation(variation), object, target)
    }

    pub fn observe(&self) -> Vec<f64> {
        let to_obj = sub2(self.object_pos, self.hand_pos);
        let to_target = sub2(self.target, self.object_pos);
        let mut o = Vec::with_capacity(OBS_DIM);
        o.extend_from_slice(&self.hand_pos);
        o.extend_from_slice(&self.hand_vel);
        o.extend_from_slice(&self.object_pos);
        o.extend_from_slice(&self.object_vel);
        o.extend_from_slice(&self.target);
        o.push(if self.grasped { 1.0 } else { 0.0 });
        o.extend_from_slice(&to_obj);
        o.extend_from_slice(&to_target);
        o
    }

    pub fn oracle_success(&self) -> bool {
        norm2(sub2(self.object_pos, self.target)) <= self.params.success_epsilon
    }

    pub fn kinetic_energy(&self) -> f64 {
        let h = 0.5 * self.params.hand_mass * (self.hand_vel[0].powi(2) + self.hand_vel[1].powi(2));
        let o = 0.5 * self.params.object_mass * (self.object_vel[0].powi(2) + self.object_vel[1].powi(2));
        h + o
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let a = prepare_action(&self.spec, action)?;
        let p = &self.params;
        let grip = a[2] > 0.0;
        if self.grasped && !grip {
            self.grasped = false;
        }

        let mass = p.hand_mass + if self.grasped { p.object_mass } else { 0.0 };
        let mut acc = [0.0; 2];
        for i in 0..2 {
            let force = p.force_gain * a[i] - p.actuator_damping * self.hand_vel[i];
            acc[i] = force / mass - DAMPING * self.hand_vel[i];
        }
        let mut slipped = false;
        if self.grasped && p.object_mass * norm2(acc) > p.grip_capacity {
            // Slip: the object leaves the hand with the hand's velocity and
            // the hand feels only its own inertia this step.
            self.grasped = false;
            slipped = true;
            for i in 0..2 {
                let force = p.force_gain * a[i] - p.actuator_damping * self.hand_vel[i];
                acc[i] = force / p.hand_mass - DAMPING * self.hand_vel[i];
            }
        }
        for i in 0..2 {
            self.hand_vel[i] += acc[i] * DT;
            self.hand_pos[i] += self.hand_vel[i] * DT;
            clamp_axis(&mut self.hand_pos[i], &mut self.hand_vel[i]);
        }

        if self.grasped {
            for i in 0..2 {
                self.object_pos[i] = self.hand_pos[i] + self.grasp_offset[i];
                self.object_vel[i] = self.hand_vel[i];
                clamp_axis(&mut self.object_pos[i], &mut self.object_vel[i]);
            }
        } else {
            for i in 0..2 {
                self.object_vel[i] -= (p.table_friction + DAMPING) * self.object_vel[i] * DT;
                self.object_pos[i] += self.object_vel[i] * DT;
                clamp_axis(&mut self.object_pos[i], &mut self.object_vel[i]);
            }
            if grip && !slipped && norm2(sub2(self.hand_pos, self.object_pos)) <= p.grasp_radius {
                // Perfectly inelastic attachment conserves momentum.
                let total = p.hand_mass + p.object_mass;
                for i in 0..2 {
                    let v = (p.hand_mass * self.hand_vel[i] + p.object_mass * self.object_vel[i]) / total;
                    self.hand_vel[i] = v;
                    self.object_vel[i] = v;
                }
                self.grasp_offset = sub2(self.object_pos, self.hand_pos);
                self.grasped = true;
            }
        }

        let success = self.oracle_success();
        let obs = self.observe();
        let hand_obj = norm2(sub2(self.hand_pos, self.object_pos));
        let obj_target = norm2(sub2(self.object_pos, self.target));
        Ok(finish_step(&self.spec, obs, success, || {
            -hand_obj - 2.0 * obj_target + if success { 10.0 } else { 0.0 }
        }))
    }
}

fn clamp_axis(x: &mut f64, v: &mut f64) {
    if *x > WORKSPACE {
        *x = WORKSPACE;
        *v = v.min(0.0);
    } else if *x < -WORKSPACE {
        *x = -WORKSPACE;
        *v = v.max(0.0);
    }
}
