//! Pick up a hammer and drive a friction-loaded nail into a board.
//!
//! The hand moves in a vertical plane. Once grasped, the hammer head hangs
//! below the hand at the wrist angle. Crossing the nail head while moving
//! down is an impact: the head stops, and the nail advances by
//! `depth_per_impulse · max(0, impulse − friction·dt)`.

use rand::Rng;

use super::{finish_step, norm2, prepare_action, sub2, ObjectVariation, DAMPING};
use crate::error::Result;
use crate::mdp::{EnvSpec, RewardMode, StepOutcome, DT};

pub(crate) const OBS_DIM: usize = 13;
pub(crate) const ACT_DIM: usize = 4;

const WORKSPACE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HammerParams {
    pub hand_mass: f64,
    pub hammer_mass: f64,
    /// Handle length from grip to head (m).
    pub handle_length: f64,
    pub force_gain: f64,
    pub actuator_damping: f64,
    pub wrist_rate: f64,
    pub wrist_limit: f64,
    pub grasp_radius: f64,
    /// Nail dry friction (N).
    pub nail_friction: f64,
    pub nail_length: f64,
    /// Nail advance per unit excess impulse (m / N·s).
    pub depth_per_impulse: f64,
    /// Horizontal half-width within which the head strikes the nail.
    pub strike_half_width: f64,
    pub board_y: f64,
}

impl HammerParams {
    pub fn nominal() -> Self {
        Self::with_variation(ObjectVariation::default())
    }

    pub fn with_variation(v: ObjectVariation) -> Self {
        HammerParams {
            hand_mass: 1.0,
            hammer_mass: 1.0 * v.mass_scale,
            handle_length: 0.15 * v.size_scale,
            force_gain: 20.0,
            actuator_damping: 5.0,
            wrist_rate: 3.0,
            wrist_limit: 1.2,
            grasp_radius: 0.08,
            nail_friction: 15.0,
            nail_length: 0.05,
            depth_per_impulse: 0.01,
            strike_half_width: 0.04,
            board_y: -0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HammerEnv {
    pub spec: EnvSpec,
    pub params: HammerParams,
    pub hand_pos: [f64; 2],
    pub hand_vel: [f64; 2],
    pub wrist_angle: f64,
    pub grasped: bool,
    /// Grip point of the hammer handle.
    pub handle_pos: [f64; 2],
    pub nail_x: f64,
    pub nail_depth: f64,
    /// Impulse of each impact so far (N·s).
    pub impacts: Vec<f64>,
}

impl HammerEnv {
    pub fn new(reward_mode: RewardMode, params: HammerParams, handle_pos: [f64; 2], nail_x: f64) -> Self {
        HammerEnv {
            spec: super::EnvKind::Hammer.spec(reward_mode, 200, super::DEFAULT_DISCOUNT),
            params,
            hand_pos: [0.0, 0.5],
            hand_vel: [0.0, 0.0],
            wrist_angle: 0.0,
            grasped: false,
            handle_pos,
            nail_x,
            nail_depth: 0.0,
            impacts: Vec::new(),
        }
    }

    pub(crate) fn random<R: Rng + ?Sized>(
        reward_mode: RewardMode,
        variation: ObjectVariation,
        rng: &mut R,
    ) -> Self {
        let handle = [rng.gen_range(-0.6..=0.6), rng.gen_range(0.0..=0.4)];
        let nail_x = rng.gen_range(-0.5..=0.5);
        Self::new(reward_mode, HammerParams::with_variation(variation), handle, nail_x)
    }

    pub fn head_pos(&self) -> [f64; 2] {
        let l = self.params.handle_length;
        [
            self.handle_pos[0] + l * self.wrist_angle.sin(),
            self.handle_pos[1] - l * self.wrist_angle.cos(),
        ]
    }

    /// Height of the nail head above the origin.
    pub fn nail_top(&self) -> f64 {
        self.params.board_y + self.params.nail_length - self.nail_depth
    }

    pub fn observe(&self) -> Vec<f64> {
        let head = self.head_pos();
        let to_handle = sub2(self.handle_pos, self.hand_pos);
        let mut o = Vec::with_capacity(OBS_DIM);
        o.extend_from_slice(&self.hand_pos);
        o.extend_from_slice(&self.hand_vel);
        o.push(self.wrist_angle);
        o.push(if self.grasped { 1.0 } else { 0.0 });
        o.extend_from_slice(&to_handle);
        o.extend_from_slice(&head);
        o.push(head[0] - self.nail_x);
        o.push(head[1] - self.nail_top());
        o.push(self.nail_depth / self.params.nail_length);
        o
    }

    pub fn oracle_success(&self) -> bool {
        self.nail_depth >= self.params.nail_length
    }

    pub fn kinetic_energy(&self) -> f64 {
        let m = self.params.hand_mass + if self.grasped { self.params.hammer_mass } else { 0.0 };
        0.5 * m * (self.hand_vel[0].powi(2) + self.hand_vel[1].powi(2))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let a = prepare_action(&self.spec, action)?;
        let p = self.params.clone();
        let grip = a[2] > 0.0;
        if self.grasped && !grip {
            self.grasped = false;
        }
        let head_before = self.head_pos();

        let mass = p.hand_mass + if self.grasped { p.hammer_mass } else { 0.0 };
        for i in 0..2 {
            let force = p.force_gain * a[i] - p.actuator_damping * self.hand_vel[i];
            self.hand_vel[i] += (force / mass - DAMPING * self.hand_vel[i]) * DT;
            self.hand_pos[i] += self.hand_vel[i] * DT;
            if self.hand_pos[i].abs() > WORKSPACE {
                self.hand_pos[i] = self.hand_pos[i].clamp(-WORKSPACE, WORKSPACE);
                self.hand_vel[i] = 0.0;
            }
        }
        if self.grasped {
            self.wrist_angle = (self.wrist_angle + p.wrist_rate * a[3] * DT).clamp(-p.wrist_limit, p.wrist_limit);
            self.handle_pos = self.hand_pos;
            self.resolve_contacts(head_before);
        } else if grip && norm2(sub2(self.hand_pos, self.handle_pos)) <= p.grasp_radius {
            let total = p.hand_mass + p.hammer_mass;
            for v in &mut self.hand_vel {
                *v *= p.hand_mass / total;
            }
            self.hand_pos = self.handle_pos;
            self.grasped = true;
        }

        let success = self.oracle_success();
        let head = self.head_pos();
        let depth_frac = self.nail_depth / p.nail_length;
        let reach = norm2(sub2(self.hand_pos, self.handle_pos));
        let strike = norm2(sub2(head, [self.nail_x, self.nail_top()]));
        let grasped = self.grasped;
        Ok(finish_step(&self.spec, self.observe(), success, || {
            let g = if grasped { 1.0 } else { 0.0 };
            -reach * (1.0 - g) - strike * g + 5.0 * depth_frac + if success { 10.0 } else { 0.0 }
        }))
    }

    fn resolve_contacts(&mut self, head_before: [f64; 2]) {
        let p = &self.params;
        let head = self.head_pos();
        let top = self.nail_top();
        let over_nail = (head[0] - self.nail_x).abs() <= p.strike_half_width;
        let floor = if over_nail && head_before[1] >= top { top } else { p.board_y };
        if head[1] >= floor {
            return;
        }
        let speed = (head_before[1] - head[1]) / DT;
        if floor == top {
            let impulse = p.hammer_mass * speed;
            self.impacts.push(impulse);
            let advance = p.depth_per_impulse * (impulse - p.nail_friction * DT).max(0.0);
            self.nail_depth = (self.nail_depth + advance).min(p.nail_length);
        }
        // Inelastic stop: lift the hand so the head rests on the surface hit.
        let lift = floor - head[1];
        self.hand_pos[1] += lift;
        self.handle_pos = self.hand_pos;
        self.hand_vel[1] = self.hand_vel[1].max(0.0);
    }
}
