//! Linear value baseline on quadratic state/time features, and generalized
//! advantage estimation.

use nalgebra::{DMatrix, DVector};

use crate::mdp::Trajectory;

/// Ridge coefficient added to the normal equations.
pub const RIDGE: f64 = 1e-5;
/// Only the first few state dimensions enter pairwise product features.
pub const PAIR_DIMS: usize = 6;

/// Anything that can estimate the value of a state at a given time step.
pub trait ValuePredictor {
    fn value(&self, state: &[f64], t: usize) -> f64;
}

impl<F: Fn(&[f64], usize) -> f64> ValuePredictor for F {
    fn value(&self, state: &[f64], t: usize) -> f64 {
        self(state, t)
    }
}

/// Fitted linear value function, or the zero baseline.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ValueFunction {
    #[default]
    Zero,
    Linear { weights: Vec<f64>, horizon: usize },
}

impl ValuePredictor for ValueFunction {
    fn value(&self, state: &[f64], t: usize) -> f64 {
        match self {
            ValueFunction::Zero => 0.0,
            ValueFunction::Linear { weights, horizon } => {
                let f = features(state, t, *horizon);
                f.iter().zip(weights).map(|(a, b)| a * b).sum()
            }
        }
    }
}

/// `[1, s, s², s_i·s_j (i<j<PAIR_DIMS), t/H, (t/H)²]`
pub fn features(state: &[f64], t: usize, horizon: usize) -> Vec<f64> {
    let d = state.len();
    let k = d.min(PAIR_DIMS);
    let mut f = Vec::with_capacity(3 + 2 * d + k * (k - 1) / 2);
    f.push(1.0);
    f.extend_from_slice(state);
    f.extend(state.iter().map(|s| s * s));
    for i in 0..k {
        for j in i + 1..k {
            f.push(state[i] * state[j]);
        }
    }
    let tau = t as f64 / horizon.max(1) as f64;
    f.push(tau);
    f.push(tau * tau);
    f
}

/// Discounted reward-to-go at every step of a trajectory.
pub fn rewards_to_go(traj: &Trajectory, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (t, tr) in traj.transitions.iter().enumerate().rev() {
        acc = tr.reward + discount * acc;
        out[t] = acc;
    }
    out
}

/// Ridge least-squares fit of discounted returns on value features.
///
/// Falls back to [`ValueFunction::Zero`] when the system cannot be solved.
pub fn fit_baseline(trajectories: &[Trajectory], discount: f64, horizon: usize) -> ValueFunction {
    let samples: usize = trajectories.iter().map(Trajectory::len).sum();
    let Some(first) = trajectories.iter().find_map(|t| t.transitions.first()) else {
        log::warn!("baseline fit on an empty batch; using the zero baseline");
        return ValueFunction::Zero;
    };
    let p = features(&first.state, 0, horizon).len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for traj in trajectories {
        let returns = rewards_to_go(traj, discount);
        for (t, (tr, g)) in traj.transitions.iter().zip(returns).enumerate() {
            let f = DVector::from_vec(features(&tr.state, t, horizon));
            xtx.ger(1.0, &f, &f, 1.0);
            xty.axpy(g, &f, 1.0);
        }
    }
    let _ = samples;
    // Escalate the ridge if the solve comes back non-finite.
    let mut ridge = RIDGE;
    for _ in 0..5 {
        let a = &xtx + DMatrix::<f64>::identity(p, p) * ridge;
        if let Some(chol) = a.cholesky() {
            let w = chol.solve(&xty);
            if w.iter().all(|x| x.is_finite()) {
                return ValueFunction::Linear {
                    weights: w.iter().copied().collect(),
                    horizon,
                };
            }
        }
        ridge *= 10.0;
    }
    log::warn!("degenerate baseline feature matrix; using the zero baseline");
    ValueFunction::Zero
}

/// Per-sample returns, values and advantages, flattened in trajectory order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdvantageBatch {
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    pub fn max_normalized(&self) -> Option<f64> {
        self.normalized.iter().copied().reduce(f64::max)
    }
}

/// GAE: `Â_t = δ_t + γλ Â_{t+1}` with `δ_t = r_t + γ V(s_{t+1}) − V(s_t)`
/// and a zero value after the last step, then batch normalization.
pub fn compute_advantages<V: ValuePredictor + ?Sized>(
    trajectories: &[Trajectory],
    value_fn: &V,
    discount: f64,
    gae_lambda: f64,
) -> AdvantageBatch {
    let mut batch = AdvantageBatch::default();
    for traj in trajectories {
        let values: Vec<f64> = traj
            .transitions
            .iter()
            .enumerate()
            .map(|(t, tr)| value_fn.value(&tr.state, t))
            .collect();
        let mut adv = vec![0.0; traj.len()];
        let mut acc = 0.0;
        for t in (0..traj.len()).rev() {
            let next = values.get(t + 1).copied().unwrap_or(0.0);
            let delta = traj.transitions[t].reward + discount * next - values[t];
            acc = delta + discount * gae_lambda * acc;
            adv[t] = acc;
        }
        batch.returns.extend(rewards_to_go(traj, discount));
        batch.values.extend(values);
        batch.advantages.extend(adv);
    }
    batch.normalized = normalize(&batch.advantages);
    batch
}

/// Shifts to zero mean and, when the spread exceeds 1e-8, scales to unit
/// (population) standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-8 {
        xs.iter().map(|x| (x - mean) / std).collect()
    } else {
        xs.iter().map(|x| x - mean).collect()
    }
}
