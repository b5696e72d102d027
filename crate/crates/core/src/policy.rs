//! Diagonal-Gaussian MLP policy with analytic score functions.
//!
//! Parameters live in one flat vector laid out layer by layer (row-major
//! weights, then biases), followed by one log-standard-deviation per action
//! dimension. The log-stds are state independent.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::mdp::StochasticPolicy;
use crate::par::{self, Execution};
use crate::seed;

pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat gradient with the same layout as [`PolicyParams::flat`].
pub type GradientVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Layer shapes of the mean network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub action_dim: usize,
    pub activation: Activation,
}

impl PolicyManifest {
    pub fn new(obs_dim: usize, hidden: Vec<usize>, action_dim: usize) -> Self {
        PolicyManifest {
            obs_dim,
            hidden,
            action_dim,
            activation: Activation::Tanh,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.obs_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.action_dim);
        d
    }

    /// Parameter offsets of each layer's (weights, biases).
    fn layers(&self) -> Vec<Layer> {
        let dims = self.dims();
        let mut off = 0;
        dims.windows(2)
            .map(|w| {
                let l = Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: off,
                    biases: off + w[0] * w[1],
                };
                off += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    /// Index of the first log-std entry.
    pub fn logstd_offset(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.logstd_offset() + self.action_dim
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    biases: usize,
}

/// Policy parameters; also the policy itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub manifest: PolicyManifest,
    pub flat: Vec<f64>,
}

impl PolicyParams {
    /// Fresh parameters: uniform fan-in weights, the output layer scaled by
    /// 1/100, zero biases, and every log-std set to `init_logstd`.
    pub fn init(manifest: PolicyManifest, init_logstd: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, seed::stream::INIT, 0));
        let mut flat = vec![0.0; manifest.param_count()];
        let layers = manifest.layers();
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            let scale = if i == last { 0.01 } else { 1.0 };
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut flat[l.weights..l.biases] {
                *w = scale * dist.sample(&mut rng);
            }
        }
        let off = manifest.logstd_offset();
        flat[off..].fill(init_logstd.clamp(LOGSTD_MIN, LOGSTD_MAX));
        PolicyParams { manifest, flat }
    }

    pub fn from_flat(manifest: PolicyManifest, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != manifest.param_count() {
            return error::config(format!(
                "flat vector has {} entries, manifest implies {}",
                flat.len(),
                manifest.param_count()
            ));
        }
        let mut p = PolicyParams { manifest, flat };
        p.clamp_logstd();
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn logstd(&self) -> &[f64] {
        &self.flat[self.manifest.logstd_offset()..]
    }

    pub fn logstd_mut(&mut self) -> &mut [f64] {
        let off = self.manifest.logstd_offset();
        &mut self.flat[off..]
    }

    pub fn clamp_logstd(&mut self) {
        for s in self.logstd_mut() {
            *s = s.clamp(LOGSTD_MIN, LOGSTD_MAX);
        }
    }

    /// Returns `self + step`, with log-stds clamped back into range.
    pub fn stepped(&self, step: &[f64]) -> PolicyParams {
        let mut next = self.clone();
        for (p, s) in next.flat.iter_mut().zip(step) {
            *p += s;
        }
        next.clamp_logstd();
        next
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.manifest.obs_dim {
            return error::input(format!(
                "observation has {} entries, policy expects {}",
                obs.len(),
                self.manifest.obs_dim
            ));
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return error::input("non-finite observation");
        }
        Ok(())
    }

    /// Forward pass keeping every layer's output.
    fn forward(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.manifest.layers();
        let last = layers.len() - 1;
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(obs.to_vec());
        for (i, l) in layers.iter().enumerate() {
            let input = &acts[i];
            let w = &self.flat[l.weights..l.biases];
            let b = &self.flat[l.biases..l.biases + l.outputs];
            let out: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    let z = b[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                    if i == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.forward(obs).pop().expect("network has an output layer")
    }

    fn log_density(&self, mean: &[f64], action: &[f64]) -> f64 {
        let d = mean.len() as f64;
        let quad: f64 = mean
            .iter()
            .zip(action)
            .zip(self.logstd())
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                z * z
            })
            .sum();
        -self.logstd().iter().sum::<f64>() - 0.5 * quad - 0.5 * d * (2.0 * PI).ln()
    }

    /// Samples an action with noise drawn from `noise_seed`.
    pub fn act(&self, obs: &[f64], noise_seed: u64) -> Result<(Vec<f64>, f64)> {
        self.check_obs(obs)?;
        Ok(self.sample(obs, &mut seed::rng(noise_seed)))
    }

    /// Gradient of `ln π(action | obs)` with respect to the flat parameters.
    pub fn logprob_grad(&self, obs: &[f64], action: &[f64]) -> Result<GradientVector> {
        self.check_obs(obs)?;
        if action.len() != self.manifest.action_dim {
            return error::input(format!(
                "action has {} entries, policy expects {}",
                action.len(),
                self.manifest.action_dim
            ));
        }
        Ok(self.score(obs, action))
    }

    /// Unchecked score function.
    pub(crate) fn score(&self, obs: &[f64], action: &[f64]) -> GradientVector {
        let mut grad = vec![0.0; self.flat.len()];
        let acts = self.forward(obs);
        let mean = acts.last().expect("output layer");
        let off = self.manifest.logstd_offset();
        let mut delta: Vec<f64> = Vec::with_capacity(mean.len());
        for (i, ((m, a), ls)) in mean.iter().zip(action).zip(self.logstd()).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - m;
            delta.push(diff * inv_var);
            grad[off + i] = diff * diff * inv_var - 1.0;
        }
        let layers = self.manifest.layers();
        for (i, l) in layers.iter().enumerate().rev() {
            let input = &acts[i];
            for o in 0..l.outputs {
                let d = delta[o];
                grad[l.biases + o] = d;
                let row = &mut grad[l.weights + o * l.inputs..l.weights + (o + 1) * l.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = d * x;
                }
            }
            if i > 0 {
                let w = &self.flat[l.weights..l.biases];
                delta = (0..l.inputs)
                    .map(|j| {
                        let back: f64 = (0..l.outputs).map(|o| w[o * l.inputs + j] * delta[o]).sum();
                        back * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
        grad
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            manifest: self.manifest.clone(),
            param_count: self.flat.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        serde_json::to_writer(&mut w, &self.flat)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let flat: Vec<f64> = serde_json::from_str(line.trim_end())?;
        if flat.len() != header.param_count || flat.len() != header.manifest.param_count() {
            return Err(Error::Format("checkpoint parameter count mismatch".into()));
        }
        Ok(PolicyParams {
            manifest: header.manifest,
            flat,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    manifest: PolicyManifest,
    param_count: usize,
}

impl StochasticPolicy for PolicyParams {
    fn obs_dim(&self) -> usize {
        self.manifest.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.manifest.action_dim
    }

    fn mean_action(&self, observation: &[f64]) -> Vec<f64> {
        self.mean(observation)
    }

    fn log_prob(&self, observation: &[f64], action: &[f64]) -> f64 {
        self.log_density(&self.mean(observation), action)
    }

    fn sample<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let mean = self.mean(observation);
        let action: Vec<f64> = mean
            .iter()
            .zip(self.logstd())
            .map(|(m, ls)| {
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                m + ls.exp() * eps
            })
            .collect();
        let lp = self.log_density(&mean, &action);
        (action, lp)
    }
}

/// Observation/action pairs a score matrix is built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>) {
        self.observations.push(obs);
        self.actions.push(action);
    }
}

/// Per-sample score vectors `∇ ln π(a|s)`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn build(params: &PolicyParams, batch: &SampleBatch, exec: Execution) -> Result<Self> {
        for (o, a) in batch.observations.iter().zip(&batch.actions) {
            params.check_obs(o)?;
            if a.len() != params.manifest.action_dim {
                return error::input("action dimension mismatch in batch");
            }
        }
        let rows_vec = par::map_indexed(exec, batch.len(), |i| {
            params.score(&batch.observations[i], &batch.actions[i])
        });
        let cols = params.len();
        let mut data = Vec::with_capacity(rows_vec.len() * cols);
        for r in &rows_vec {
            data.extend_from_slice(r);
        }
        Ok(ScoreMatrix {
            rows: rows_vec.len(),
            cols,
            data,
        })
    }

    /// Wraps precomputed score rows, all of the same length.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != cols) {
            return error::input("score rows differ in length");
        }
        Ok(ScoreMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `(1/n) Σ_i weights[i] · score_i`; zero vector for an empty matrix.
    pub fn weighted_mean(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.rows, "one weight per sample");
        let mut out = vec![0.0; self.cols];
        if self.rows == 0 {
            return out;
        }
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(self.row(i)) {
                *o += w * s;
            }
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        self.weighted_mean(&vec![1.0; self.rows])
    }

    /// `(F + damping·I) v` with `F = (1/n) Σ_i s_i s_iᵀ`.
    pub fn fvp(&self, v: &[f64], damping: f64) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let proj: Vec<f64> = (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(s, x)| s * x).sum())
            .collect();
        let mut out = self.weighted_mean(&proj);
        for (o, x) in out.iter_mut().zip(v) {
            *o += damping * x;
        }
        out
    }

    /// Dense `F` (no damping); intended for small policies and checks.
    pub fn dense_fisher(&self) -> Vec<Vec<f64>> {
        let n = self.rows as f64;
        let mut f = vec![vec![0.0; self.cols]; self.cols];
        for i in 0..self.rows {
            let r = self.row(i);
            for (a, fa) in f.iter_mut().enumerate() {
                for (b, fab) in fa.iter_mut().enumerate() {
                    *fab += r[a] * r[b];
                }
            }
        }
        f.iter_mut().flatten().for_each(|x| *x /= n);
        f
    }
}

/// `(F + damping·I) v` for the empirical Fisher of `batch`.
pub fn fisher_vector_product(
    params: &PolicyParams,
    batch: &SampleBatch,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return error::input("empty batch");
    }
    if damping < 0.0 {
        return error::input("damping must be non-negative");
    }
    if v.len() != params.len() {
        return error::input("vector length differs from parameter count");
    }
    Ok(ScoreMatrix::build(params, batch, Execution::default())?.fvp(v, damping))
}
