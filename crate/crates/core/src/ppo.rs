//! Proximal policy optimisation of the compliance parameters.
//!
//! Every episode is a single decision: the policy sees the believed hole
//! pose and peg type, emits one 38-vector, and the episode reward is the
//! return. A Gaussian policy with a state-independent log standard
//! deviation is trained with the clipped surrogate objective; a separate
//! value network predicts the normalised return and serves as baseline.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{ComplianceParams, ParamBounds, PARAM_COUNT};
use crate::contact::CrossSection;
use crate::env::{
    run_episode, sample_episode, EnvConfig, EpisodeLimits, EpisodeSpec, ErrorRanges, Observation, SUCCESS_REWARD,
};
use crate::error::{invalid, Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 1.0);

/// A fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Tanh hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded during a forward pass.
pub struct MlpCache {
    inputs: Vec<DVector<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `output_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(invalid("sizes", "need at least an input and an output width, all positive"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let gain = if i == last { output_gain } else { 1.0 };
                Dense {
                    weights: DMatrix::from_fn(n_out, n_in, |_, _| gain * rng.gen_range(-limit..=limit)),
                    bias: DVector::zeros(n_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = &layer.weights * &h + &layer.bias;
            inputs.push(h);
            h = if i + 1 < self.layers.len() { z.map(f64::tanh) } else { z };
        }
        (h, MlpCache { inputs })
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward(x).0
    }

    /// Accumulates `∂L/∂θ` into `grad` (flat, in [`flatten`](Self::flatten)
    /// order) given `∂L/∂y` at the output.
    pub fn backward(&self, cache: &MlpCache, grad_out: &DVector<f64>, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let o = offsets[i];
            let (rows, cols) = layer.weights.shape();
            for c in 0..cols {
                for r in 0..rows {
                    grad[o + c * rows + r] += delta[r] * input[c];
                }
            }
            let ob = o + rows * cols;
            for r in 0..rows {
                grad[ob + r] += delta[r];
            }
            if i > 0 {
                let back = layer.weights.transpose() * &delta;
                delta = back.zip_map(input, |g, h| g * (1.0 - h * h));
            }
        }
    }

    /// Column-major weights then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(invalid("flat", "parameter count mismatch"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let m = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[off..off + m]);
            off += m;
        }
        Ok(())
    }
}

/// Gaussian log density of `action` under a diagonal normal.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

/// Differential entropy of a diagonal normal.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LOG_2PI)).sum()
}

/// Policy and value networks plus the action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub version: u32,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub mean: Mlp,
    pub log_std: DVector<f64>,
    pub value: Mlp,
    pub bounds: ParamBounds,
    /// Incremented by every update; batches carry the generation they were
    /// collected under.
    pub generation: u64,
}

/// One sampled decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// How actions are drawn during collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Stochastic,
    /// Zero standard deviation: the mean action.
    Mean,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        bounds: ParamBounds,
        rng: &mut R,
    ) -> Result<Self> {
        if !init_log_std.is_finite() {
            return Err(invalid("init_log_std", "must be finite"));
        }
        bounds.validate()?;
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Ok(Self {
            version: CHECKPOINT_VERSION,
            obs_dim,
            action_dim,
            hidden: hidden.to_vec(),
            mean: Mlp::new(&sizes(action_dim), 0.01, rng)?,
            log_std: DVector::from_element(action_dim, init_log_std),
            value: Mlp::new(&sizes(1), 1.0, rng)?,
            bounds,
            generation: 0,
        })
    }

    /// A policy over the compliance parameters for the environment's
    /// observation.
    pub fn for_compliance<R: Rng + ?Sized>(hidden: &[usize], init_log_std: f64, rng: &mut R) -> Result<Self> {
        Self::new(Observation::DIM, PARAM_COUNT, hidden, init_log_std, ParamBounds::default(), rng)
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Incompatible(format!(
                "observation has {} features, policy expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(())
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        Ok(self.mean.predict(&DVector::from_column_slice(obs)).iter().copied().collect())
    }

    /// Predicted return in units of the success reward.
    pub fn value_of(&self, obs: &[f64]) -> Result<f64> {
        self.check_obs(obs)?;
        Ok(self.value.predict(&DVector::from_column_slice(obs))[0])
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean_action(obs)?;
        Ok(gaussian_log_prob(&mean, self.log_std.as_slice(), action))
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], mode: Sampling, rng: &mut R) -> Result<Sampled> {
        let mean = self.mean_action(obs)?;
        let action: Vec<f64> = match mode {
            Sampling::Mean => mean.clone(),
            Sampling::Stochastic => mean
                .iter()
                .zip(self.log_std.iter())
                .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        Ok(Sampled {
            log_prob: gaussian_log_prob(&mean, self.log_std.as_slice(), &action),
            value: self.value_of(obs)?,
            action,
        })
    }

    /// Squashes an action into compliance parameters inside the box.
    pub fn params_for(&self, action: &[f64]) -> Result<ComplianceParams> {
        if self.action_dim != PARAM_COUNT {
            return Err(Error::Incompatible(format!(
                "policy emits {} values, compliance needs {PARAM_COUNT}",
                self.action_dim
            )));
        }
        self.bounds.squash(action)
    }

    /// Deterministic compliance for an observation.
    pub fn act(&self, obs: &Observation) -> Result<ComplianceParams> {
        self.params_for(&self.mean_action(&obs.features())?)
    }

    /// Mean network parameters followed by the log standard deviations.
    pub fn policy_params(&self) -> Vec<f64> {
        let mut p = self.mean.flatten();
        p.extend(self.log_std.iter());
        p
    }

    pub fn set_policy_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.mean.param_count();
        if flat.len() != n + self.action_dim {
            return Err(invalid("flat", "parameter count mismatch"));
        }
        self.mean.assign(&flat[..n])?;
        self.log_std.as_mut_slice().copy_from_slice(&flat[n..]);
        Ok(())
    }

    /// Clipped surrogate with entropy bonus over `rows` of `batch`, and its
    /// gradient with respect to [`policy_params`](Self::policy_params).
    pub fn surrogate(&self, batch: &RolloutBatch, rows: &[usize], clip: f64, entropy_coef: f64) -> Result<(f64, Vec<f64>, SurrogateStats)> {
        if rows.is_empty() {
            return Err(invalid("rows", "need at least one sample"));
        }
        let n_mean = self.mean.param_count();
        let mut grad = vec![0.0; n_mean + self.action_dim];
        let std: Vec<f64> = self.log_std.iter().map(|v| v.exp()).collect();
        let scale = 1.0 / rows.len() as f64;
        let mut objective = 0.0;
        let mut stats = SurrogateStats::default();
        for &i in rows {
            let obs = &batch.observations[i];
            self.check_obs(obs)?;
            let action = &batch.actions[i];
            let (mean, cache) = self.mean.forward(&DVector::from_column_slice(obs));
            let logp = gaussian_log_prob(mean.as_slice(), self.log_std.as_slice(), action);
            let log_ratio = logp - batch.log_probs[i];
            let ratio = log_ratio.exp();
            let adv = batch.advantages[i];
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
            objective += scale * unclipped.min(clipped);
            stats.approx_kl += scale * ((ratio - 1.0) - log_ratio);
            if (ratio - 1.0).abs() > clip {
                stats.clip_fraction += scale;
            }
            // The min picks the unclipped branch unless clipping strictly
            // lowers the objective, in which case the gradient vanishes.
            if unclipped <= clipped {
                let g = scale * unclipped;
                let mut d_mean = DVector::zeros(self.action_dim);
                for k in 0..self.action_dim {
                    let z = (action[k] - mean[k]) / std[k];
                    d_mean[k] = g * z / std[k];
                    grad[n_mean + k] += g * (z * z - 1.0);
                }
                self.mean.backward(&cache, &d_mean, &mut grad[..n_mean]);
            }
        }
        let entropy = gaussian_entropy(self.log_std.as_slice());
        objective += entropy_coef * entropy;
        for g in &mut grad[n_mean..] {
            *g += entropy_coef;
        }
        stats.entropy = entropy;
        stats.objective = objective;
        Ok((objective, grad, stats))
    }

    /// Mean squared value error over `rows` and its gradient.
    pub fn value_loss(&self, batch: &RolloutBatch, rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.value.param_count()];
        let scale = 1.0 / rows.len().max(1) as f64;
        let mut loss = 0.0;
        for &i in rows {
            let (v, cache) = self.value.forward(&DVector::from_column_slice(&batch.observations[i]));
            let err = v[0] - batch.returns[i];
            loss += 0.5 * scale * err * err;
            self.value.backward(&cache, &DVector::from_element(1, scale * err), &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: Self = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!("checkpoint version {}", self.version)));
        }
        if self.mean.input_dim() != self.obs_dim
            || self.value.input_dim() != self.obs_dim
            || self.mean.output_dim() != self.action_dim
            || self.value.output_dim() != 1
            || self.log_std.len() != self.action_dim
        {
            return Err(Error::Incompatible("layer shapes do not match the declared dimensions".into()));
        }
        for l in self.mean.layers.iter().chain(&self.value.layers) {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Incompatible("bias length does not match its layer".into()));
            }
        }
        if !self.policy_params().iter().chain(self.value.flatten().iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy checkpoint"));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SurrogateStats {
    pub objective: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// One row per episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub generation: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Rewards in units of the success reward.
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
    /// Normalised per batch.
    pub advantages: Vec<f64>,
    pub successes: Vec<bool>,
    pub completion_s: Vec<Option<f64>>,
    pub diagnostics: Vec<Option<String>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Recomputes advantages as normalised `return − value`.
    pub fn compute_advantages(&mut self) {
        let raw: Vec<f64> = self.returns.iter().zip(&self.values).map(|(r, v)| r - v).collect();
        let n = raw.len().max(1) as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        self.advantages = raw
            .iter()
            .map(|a| if std > 1e-8 { (a - mean) / std } else { 0.0 })
            .collect();
    }
}

/// Runs one episode per spec with actions drawn from `policy`. Action noise
/// is drawn sequentially from `rng` and episodes run in parallel, so the
/// batch depends only on the inputs.
pub fn collect_on<R: Rng + ?Sized>(
    policy: &PolicyNet,
    env: &EnvConfig,
    limits: &EpisodeLimits,
    specs: &[EpisodeSpec],
    mode: Sampling,
    rng: &mut R,
) -> Result<RolloutBatch> {
    if specs.is_empty() {
        return Err(invalid("n", "must be at least 1"));
    }
    let mut decisions = Vec::with_capacity(specs.len());
    for spec in specs {
        let obs = spec.observation().features();
        let s = policy.sample(&obs, mode, rng)?;
        let params = policy.params_for(&s.action)?;
        if !policy.bounds.contains(&params) {
            return Err(Error::UpdateAborted("squashed action left the parameter box".into()));
        }
        decisions.push((obs, s, params));
    }
    let results: Vec<_> = specs
        .par_iter()
        .zip(decisions.par_iter())
        .map(|(spec, (_, _, params))| run_episode(env, spec, params, limits))
        .collect();
    let mut batch = RolloutBatch {
        generation: policy.generation,
        ..Default::default()
    };
    for ((obs, s, _), result) in decisions.into_iter().zip(results) {
        let (reward, success, time, diag) = match result {
            Ok(r) => (r.reward, r.success, r.time_to_complete_s, r.diagnostic),
            Err(e) => (0.0, false, None, Some(e.to_string())),
        };
        batch.observations.push(obs);
        batch.actions.push(s.action);
        batch.log_probs.push(s.log_prob);
        batch.values.push(s.value);
        batch.rewards.push(reward);
        batch.returns.push(reward / SUCCESS_REWARD);
        batch.successes.push(success);
        batch.completion_s.push(time);
        batch.diagnostics.push(diag);
    }
    batch.compute_advantages();
    Ok(batch)
}

/// Samples `n` episodes from `env` and collects them.
pub fn collect<R: Rng + ?Sized>(
    policy: &PolicyNet,
    env: &EnvConfig,
    limits: &EpisodeLimits,
    n: usize,
    mode: Sampling,
    rng: &mut R,
) -> Result<RolloutBatch> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let specs = (0..n).map(|_| sample_episode(env, rng)).collect::<Result<Vec<_>>>()?;
    collect_on(policy, env, limits, &specs, mode, rng)
}

/// Adam on a flat parameter vector, minimising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    /// Error ranges in order of difficulty; training starts in the first.
    pub cells: Vec<ErrorRanges>,
    /// Advance once the moving average within a cell reaches this
    /// fraction of the success reward.
    pub advance_fraction: f64,
    /// Advance regardless after this many episodes in a cell.
    pub max_episodes_per_cell: usize,
}

impl Curriculum {
    pub fn single(ranges: ErrorRanges) -> Self {
        Self {
            cells: vec![ranges],
            advance_fraction: 1.0,
            max_episodes_per_cell: usize::MAX,
        }
    }

    /// `n` cells stepping linearly from zero error to `last`.
    pub fn linear(last: ErrorRanges, n: usize, advance_fraction: f64, max_episodes_per_cell: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one cell"));
        }
        let cells = (0..n)
            .map(|i| {
                let f = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
                ErrorRanges::new(f * last.linear_mm, f * last.angular_deg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            advance_fraction,
            max_episodes_per_cell,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clip: f64,
    pub learning_rate: f64,
    pub value_learning_rate: f64,
    /// Episodes per update.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_episodes: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub window: usize,
    /// Success threshold as a fraction of the success reward, measured by
    /// the moving average over a window lying entirely in the last cell.
    pub target_fraction: f64,
    pub stop_at_target: bool,
    pub curriculum: Curriculum,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            learning_rate: 3e-4,
            value_learning_rate: 1e-3,
            batch_size: 64,
            minibatch_size: 64,
            epochs: 10,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            total_episodes: 20_000,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            window: 100,
            target_fraction: 0.85,
            stop_at_target: true,
            curriculum: Curriculum::single(ErrorRanges::zero()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, reason: &str| Error::Config {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(cfg_err("clip", "must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.value_learning_rate > 0.0) {
            return Err(cfg_err("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.epochs == 0 || self.window == 0 {
            return Err(cfg_err("batch_size", "batch, minibatch, epochs and window must be positive"));
        }
        if !(self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return Err(cfg_err("entropy_coef", "must be non-negative with a positive gradient norm cap"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(cfg_err("hidden", "need at least one non-empty hidden layer"));
        }
        if self.curriculum.cells.is_empty() {
            return Err(cfg_err("curriculum", "need at least one cell"));
        }
        for c in &self.curriculum.cells {
            c.validate().map_err(|e| cfg_err("curriculum", &e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub generation: u64,
    pub objective: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Policy plus optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: PolicyNet,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
}

fn clip_norm(g: &mut [f64], max: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

impl Learner {
    pub fn new(policy: PolicyNet, cfg: &TrainConfig) -> Self {
        let n_pol = policy.mean.param_count() + policy.action_dim;
        let n_val = policy.value.param_count();
        Self {
            policy_opt: Adam::new(n_pol, cfg.learning_rate),
            value_opt: Adam::new(n_val, cfg.value_learning_rate),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
            policy,
        }
    }

    /// Maximises the clipped surrogate over `cfg.epochs` passes of the
    /// batch. The batch must come from the current policy generation;
    /// afterwards the generation advances so the batch cannot be reused.
    pub fn update(&mut self, batch: &RolloutBatch, cfg: &TrainConfig) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(invalid("batch", "must not be empty"));
        }
        if batch.generation != self.policy.generation {
            return Err(Error::StaleBatch {
                batch: batch.generation,
                policy: self.policy.generation,
            });
        }
        let mut candidate = self.policy.clone();
        let mut policy_opt = self.policy_opt.clone();
        let mut value_opt = self.value_opt.clone();
        let mut rng = self.rng.clone();
        let mut stats = UpdateStats::default();
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut passes = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for rows in order.chunks(cfg.minibatch_size) {
                let (_, grad, s) = candidate.surrogate(batch, rows, cfg.clip, cfg.entropy_coef)?;
                let (vloss, vgrad) = candidate.value_loss(batch, rows)?;
                if !(s.objective.is_finite() && vloss.is_finite() && grad.iter().chain(vgrad.iter()).all(|g| g.is_finite())) {
                    return Err(Error::UpdateAborted("non-finite gradient".into()));
                }
                let mut descent: Vec<f64> = grad.iter().map(|g| -g).collect();
                stats.grad_norm = clip_norm(&mut descent, cfg.max_grad_norm);
                let mut vgrad = vgrad;
                clip_norm(&mut vgrad, cfg.max_grad_norm);
                let mut p = candidate.policy_params();
                policy_opt.step(&mut p, &descent);
                let (lo, hi) = LOG_STD_RANGE;
                let n_mean = candidate.mean.param_count();
                p[n_mean..].iter_mut().for_each(|v| *v = v.clamp(lo, hi));
                candidate.set_policy_params(&p)?;
                let mut vp = candidate.value.flatten();
                value_opt.step(&mut vp, &vgrad);
                candidate.value.assign(&vp)?;
                stats.objective += s.objective;
                stats.approx_kl += s.approx_kl;
                stats.clip_fraction += s.clip_fraction;
                stats.entropy = s.entropy;
                stats.value_loss += vloss;
                passes += 1;
            }
        }
        if !candidate
            .policy_params()
            .iter()
            .chain(candidate.value.flatten().iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::UpdateAborted("non-finite parameters".into()));
        }
        let k = passes.max(1) as f64;
        stats.objective /= k;
        stats.approx_kl /= k;
        stats.clip_fraction /= k;
        stats.value_loss /= k;
        candidate.generation += 1;
        stats.generation = candidate.generation;
        self.policy = candidate;
        self.policy_opt = policy_opt;
        self.value_opt = value_opt;
        self.rng = rng;
        Ok(stats)
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward: f64,
    pub moving_avg: f64,
    pub cell: usize,
    pub success: bool,
}

/// Trailing mean over at most `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "episode,reward,moving_avg,cell,success")?;
    for p in curve {
        writeln!(out, "{},{:.3},{:.3},{},{}", p.episode, p.reward, p.moving_avg, p.cell, p.success as u8)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNet,
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateStats>,
    /// Episodes consumed when the threshold was first met in the last cell.
    pub episodes_to_threshold: Option<usize>,
    /// Batches whose update was aborted, kept for inspection.
    pub rejected_batches: Vec<RolloutBatch>,
}

/// Training progress callback, called after every update.
pub trait Progress {
    fn update(&mut self, _episodes: usize, _cell: usize, _moving_avg: f64, _stats: &UpdateStats) {}
}

impl Progress for () {}

/// Trains `policy` on `env` through the curriculum.
pub fn train_from(
    policy: PolicyNet,
    env: &EnvConfig,
    limits: &EpisodeLimits,
    cfg: &TrainConfig,
    progress: &mut dyn Progress,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    env.validate()?;
    if policy.obs_dim != Observation::DIM || policy.action_dim != PARAM_COUNT {
        return Err(Error::Incompatible(format!(
            "policy maps {}→{}, the task needs {}→{PARAM_COUNT}",
            policy.obs_dim,
            policy.action_dim,
            Observation::DIM
        )));
    }
    let mut learner = Learner::new(policy, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let last = cfg.curriculum.cells.len() - 1;
    let threshold = cfg.target_fraction * SUCCESS_REWARD;
    let mut cell = 0usize;
    let mut cell_start = 0usize;
    let mut rewards: Vec<f64> = Vec::with_capacity(cfg.total_episodes);
    let mut curve = Vec::with_capacity(cfg.total_episodes);
    let mut updates = Vec::new();
    let mut reached = None;
    let mut rejected = Vec::new();
    let mut sum = 0.0;

    while rewards.len() < cfg.total_episodes {
        let n = cfg.batch_size.min(cfg.total_episodes - rewards.len());
        let cell_env = env.with_ranges(cfg.curriculum.cells[cell]);
        let batch = collect(&learner.policy, &cell_env, limits, n, Sampling::Stochastic, &mut rng)?;
        for (r, s) in batch.rewards.iter().zip(&batch.successes) {
            sum += r;
            rewards.push(*r);
            let len = rewards.len();
            if len > cfg.window {
                sum -= rewards[len - 1 - cfg.window];
            }
            let ma = sum / len.min(cfg.window) as f64;
            curve.push(CurvePoint {
                episode: len,
                reward: *r,
                moving_avg: ma,
                cell,
                success: *s,
            });
            if reached.is_none() && cell == last && len - cell_start >= cfg.window && ma >= threshold {
                reached = Some(len);
            }
        }
        let ma = curve.last().map(|p| p.moving_avg).unwrap_or(0.0);
        let stats = match learner.update(&batch, cfg) {
            Ok(s) => s,
            Err(Error::UpdateAborted(_)) => {
                rejected.push(batch);
                learner.policy.generation += 1;
                UpdateStats::default()
            }
            Err(e) => return Err(e),
        };
        progress.update(rewards.len(), cell, ma, &stats);
        updates.push(stats);
        if reached.is_some() && cfg.stop_at_target {
            break;
        }
        let in_cell = rewards.len() - cell_start;
        let window_full = in_cell >= cfg.window;
        if cell < last
            && ((window_full && ma >= cfg.curriculum.advance_fraction * SUCCESS_REWARD)
                || in_cell >= cfg.curriculum.max_episodes_per_cell)
        {
            cell += 1;
            cell_start = rewards.len();
        }
    }
    Ok(TrainOutcome {
        policy: learner.policy,
        curve,
        updates,
        episodes_to_threshold: reached,
        rejected_batches: rejected,
    })
}

/// Trains a freshly initialised policy.
pub fn train(env: &EnvConfig, limits: &EpisodeLimits, cfg: &TrainConfig, progress: &mut dyn Progress) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let policy = PolicyNet::for_compliance(&cfg.hidden, cfg.init_log_std, &mut rng)?;
    train_from(policy, env, limits, cfg, progress)
}

/// Warm-starts from `base` on a new shape set.
pub fn retrain(
    base: PolicyNet,
    shapes: &[CrossSection],
    env: &EnvConfig,
    limits: &EpisodeLimits,
    cfg: &TrainConfig,
    progress: &mut dyn Progress,
) -> Result<TrainOutcome> {
    base.validate()?;
    if base.obs_dim != Observation::DIM {
        return Err(Error::Incompatible(format!(
            "base policy observes {} features, the task provides {}",
            base.obs_dim,
            Observation::DIM
        )));
    }
    let mut policy = base;
    policy.generation = 0;
    train_from(policy, &env.with_shapes(shapes.to_vec()), limits, cfg, progress)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        PolicyNet::new(3, 2, &[5, 4], -0.3, ParamBounds::default(), &mut rng).unwrap()
    }

    #[test]
    fn moving_average_of_constant_is_constant() {
        let ma = moving_average(&[7.0; 250], 100);
        assert!(ma.iter().all(|v| (v - 7.0).abs() < 1e-12));
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn flatten_round_trips() {
        let mut p = toy();
        let flat = p.policy_params();
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        p.set_policy_params(&shifted).unwrap();
        assert_eq!(p.policy_params(), shifted);
        assert!(p.set_policy_params(&flat[1..]).is_err());
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[0.0], &[0.0], &[1.0]);
        assert!((lp - (-0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        let e = gaussian_entropy(&[0.0, 0.0]);
        assert!((e - (1.0 + (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn wrong_observation_width_is_incompatible() {
        let p = toy();
        assert!(matches!(p.mean_action(&[0.0; 4]), Err(Error::Incompatible(_))));
    }

    #[test]
    fn checkpoint_validation_catches_shape_errors() {
        let mut p = toy();
        p.validate().unwrap();
        p.log_std = DVector::zeros(3);
        assert!(matches!(p.validate(), Err(Error::Incompatible(_))));
    }
}
