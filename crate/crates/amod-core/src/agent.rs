//! The actor-critic agent: Dirichlet actor and pooled critic over a shared
//! graph-convolutional trunk shape, Monte-Carlo advantage estimation, the
//! training loop, and checkpoint persistence.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AmodError, Result};
use crate::mat::Mat;
use crate::nn::dirichlet::{dirichlet_mean, dirichlet_sample};
use crate::nn::{adam_step, gcn_layer, Parameter, Tape, TensorId};
use crate::sim::{Observation, RebalanceAction, Simulator};

pub const ALPHA_FLOOR: f64 = 1e-6;
const HIDDEN: usize = 32;

/// Training hyperparameters. Defaults follow the published setup:
/// lr 0.003, discount 0.97, 16,000 episodes of length 60.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lr: f64,
    /// Linearly anneal the learning rate to this value over the run;
    /// None keeps it constant. Late-training noise at a fixed step size
    /// can walk a converged policy back out of its optimum.
    pub lr_final: Option<f64>,
    pub episodes: usize,
    /// Overrides the scenario's episode length when set.
    pub episode_length: Option<usize>,
    pub reward_scale: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Standardize advantages within each episode (mean 0, sd 1) before
    /// the actor update. Keeps the effective actor step size uniform
    /// across scenarios with very different reward magnitudes.
    pub advantage_norm: bool,
    /// Weight each actor term by gamma^t (the textbook policy-gradient
    /// form). Off by default: with 60-step episodes the tail steps would
    /// receive ~6x less gradient, which starves learning in the late
    /// half of the demand cycle.
    pub discount_weighted_updates: bool,
    /// Generalized-advantage lambda. 1.0 gives plain Monte-Carlo returns
    /// minus the critic baseline; smaller values shorten the credit
    /// window, which suits rebalancing where a placement pays off within
    /// a few travel times.
    pub gae_lambda: f64,
    /// Episodes whose gradients are averaged into one optimizer step.
    /// Values > 1 trade update frequency for variance reduction, which
    /// matters under heavy Poisson reward noise.
    pub batch_episodes: usize,
    pub seed: u64,
    /// Evaluate (with deterministic actions) every this many episodes to
    /// track the best checkpoint.
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.97,
            lr: crate::nn::adam::DEFAULT_LR,
            lr_final: None,
            episodes: 16_000,
            episode_length: None,
            reward_scale: 1.0,
            entropy_coef: 0.0,
            value_coef: 0.5,
            advantage_norm: true,
            discount_weighted_updates: false,
            gae_lambda: 0.8,
            batch_episodes: 1,
            seed: 0,
            eval_every: 200,
            eval_episodes: 5,
        }
    }
}

/// One episode of experience.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Discounted returns G_t by backward recursion.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Draw from Dir(alpha) — training.
    Sample,
    /// Dirichlet mean alpha / sum(alpha) — deterministic evaluation.
    Mean,
}

/// Sample or take the mean of Dir(alpha); returns the action and, for
/// sampled actions, its log-probability.
pub fn select_action(
    alpha: &[f64],
    rng: &mut ChaCha8Rng,
    mode: ActionMode,
) -> Result<(RebalanceAction, Option<f64>)> {
    match mode {
        ActionMode::Sample => {
            let a = dirichlet_sample(alpha, rng)?;
            let lp = crate::nn::dirichlet::dirichlet_log_prob_value(alpha, &a)?;
            Ok((RebalanceAction { distribution: a }, Some(lp)))
        }
        ActionMode::Mean => Ok((
            RebalanceAction {
                distribution: dirichlet_mean(alpha),
            },
            None,
        )),
    }
}

/// A policy/value model the trainer can drive. Parameters are registered
/// as tape leaves in `params()` order.
pub trait PolicyModel {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &[Parameter];
    fn params_mut(&mut self) -> &mut [Parameter];

    fn register(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.params()
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    /// Dirichlet concentrations, one strictly positive entry per station.
    fn actor_alpha(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        obs: &Observation,
    ) -> Result<TensorId>;

    /// Scalar state-value estimate.
    fn critic_value(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        obs: &Observation,
    ) -> Result<TensorId>;

    /// Forward pass without gradients; returns plain alpha values.
    fn alpha_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let alpha = self.actor_alpha(&mut tape, &ids, obs)?;
        Ok(tape.value(alpha).data().to_vec())
    }

    fn value_estimate(&self, obs: &Observation) -> Result<f64> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let v = self.critic_value(&mut tape, &ids, obs)?;
        Ok(tape.scalar(v))
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

fn mlp_params(prefix: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Vec<Parameter> {
    let mut out = Vec::new();
    for k in 0..widths.len() - 1 {
        out.push(Parameter::new(
            format!("{prefix}.l{k}.w"),
            xavier(widths[k], widths[k + 1], rng),
        ));
        out.push(Parameter::new(
            format!("{prefix}.l{k}.b"),
            Mat::zeros(1, widths[k + 1]),
        ));
    }
    out
}

/// Applies the registered MLP stack: ReLU on every layer except the last.
fn mlp_forward(
    tape: &mut Tape,
    ids: &[TensorId],
    mut x: TensorId,
    n_layers: usize,
) -> Result<TensorId> {
    for k in 0..n_layers {
        let w = ids[2 * k];
        let b = ids[2 * k + 1];
        let h = tape.matmul(x, w)?;
        let h = tape.add_row_broadcast(h, b)?;
        x = if k + 1 < n_layers { tape.relu(h)? } else { h };
    }
    Ok(x)
}

/// Graph-convolutional actor-critic. One shared-shape trunk per head:
/// a GCN layer with skip projection, neighbor sum aggregation for the
/// actor (node-level outputs) and global sum pooling for the critic
/// (a single permutation-invariant estimate), then three 32-unit MLP
/// layers and a width-1 head. Weights are shared across nodes, so one
/// parameter set evaluates on any graph size.
pub struct GnnModel {
    params: Vec<Parameter>,
    feature_width: usize,
}

const GNN_MLP_LAYERS: usize = 4; // three hidden layers + head

impl GnnModel {
    pub fn new(feature_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for head in ["actor", "critic"] {
            params.push(Parameter::new(
                format!("{head}.gcn.w"),
                xavier(feature_width, HIDDEN, &mut rng),
            ));
            params.push(Parameter::new(
                format!("{head}.gcn.w_skip"),
                xavier(feature_width, HIDDEN, &mut rng),
            ));
            params.extend(mlp_params(
                head,
                &[HIDDEN, HIDDEN, HIDDEN, HIDDEN, 1],
                &mut rng,
            ));
        }
        GnnModel {
            params,
            feature_width,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn from_params(params: Vec<Parameter>) -> Result<Self> {
        let expected = 2 * (2 + 2 * GNN_MLP_LAYERS);
        if params.len() != expected {
            return Err(AmodError::Checkpoint(format!(
                "expected {expected} parameters for a gnn model, got {}",
                params.len()
            )));
        }
        if !params[0].name.starts_with("actor.gcn") {
            return Err(AmodError::Checkpoint(
                "parameter manifest does not look like a gnn model".into(),
            ));
        }
        let feature_width = params[0].value.rows();
        Ok(GnnModel {
            params,
            feature_width,
        })
    }

    fn head_ids<'a>(&self, ids: &'a [TensorId], head: usize) -> &'a [TensorId] {
        let per_head = 2 + 2 * GNN_MLP_LAYERS;
        &ids[head * per_head..(head + 1) * per_head]
    }

    fn trunk(
        &self,
        tape: &mut Tape,
        head_ids: &[TensorId],
        obs: &Observation,
    ) -> Result<TensorId> {
        if obs.feature_width() != self.feature_width {
            return Err(AmodError::InvalidArgument(format!(
                "observation has {} features, model expects {}",
                obs.feature_width(),
                self.feature_width
            )));
        }
        let s = tape.sparse(obs.norm_adjacency.clone());
        let x = tape.leaf(obs.node_features.clone());
        gcn_layer(tape, x, s, head_ids[0], head_ids[1])
    }
}

impl PolicyModel for GnnModel {
    fn kind(&self) -> &'static str {
        "gnn"
    }

    fn params(&self) -> &[Parameter] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    fn actor_alpha(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        obs: &Observation,
    ) -> Result<TensorId> {
        let head = self.head_ids(ids, 0);
        let embed = self.trunk(tape, head, obs)?;
        // aggregate once more across neighbors before the per-node MLP
        let s = tape.sparse(obs.norm_adjacency.clone());
        let pooled = tape.spmm(s, embed)?;
        let raw = mlp_forward(tape, &head[2..], pooled, GNN_MLP_LAYERS)?;
        let soft = tape.softplus(raw)?;
        tape.add_const(soft, ALPHA_FLOOR)
    }

    fn critic_value(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        obs: &Observation,
    ) -> Result<TensorId> {
        let head = self.head_ids(ids, 1);
        let embed = self.trunk(tape, head, obs)?;
        let pooled = tape.global_sum_pool(embed)?;
        mlp_forward(tape, &head[2..], pooled, GNN_MLP_LAYERS)
    }
}

/// Loss summary for one update.
#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Gradients of the actor-critic loss for one complete episode, without
/// touching the optimizer state.
///
/// The critic regresses on Monte-Carlo returns; the actor uses generalized
/// advantages over the critic baseline, treated as constants in the score
/// function term.
pub fn a2c_gradients<M: PolicyModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    config: &TrainerConfig,
) -> Result<(Vec<Mat>, LossReport)> {
    if traj.is_empty() {
        return Err(AmodError::InvalidArgument("empty trajectory".into()));
    }
    let returns = compute_returns(&traj.rewards, config.gamma);

    let mut tape = Tape::new();
    let ids = model.register(&mut tape);

    let mut actor_terms: Vec<TensorId> = Vec::new();
    let mut critic_terms: Vec<TensorId> = Vec::new();
    let mut entropy_total = 0.0;
    let mut actor_loss_val = 0.0;
    let mut critic_loss_val = 0.0;

    // forward everything first so advantages can be standardized jointly
    let mut alphas = Vec::with_capacity(traj.len());
    let mut values = Vec::with_capacity(traj.len());
    for (t, obs) in traj.observations.iter().enumerate() {
        let alpha = model.actor_alpha(&mut tape, &ids, obs)?;
        let value = model.critic_value(&mut tape, &ids, obs)?;
        values.push(tape.scalar(value));
        alphas.push(alpha);

        // critic regresses on the Monte-Carlo return: (G/scale - V)^2
        let g_scaled = returns[t] / config.reward_scale;
        let neg_v = tape.scale(value, -1.0)?;
        let diff = tape.add_const(neg_v, g_scaled)?;
        let sq = tape.mul(diff, diff)?;
        critic_loss_val += tape.scalar(sq);
        critic_terms.push(sq);
    }

    // generalized advantages over the critic baseline; terminal value 0
    let t_len = traj.len();
    let mut advantages = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let next_v = if t + 1 < t_len { values[t + 1] } else { 0.0 };
        let delta = traj.rewards[t] / config.reward_scale + config.gamma * next_v - values[t];
        acc = delta + config.gamma * config.gae_lambda * acc;
        advantages[t] = acc;
    }
    if config.advantage_norm && advantages.len() > 1 {
        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let sd = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        for a in &mut advantages {
            *a = (*a - mean) / sd.max(1e-8);
        }
    }

    for (t, alpha) in alphas.into_iter().enumerate() {
        let discount = if config.discount_weighted_updates {
            config.gamma.powi(t as i32)
        } else {
            1.0
        };
        let logp = tape.dirichlet_log_prob(alpha, &traj.actions[t])?;
        let weighted = tape.scale(logp, -discount * advantages[t])?;
        actor_loss_val += tape.scalar(weighted);
        let actor_term = if config.entropy_coef > 0.0 {
            let ent = tape.dirichlet_entropy(alpha)?;
            entropy_total += tape.scalar(ent);
            let ent_term = tape.scale(ent, -config.entropy_coef)?;
            tape.add(weighted, ent_term)?
        } else {
            weighted
        };
        actor_terms.push(actor_term);
    }

    let actor_loss = sum_terms(&mut tape, &actor_terms)?;
    let critic_loss = sum_terms(&mut tape, &critic_terms)?;
    let critic_weighted = tape.scale(critic_loss, config.value_coef)?;
    let total = tape.add(actor_loss, critic_weighted)?;
    tape.backward(total)?;

    let mut grad_sq = 0.0;
    let mut grads = Vec::with_capacity(ids.len());
    for &id in &ids {
        let grad = tape.grad(id).clone();
        grad_sq += grad.data().iter().map(|g| g * g).sum::<f64>();
        grads.push(grad);
    }

    let report = LossReport {
        actor_loss: actor_loss_val,
        critic_loss: config.value_coef * critic_loss_val,
        entropy: entropy_total,
        grad_norm: grad_sq.sqrt(),
    };
    Ok((grads, report))
}

/// Apply a set of accumulated gradients with Adam at the given rate.
pub fn apply_gradients<M: PolicyModel + ?Sized>(
    model: &mut M,
    grads: &[Mat],
    lr: f64,
) -> Result<()> {
    let params = model.params_mut();
    if grads.len() != params.len() {
        return Err(AmodError::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (param, grad) in params.iter_mut().zip(grads) {
        adam_step(
            param,
            grad,
            lr,
            crate::nn::adam::DEFAULT_BETA1,
            crate::nn::adam::DEFAULT_BETA2,
            crate::nn::adam::DEFAULT_EPS,
        );
    }
    Ok(())
}

/// One advantage actor-critic update from a complete episode: gradients
/// followed immediately by an Adam step.
pub fn a2c_update<M: PolicyModel + ?Sized>(
    model: &mut M,
    traj: &Trajectory,
    config: &TrainerConfig,
) -> Result<LossReport> {
    let (grads, report) = a2c_gradients(model, traj, config)?;
    apply_gradients(model, &grads, config.lr)?;
    Ok(report)
}

fn sum_terms(tape: &mut Tape, terms: &[TensorId]) -> Result<TensorId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Roll out one episode with sampled actions.
pub fn rollout<M: PolicyModel + ?Sized>(
    model: &M,
    sim: &mut Simulator,
    episode_seed: u64,
    steps: usize,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut obs = sim.reset(episode_seed)?;
    let mut traj = Trajectory::default();
    for _ in 0..steps {
        let alpha = model.alpha_values(&obs)?;
        let value = model.value_estimate(&obs)?;
        let (action, logp) = select_action(&alpha, &mut rng, ActionMode::Sample)?;
        let out = sim.step(&action)?;
        traj.observations.push(obs);
        traj.actions.push(action.distribution);
        traj.log_probs.push(logp.unwrap_or(0.0));
        traj.values.push(value);
        traj.rewards.push(out.reward);
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(traj)
}

/// Per-episode training metrics row.
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward: f64,
    pub served_demand: i64,
    pub rebalancing_cost: f64,
    pub steps: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub sd_reward: f64,
    pub mean_served: f64,
    pub sd_served: f64,
    pub mean_rebalancing_cost: f64,
    pub sd_rebalancing_cost: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs deterministic (Dirichlet-mean) episodes over the given seeds.
pub fn evaluate_model<M: PolicyModel + ?Sized>(
    model: &M,
    sim: &mut Simulator,
    seeds: &[u64],
    steps: usize,
) -> Result<EvalSummary> {
    let mut rewards = Vec::new();
    let mut served = Vec::new();
    let mut costs = Vec::new();
    for &seed in seeds {
        let mut obs = sim.reset(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut ep_reward, mut ep_served, mut ep_cost) = (0.0, 0i64, 0.0);
        for _ in 0..steps {
            let alpha = model.alpha_values(&obs)?;
            let (action, _) = select_action(&alpha, &mut rng, ActionMode::Mean)?;
            let out = sim.step(&action)?;
            ep_reward += out.reward;
            ep_served += out.kpis.served_demand;
            ep_cost += out.kpis.rebalancing_cost;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        rewards.push(ep_reward);
        served.push(ep_served as f64);
        costs.push(ep_cost);
    }
    let (mean_reward, sd_reward) = mean_sd(&rewards);
    let (mean_served, sd_served) = mean_sd(&served);
    let (mean_cost, sd_cost) = mean_sd(&costs);
    Ok(EvalSummary {
        episodes: seeds.len(),
        mean_reward,
        sd_reward,
        mean_served,
        sd_served,
        mean_rebalancing_cost: mean_cost,
        sd_rebalancing_cost: sd_cost,
    })
}

/// Deterministic evaluation seeds shared across policies for paired
/// comparisons.
pub fn eval_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| base ^ (0xA5A5_0000 + k)).collect()
}

pub struct TrainOutput {
    pub metrics: Vec<EpisodeMetrics>,
    pub best_eval_reward: f64,
}

/// Train for `config.episodes` episodes (resuming from `start_episode`),
/// invoking `on_episode` after each one. Tracks the best deterministic
/// evaluation reward; `on_best` fires when it improves.
pub fn train<M: PolicyModel + ?Sized>(
    model: &mut M,
    sim: &mut Simulator,
    config: &TrainerConfig,
    start_episode: usize,
    mut on_episode: impl FnMut(&EpisodeMetrics, &LossReport),
    mut on_best: impl FnMut(&M, f64),
) -> Result<TrainOutput> {
    let steps = config
        .episode_length
        .unwrap_or(sim.scenario().episode_length);
    let mut seed_stream = ChaCha8Rng::seed_from_u64(config.seed);
    // burn seeds consumed by episodes before the resume point
    for _ in 0..start_episode {
        let _: u64 = seed_stream.gen();
    }
    let mut metrics = Vec::new();
    let mut best_eval = f64::NEG_INFINITY;
    let batch = config.batch_episodes.max(1);
    let mut pending: Option<Vec<Mat>> = None;
    let mut pending_count = 0usize;
    for episode in start_episode..config.episodes {
        let t0 = std::time::Instant::now();
        let ep_seed: u64 = seed_stream.gen();
        let traj = rollout(model, sim, ep_seed, steps)?;
        let (grads, report) = a2c_gradients(model, &traj, config).map_err(|e| {
            AmodError::Numeric {
                op: "a2c_update",
                detail: format!("episode {episode}: {e}"),
            }
        })?;
        match &mut pending {
            None => pending = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
        pending_count += 1;
        if pending_count == batch || episode + 1 == config.episodes {
            let mut acc = pending.take().unwrap();
            if pending_count > 1 {
                let inv = 1.0 / pending_count as f64;
                for a in &mut acc {
                    *a = a.map(|x| x * inv);
                }
            }
            let lr = match config.lr_final {
                Some(end) => {
                    let progress = episode as f64 / (config.episodes.max(1) as f64);
                    config.lr + (end - config.lr) * progress
                }
                None => config.lr,
            };
            apply_gradients(model, &acc, lr)?;
            pending_count = 0;
        }
        let row = EpisodeMetrics {
            episode,
            reward: traj.rewards.iter().sum(),
            served_demand: sim.state().totals.served_demand,
            rebalancing_cost: sim.state().totals.rebalancing_cost,
            steps: traj.len(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        on_episode(&row, &report);
        metrics.push(row);

        if (episode + 1) % config.eval_every == 0 || episode + 1 == config.episodes {
            let summary = evaluate_model(
                model,
                sim,
                &eval_seeds(config.seed, config.eval_episodes),
                steps,
            )?;
            if summary.mean_reward > best_eval {
                best_eval = summary.mean_reward;
                on_best(model, best_eval);
            }
        }
    }
    Ok(TrainOutput {
        metrics,
        best_eval_reward: best_eval,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian):
//   magic "AMRB" | version u16 | param count u32 |
//   manifest: per param { name_len u16, name bytes, rows u32, cols u32 } |
//   values: per param rows*cols f64 |
//   adam state: per param { m: rows*cols f64, v: rows*cols f64, step u64 }
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMRB";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_checkpoint(params: &[Parameter], path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
    }
    for p in params {
        for &x in p.value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for p in params {
        for &x in p.m.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &x in p.v.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&p.step.to_le_bytes());
    }
    // atomic write: temp file then rename
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Parameter>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(AmodError::Checkpoint("truncated file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(AmodError::Checkpoint("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(AmodError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| AmodError::Checkpoint("non-utf8 parameter name".into()))?;
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        manifest.push((name, rows, cols));
    }
    let read_mat = |pos: &mut usize, rows: usize, cols: usize| -> Result<Mat> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()));
        }
        Ok(Mat::from_vec(rows, cols, data))
    };
    let mut params: Vec<Parameter> = Vec::with_capacity(count);
    for (name, rows, cols) in &manifest {
        let value = read_mat(&mut pos, *rows, *cols)?;
        params.push(Parameter::new(name.clone(), value));
    }
    for p in &mut params {
        let (rows, cols) = p.value.shape();
        p.m = read_mat(&mut pos, rows, cols)?;
        p.v = read_mat(&mut pos, rows, cols)?;
        p.step = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    }
    if pos != bytes.len() {
        return Err(AmodError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::tests::small_scenario;

    #[test]
    fn returns_hand_recursion() {
        assert_eq!(compute_returns(&[5.0], 0.9), vec![5.0]);
        let g = compute_returns(&[1.0, 1.0, 1.0], 0.5);
        assert_eq!(g, vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn default_config_matches_published_setup() {
        let c = TrainerConfig::default();
        assert_eq!(c.gamma, 0.97);
        assert_eq!(c.lr, 0.003);
        assert_eq!(c.episodes, 16_000);
    }

    #[test]
    fn select_action_mean_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, lp) = select_action(&[1.0; 4], &mut rng, ActionMode::Mean).unwrap();
        assert_eq!(a.distribution, vec![0.25; 4]);
        assert!(lp.is_none());
        let (a, _) = select_action(&[3.0, 1.0], &mut rng, ActionMode::Mean).unwrap();
        assert_eq!(a.distribution, vec![0.75, 0.25]);
    }

    #[test]
    fn sampled_action_on_simplex_with_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, lp) = select_action(&[0.7, 2.0, 5.0], &mut rng, ActionMode::Sample).unwrap();
        assert!((a.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(lp.unwrap().is_finite());
    }

    #[test]
    fn zero_weight_actor_gives_uniform_alpha() {
        let sim = Simulator::new(small_scenario(), 0).unwrap();
        let obs = sim.observe();
        let mut model = GnnModel::new(obs.feature_width(), 0);
        for p in model.params_mut() {
            for x in p.value.data_mut() {
                *x = 0.0;
            }
        }
        let alpha = model.alpha_values(&obs).unwrap();
        let want = crate::nn::tape::softplus_scalar(0.0) + ALPHA_FLOOR;
        for a in alpha {
            assert!((a - want).abs() < 1e-12);
        }
        // zero-weight critic returns the head bias (zero here)
        assert_eq!(model.value_estimate(&obs).unwrap(), 0.0);
    }

    #[test]
    fn alpha_positive_on_random_observations() {
        let mut sim = Simulator::new(small_scenario(), 4).unwrap();
        let model = GnnModel::new(sim.observe().feature_width(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let obs = sim.observe();
            let alpha = model.alpha_values(&obs).unwrap();
            assert!(alpha.iter().all(|&a| a > 0.0));
            let (action, _) = select_action(&alpha, &mut rng, ActionMode::Sample).unwrap();
            sim.step(&action).unwrap();
            if sim.is_done() {
                sim.reset(rng.gen()).unwrap();
            }
        }
    }

    #[test]
    fn same_weights_run_on_larger_networks() {
        // transfer precondition: a model built for one graph size evaluates
        // on another without reshaping
        let sim4 = Simulator::new(small_scenario(), 0).unwrap();
        let model = GnnModel::new(sim4.observe().feature_width(), 3);

        let mut s = small_scenario();
        s.network = crate::network::build_grid_network(4, 4, 1.0, 3.0).unwrap();
        s.rate_table = crate::demand::RateTable::flat(
            Mat::from_fn(16, 16, |i, j| if i != j { 0.1 } else { 0.0 }),
            1_000_000,
        );
        s.fleet_size = 16;
        s.initial_idle = vec![1; 16];
        let sim16 = Simulator::new(s, 0).unwrap();
        let alpha = model.alpha_values(&sim16.observe()).unwrap();
        assert_eq!(alpha.len(), 16);
        assert!(alpha.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn zero_advantage_means_zero_actor_gradient() {
        // if every advantage is exactly zero the actor terms vanish
        let mut sim = Simulator::new(small_scenario(), 5).unwrap();
        let model = GnnModel::new(sim.observe().feature_width(), 7);
        let traj = rollout(&model, &mut sim, 1, 3).unwrap();
        let returns = compute_returns(&traj.rewards, 0.97);

        let mut tape = Tape::new();
        let ids = model.register(&mut tape);
        let mut terms = Vec::new();
        for (t, obs) in traj.observations.iter().enumerate() {
            let alpha = model.actor_alpha(&mut tape, &ids, obs).unwrap();
            let logp = tape.dirichlet_log_prob(alpha, &traj.actions[t]).unwrap();
            // advantage forced to zero
            let _ = returns;
            let term = tape.scale(logp, -0.0).unwrap();
            terms.push(term);
        }
        let loss = sum_terms(&mut tape, &terms).unwrap();
        tape.backward(loss).unwrap();
        for &id in &ids[..ids.len() / 2] {
            assert!(tape.grad(id).data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn critic_regression_reduces_error_on_frozen_batch() {
        let sim = Simulator::new(small_scenario(), 6).unwrap();
        let obs = sim.observe();
        let mut model = GnnModel::new(obs.feature_width(), 9);
        let target = 3.0;
        let mut errors = Vec::new();
        let config = TrainerConfig {
            lr: 0.01,
            ..TrainerConfig::default()
        };
        for _ in 0..50 {
            let v = model.value_estimate(&obs).unwrap();
            errors.push((target - v).powi(2));
            let mut tape = Tape::new();
            let ids = model.register(&mut tape);
            let vt = model.critic_value(&mut tape, &ids, &obs).unwrap();
            let neg = tape.scale(vt, -1.0).unwrap();
            let diff = tape.add_const(neg, target).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            tape.backward(sq).unwrap();
            for (param, &id) in model.params_mut().iter_mut().zip(&ids) {
                adam_step(param, tape.grad(id), config.lr, 0.9, 0.999, 1e-8);
            }
        }
        assert!(
            errors.last().unwrap() < &errors[0],
            "squared error did not fall: {errors:?}"
        );
    }

    #[test]
    fn score_function_direction() {
        // one positive-advantage update on a fixed (s, a) pair must raise
        // log pi(a | s)
        let sim = Simulator::new(small_scenario(), 8).unwrap();
        let obs = sim.observe();
        let mut model = GnnModel::new(obs.feature_width(), 13);
        let action = vec![0.4, 0.3, 0.2, 0.1];
        let lp_before = crate::nn::dirichlet::dirichlet_log_prob_value(
            &model.alpha_values(&obs).unwrap(),
            &action,
        )
        .unwrap();
        let traj = Trajectory {
            observations: vec![obs.clone()],
            actions: vec![action.clone()],
            log_probs: vec![lp_before],
            values: vec![model.value_estimate(&obs).unwrap()],
            rewards: vec![model.value_estimate(&obs).unwrap() + 50.0],
        };
        let config = TrainerConfig {
            lr: 0.003,
            value_coef: 0.0,
            ..TrainerConfig::default()
        };
        a2c_update(&mut model, &traj, &config).unwrap();
        let lp_after = crate::nn::dirichlet::dirichlet_log_prob_value(
            &model.alpha_values(&obs).unwrap(),
            &action,
        )
        .unwrap();
        assert!(
            lp_after > lp_before,
            "log-prob did not increase: {lp_before} -> {lp_after}"
        );
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("amod-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.amrb");
        let sim = Simulator::new(small_scenario(), 0).unwrap();
        let obs = sim.observe();
        let mut model = GnnModel::new(obs.feature_width(), 17);
        // touch the adam state so it is nontrivial
        let traj = Trajectory {
            observations: vec![obs.clone()],
            actions: vec![vec![0.25; 4]],
            log_probs: vec![0.0],
            values: vec![0.0],
            rewards: vec![1.0],
        };
        a2c_update(&mut model, &traj, &TrainerConfig::default()).unwrap();

        let alpha_before = model.alpha_values(&obs).unwrap();
        save_checkpoint(model.params(), &path).unwrap();
        let loaded = GnnModel::from_params(load_checkpoint(&path).unwrap()).unwrap();
        let alpha_after = loaded.alpha_values(&obs).unwrap();
        assert_eq!(alpha_before, alpha_after);
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.m, b.m);
            assert_eq!(a.v, b.v);
            assert_eq!(a.step, b.step);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("amod-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.amrb");
        let model = GnnModel::new(9, 0);
        save_checkpoint(model.params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(AmodError::Checkpoint(_))
        ));
        // truncation is also an explicit error
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn smoke_training_runs_and_counts_episodes() {
        let mut s = small_scenario();
        s.episode_length = 5;
        let mut sim = Simulator::new(s, 0).unwrap();
        let mut model = GnnModel::new(sim.observe().feature_width(), 1);
        let config = TrainerConfig {
            episodes: 10,
            eval_every: 5,
            eval_episodes: 2,
            seed: 3,
            ..TrainerConfig::default()
        };
        let out = train(&mut model, &mut sim, &config, 0, |_, _| {}, |_, _| {}).unwrap();
        assert_eq!(out.metrics.len(), 10);
    }

    #[test]
    fn batched_update_averages_episode_gradients() {
        // one batched step over two episodes must equal a single Adam step
        // on the mean of the per-episode gradients
        let mut s = small_scenario();
        s.episode_length = 4;
        let config = TrainerConfig {
            episodes: 2,
            batch_episodes: 2,
            eval_every: 100,
            seed: 11,
            ..TrainerConfig::default()
        };
        let mut sim = Simulator::new(s.clone(), 0).unwrap();
        let width = sim.observe().feature_width();
        let mut batched = GnnModel::new(width, 9);
        train(&mut batched, &mut sim, &config, 0, |_, _| {}, |_, _| {}).unwrap();

        let mut manual = GnnModel::new(width, 9);
        let mut seed_stream = ChaCha8Rng::seed_from_u64(config.seed);
        let mut acc: Option<Vec<Mat>> = None;
        for _ in 0..2 {
            let ep_seed: u64 = seed_stream.gen();
            let traj = rollout(&manual, &mut sim, ep_seed, 4).unwrap();
            let (grads, _) = a2c_gradients(&manual, &traj, &config).unwrap();
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => {
                    for (x, g) in a.iter_mut().zip(&grads) {
                        for (xi, gi) in x.data_mut().iter_mut().zip(g.data()) {
                            *xi += gi;
                        }
                    }
                }
            }
        }
        let mean: Vec<Mat> = acc.unwrap().iter().map(|g| g.map(|x| x * 0.5)).collect();
        apply_gradients(&mut manual, &mean, config.lr).unwrap();

        for (a, b) in batched.params().iter().zip(manual.params()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }

    #[test]
    fn training_metrics_deterministic() {
        let run = || {
            let mut s = small_scenario();
            s.episode_length = 4;
            let mut sim = Simulator::new(s, 0).unwrap();
            let mut model = GnnModel::new(sim.observe().feature_width(), 2);
            let config = TrainerConfig {
                episodes: 6,
                eval_every: 100,
                seed: 19,
                ..TrainerConfig::default()
            };
            let out = train(&mut model, &mut sim, &config, 0, |_, _| {}, |_, _| {}).unwrap();
            out.metrics
                .iter()
                .map(|m| (m.reward, m.served_demand, m.rebalancing_cost))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
