//! MADDPG, MATD3 and MASAC trainers: decentralized actors, centralized critics.
//!
//! Each learner owns an actor that sees only its own observation and one or
//! two critics that see every agent's observation and action, concatenated
//! as `[obs_1 .. obs_N, act_1 .. act_N]`. An update round walks the agents in
//! order; for each one it samples a joint mini-batch, computes bootstrap
//! targets from all agents' target actors and its own target critic(s),
//! takes one critic step and (unless delayed) one actor step. Target networks
//! are Polyak-averaged once at the end of the round.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{JointAction, ParticleEnv, SpaceDims, ACTION_DIM};
use crate::nn::{AdamState, Gradients, Mlp, OutputActivation, DEFAULT_HIDDEN};
use crate::profiler::{CounterSnapshot, PhaseId, PhaseReport};
use crate::replay::{sample_indices, BufferSet, JointMinibatch, TransitionRecord, DEFAULT_CAPACITY};
use crate::{seeded_rng, Error, Result, Rng as SeededRng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps `log(1 − tanh²)` finite for saturated actions.
const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Maddpg,
    Matd3,
    Masac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Maddpg, Algorithm::Matd3, Algorithm::Masac];

    pub fn n_critics(self) -> usize {
        match self {
            Algorithm::Maddpg => 1,
            Algorithm::Matd3 | Algorithm::Masac => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Maddpg => "maddpg",
            Algorithm::Matd3 => "matd3",
            Algorithm::Masac => "masac",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    /// Environment steps between update rounds.
    pub update_every: usize,
    pub buffer_capacity: usize,
    pub hidden_units: Vec<usize>,
    pub entropy_alpha: f64,
    pub policy_delay: usize,
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    pub explore_noise_sigma: f64,
    /// Global L2 cap on each network's gradient; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Threads used for mini-batch gathering; 1 gathers serially.
    pub gather_workers: usize,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            gamma: 0.95,
            lr: 0.01,
            batch_size: 1024,
            tau: 0.01,
            update_every: 100,
            buffer_capacity: DEFAULT_CAPACITY,
            hidden_units: DEFAULT_HIDDEN.to_vec(),
            entropy_alpha: 0.05,
            policy_delay: 2,
            target_noise_sigma: 0.2,
            target_noise_clip: 0.5,
            explore_noise_sigma: 0.1,
            grad_clip: Some(0.5),
            gather_workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma", format!("must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("must be positive, got {}", self.lr));
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("update_every", self.update_every),
            ("buffer_capacity", self.buffer_capacity),
            ("policy_delay", self.policy_delay),
            ("gather_workers", self.gather_workers),
        ];
        for (field, value) in positive {
            if value == 0 {
                return fail(field, "must be at least 1".into());
            }
        }
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return fail("hidden_units", format!("needs positive widths, got {:?}", self.hidden_units));
        }
        let non_negative = [
            ("entropy_alpha", self.entropy_alpha),
            ("target_noise_sigma", self.target_noise_sigma),
            ("target_noise_clip", self.target_noise_clip),
            ("explore_noise_sigma", self.explore_noise_sigma),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return fail(field, format!("must be non-negative, got {value}"));
            }
        }
        if let Some(clip) = self.grad_clip {
            if clip.is_nan() || clip <= 0.0 {
                return fail("grad_clip", format!("must be positive, got {clip}"));
            }
        }
        Ok(())
    }
}

/// One critic with its target copy and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSlot {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub agent_index: usize,
    pub algorithm: Algorithm,
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub actor_opt: AdamState,
    pub critics: Vec<CriticSlot>,
}

impl Trainer {
    pub fn new<R: Rng + ?Sized>(agent_index: usize, dims: SpaceDims, cfg: &AlgoConfig, rng: &mut R) -> Result<Self> {
        let (actor_out, head) = match cfg.algorithm {
            Algorithm::Masac => (2 * dims.action_dim, OutputActivation::Identity),
            _ => (dims.action_dim, OutputActivation::Tanh),
        };
        let actor = Mlp::with_hidden(dims.obs_dim, &cfg.hidden_units, actor_out, head, rng)?;
        let critics = (0..cfg.algorithm.n_critics())
            .map(|_| {
                let net =
                    Mlp::with_hidden(dims.critic_input_dim, &cfg.hidden_units, 1, OutputActivation::Identity, rng)?;
                Ok(CriticSlot { target: net.clone(), opt: AdamState::new(&net), net })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            agent_index,
            algorithm: cfg.algorithm,
            target_actor: actor.clone(),
            actor_opt: AdamState::new(&actor),
            actor,
            critics,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn critic_input_dim(&self) -> usize {
        self.critics[0].net.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critics.iter().map(|c| c.net.param_count()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.target_actor.is_finite()
            && self.critics.iter().all(|c| c.net.is_finite() && c.target.is_finite())
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        self.target_actor.soft_update(&self.actor, tau)?;
        for c in &mut self.critics {
            c.target.soft_update(&c.net, tau)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateCounters {
    pub cross_agent_policy_reads: u64,
    pub buffer_lookups: u64,
    pub critic_backprops: u64,
    pub actor_backprops: u64,
    pub update_rounds: u64,
    pub env_steps: u64,
}

/// Output of a squashed-Gaussian policy sample.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub noise: Array2<f64>,
    pub log_std: Array2<f64>,
    /// 1.0 where the raw log-std lay inside the clamp range.
    pub log_std_live: Array2<f64>,
}

/// `a = tanh(μ + σ·ε)` from raw `[μ | log σ]` actor outputs and given noise.
pub fn squashed_gaussian(raw: &Array2<f64>, noise: Array2<f64>) -> SquashedSample {
    let dim = raw.ncols() / 2;
    let mean = raw.slice(s![.., ..dim]);
    let raw_log_std = raw.slice(s![.., dim..]);
    let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let log_std_live = raw_log_std.mapv(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
    let mut actions = Array2::zeros(noise.dim());
    Zip::from(&mut actions)
        .and(&mean)
        .and(&log_std)
        .and(&noise)
        .for_each(|a, &m, &ls, &e| *a = (m + ls.exp() * e).tanh());
    let mut log_prob = Array1::zeros(noise.nrows());
    for (b, lp) in log_prob.iter_mut().enumerate() {
        *lp = (0..dim)
            .map(|d| {
                let (e, ls, a) = (noise[[b, d]], log_std[[b, d]], actions[[b, d]]);
                -0.5 * e * e - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln()
            })
            .sum();
    }
    SquashedSample { actions, log_prob, noise, log_std, log_std_live }
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// One action per learner from its own observation.
pub fn select_actions<R: Rng + ?Sized>(
    trainers: &[Trainer],
    observations: &[Vec<f64>],
    explore: bool,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<JointAction> {
    if observations.len() != trainers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} observations for {} trainers",
            observations.len(),
            trainers.len()
        )));
    }
    let mut actions = Vec::with_capacity(trainers.len());
    for (trainer, obs) in trainers.iter().zip(observations) {
        let input = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let out = trainer.actor.predict(input)?;
        let action = match trainer.algorithm {
            Algorithm::Masac => {
                if explore {
                    squashed_gaussian(&out, standard_normal(1, ACTION_DIM, rng)).actions
                } else {
                    out.slice(s![.., ..ACTION_DIM]).mapv(f64::tanh)
                }
            }
            _ => {
                let mut a = out;
                if explore && cfg.explore_noise_sigma > 0.0 {
                    let noise = Normal::new(0.0, cfg.explore_noise_sigma).expect("valid sigma");
                    a.mapv_inplace(|v| (v + noise.sample(rng)).clamp(-1.0, 1.0));
                }
                a
            }
        };
        actions.push([action[[0, 0]], action[[0, 1]]]);
    }
    Ok(JointAction(actions))
}

/// Target-policy actions for every agent on the sampled next observations.
#[derive(Debug, Clone)]
pub struct NextActions {
    pub actions: Vec<Array2<f64>>,
    /// Log-probability of each agent's sampled next action (MASAC only).
    pub log_probs: Option<Vec<Array1<f64>>>,
}

/// Evaluates all target actors for agent `updating`'s bootstrap. Charges
/// `N − 1` cross-agent policy reads.
pub fn compute_next_actions<R: Rng + ?Sized>(
    trainers: &[Trainer],
    updating: usize,
    batch: &JointMinibatch,
    cfg: &AlgoConfig,
    rng: &mut R,
    counters: &mut UpdateCounters,
) -> Result<NextActions> {
    if batch.agents.len() != trainers.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch covers {} agents, {} trainers",
            batch.agents.len(),
            trainers.len()
        )));
    }
    if updating >= trainers.len() {
        return Err(Error::IndexOutOfRange { index: updating, len: trainers.len() });
    }
    let k = batch.batch_size();
    let mut actions = Vec::with_capacity(trainers.len());
    let mut log_probs = Vec::new();
    for (trainer, agent) in trainers.iter().zip(&batch.agents) {
        let raw = trainer.target_actor.predict(agent.next_obs.view())?;
        match cfg.algorithm {
            Algorithm::Maddpg => actions.push(raw),
            Algorithm::Matd3 => {
                let mut a = raw;
                if cfg.target_noise_sigma > 0.0 {
                    let noise = Normal::new(0.0, cfg.target_noise_sigma).expect("valid sigma");
                    let c = cfg.target_noise_clip;
                    a.mapv_inplace(|v| (v + noise.sample(rng).clamp(-c, c)).clamp(-1.0, 1.0));
                }
                actions.push(a);
            }
            Algorithm::Masac => {
                let sample = squashed_gaussian(&raw, standard_normal(k, ACTION_DIM, rng));
                actions.push(sample.actions);
                log_probs.push(sample.log_prob);
            }
        }
    }
    counters.cross_agent_policy_reads += (trainers.len() - 1) as u64;
    Ok(NextActions { actions, log_probs: (cfg.algorithm == Algorithm::Masac).then_some(log_probs) })
}

/// `[obs_1 .. obs_N, act_1 .. act_N]` row-wise.
pub fn critic_input(obs: &[ArrayView2<f64>], actions: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let parts: Vec<ArrayView2<f64>> = obs.iter().chain(actions).cloned().collect();
    concatenate(Axis(1), &parts).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct TargetQ {
    pub y: Array1<f64>,
    /// Each target critic's value before the twin minimum.
    pub per_critic: Vec<Array1<f64>>,
    /// Value multiplied by `γ(1 − done)`.
    pub bootstrap: Array1<f64>,
}

/// `y = r + γ(1 − done)·V'` where `V'` is the target critic (MADDPG), the
/// twin minimum (MATD3) or the twin minimum minus `α·log π` (MASAC).
pub fn compute_target_q(
    trainer: &Trainer,
    rewards: &Array1<f64>,
    dones: &Array1<f64>,
    next_obs: &[ArrayView2<f64>],
    next: &NextActions,
    cfg: &AlgoConfig,
) -> Result<TargetQ> {
    let k = rewards.len();
    if dones.len() != k || next_obs.iter().any(|o| o.nrows() != k) || next.actions.iter().any(|a| a.nrows() != k) {
        return Err(Error::ShapeMismatch("target inputs disagree on batch size".into()));
    }
    let action_views: Vec<ArrayView2<f64>> = next.actions.iter().map(|a| a.view()).collect();
    let input = critic_input(next_obs, &action_views)?;
    let per_critic = trainer
        .critics
        .iter()
        .map(|c| Ok(c.target.predict(input.view())?.column(0).to_owned()))
        .collect::<Result<Vec<_>>>()?;
    let mut bootstrap = per_critic[0].clone();
    for q in &per_critic[1..] {
        Zip::from(&mut bootstrap).and(q).for_each(|b, &v| *b = b.min(v));
    }
    if cfg.algorithm == Algorithm::Masac {
        let log_probs = next
            .log_probs
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("MASAC target needs next-action log-probabilities".into()))?;
        let alpha = cfg.entropy_alpha;
        Zip::from(&mut bootstrap).and(&log_probs[trainer.agent_index]).for_each(|b, &lp| *b -= alpha * lp);
    }
    let mut y = Array1::zeros(k);
    Zip::from(&mut y)
        .and(rewards)
        .and(dones)
        .and(&bootstrap)
        .for_each(|y, &r, &d, &v| *y = r + cfg.gamma * (1.0 - d) * v);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("target Q".into()));
    }
    Ok(TargetQ { y, per_critic, bootstrap })
}

fn batch_views(batch: &JointMinibatch) -> (Vec<ArrayView2<'_, f64>>, Vec<ArrayView2<'_, f64>>) {
    (batch.agents.iter().map(|a| a.obs.view()).collect(), batch.agents.iter().map(|a| a.actions.view()).collect())
}

fn step_network(net: &mut Mlp, grads: &mut Gradients, opt: &mut AdamState, cfg: &AlgoConfig) -> Result<()> {
    if let Some(clip) = cfg.grad_clip {
        grads.clip_norm(clip);
    }
    net.adam_step(grads, opt, cfg.lr)
}

/// One Adam step on every critic of `trainer` toward `y`; returns the mean
/// pre-step MSE across critics.
pub fn update_critic(
    trainer: &mut Trainer,
    batch: &JointMinibatch,
    y: &Array1<f64>,
    cfg: &AlgoConfig,
    counters: &mut UpdateCounters,
) -> Result<f64> {
    let (obs, actions) = batch_views(batch);
    let input = critic_input(&obs, &actions)?;
    if input.ncols() != trainer.critic_input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "critic input width {} vs {}",
            input.ncols(),
            trainer.critic_input_dim()
        )));
    }
    let k = y.len() as f64;
    let mut total = 0.0;
    for critic in &mut trainer.critics {
        let (q, cache) = critic.net.forward(input.view())?;
        let diff = &q.column(0) - y;
        total += diff.mapv(|d| d * d).sum() / k;
        let grad_out = diff.mapv(|d| 2.0 * d / k).insert_axis(Axis(1));
        let mut grads = critic.net.param_gradients(&cache, grad_out.view())?;
        step_network(&mut critic.net, &mut grads, &mut critic.opt, cfg)?;
        counters.critic_backprops += 1;
    }
    Ok(total / trainer.critics.len() as f64)
}

/// One Adam step on the actor through the (frozen) critic; returns the
/// pre-step policy loss.
pub fn update_actor<R: Rng + ?Sized>(
    trainer: &mut Trainer,
    batch: &JointMinibatch,
    cfg: &AlgoConfig,
    rng: &mut R,
    counters: &mut UpdateCounters,
) -> Result<f64> {
    let noise = match trainer.algorithm {
        Algorithm::Masac => Some(standard_normal(batch.batch_size(), ACTION_DIM, rng)),
        _ => None,
    };
    let (loss, mut grads) = policy_gradient(trainer, batch, cfg, noise)?;
    step_network(&mut trainer.actor, &mut grads, &mut trainer.actor_opt, cfg)?;
    counters.actor_backprops += 1;
    Ok(loss)
}

/// Policy loss and its gradient with respect to the actor parameters.
///
/// Deterministic actors minimise `−mean Q(S, a_1 .. π_i(o_i) .. a_N)` using the
/// first critic; MASAC minimises `mean(α·log π − min_c Q_c)` with the
/// reparameterised sample `tanh(μ + σ·noise)`. Other agents' actions come
/// from the batch.
pub fn policy_gradient(
    trainer: &Trainer,
    batch: &JointMinibatch,
    cfg: &AlgoConfig,
    noise: Option<Array2<f64>>,
) -> Result<(f64, Gradients)> {
    let i = trainer.agent_index;
    let own = batch.agents.get(i).ok_or(Error::IndexOutOfRange { index: i, len: batch.agents.len() })?;
    let k = own.len();
    let kf = k as f64;
    let (raw, actor_cache) = trainer.actor.forward(own.obs.view())?;
    let sample = match (trainer.algorithm, noise) {
        (Algorithm::Masac, Some(noise)) => {
            if noise.dim() != (k, ACTION_DIM) {
                return Err(Error::ShapeMismatch(format!("policy noise {:?}", noise.dim())));
            }
            Some(squashed_gaussian(&raw, noise))
        }
        (Algorithm::Masac, None) => return Err(Error::ShapeMismatch("MASAC policy loss needs sampling noise".into())),
        _ => None,
    };
    let policy_actions = sample.as_ref().map_or(&raw, |s| &s.actions);

    let (obs, mut actions) = batch_views(batch);
    actions[i] = policy_actions.view();
    let input = critic_input(&obs, &actions)?;
    let obs_width: usize = obs.iter().map(|o| o.ncols()).sum();
    let cols = obs_width + i * ACTION_DIM..obs_width + (i + 1) * ACTION_DIM;

    // Critics used: the first for deterministic policies, the twin minimum for MASAC.
    let used = if trainer.algorithm == Algorithm::Masac { trainer.critics.len() } else { 1 };
    let mut q_values = Vec::with_capacity(used);
    for critic in &trainer.critics[..used] {
        q_values.push(critic.net.forward(input.view())?);
    }
    let mut min_q = q_values[0].0.column(0).to_owned();
    let mut argmin = vec![0usize; k];
    for (c, (q, _)) in q_values.iter().enumerate().skip(1) {
        for (b, &v) in q.column(0).iter().enumerate() {
            if v < min_q[b] {
                min_q[b] = v;
                argmin[b] = c;
            }
        }
    }

    let mut grad_actions = Array2::<f64>::zeros((k, ACTION_DIM));
    for (c, (_, cache)) in q_values.iter().enumerate() {
        let grad_out = Array2::from_shape_fn((k, 1), |(b, _)| if argmin[b] == c { -1.0 / kf } else { 0.0 });
        let input_grad = trainer.critics[c].net.input_gradient(cache, grad_out.view())?;
        grad_actions += &input_grad.slice(s![.., cols.clone()]);
    }

    let (loss, raw_grad) = match &sample {
        None => (-min_q.sum() / kf, grad_actions),
        Some(sample) => {
            let alpha = cfg.entropy_alpha;
            let loss = (alpha * &sample.log_prob - &min_q).sum() / kf;
            let mut raw_grad = Array2::zeros(raw.dim());
            for b in 0..k {
                for d in 0..ACTION_DIM {
                    let a = sample.actions[[b, d]];
                    let one_minus = 1.0 - a * a;
                    let du =
                        grad_actions[[b, d]] * one_minus + alpha / kf * 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
                    let sigma_eps = sample.log_std[[b, d]].exp() * sample.noise[[b, d]];
                    raw_grad[[b, d]] = du;
                    raw_grad[[b, ACTION_DIM + d]] = (du * sigma_eps - alpha / kf) * sample.log_std_live[[b, d]];
                }
            }
            (loss, raw_grad)
        }
    };
    let grads = trainer.actor.param_gradients(&actor_cache, raw_grad.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub q_losses: Vec<f64>,
    /// `None` where the actor step was delayed.
    pub p_losses: Vec<Option<f64>>,
    pub targets_updated: bool,
}

/// Whether the actor and target networks move on this (1-based) round.
pub fn policy_round_due(cfg: &AlgoConfig, round: u64) -> bool {
    cfg.algorithm != Algorithm::Matd3 || round.is_multiple_of(cfg.policy_delay as u64)
}

/// A full update round over every agent, each sub-phase charged to `report`.
pub fn update_all_trainers<R: Rng + ?Sized>(
    trainers: &mut [Trainer],
    buffers: &BufferSet,
    report: &mut PhaseReport,
    counters: &mut UpdateCounters,
    cfg: &AlgoConfig,
    rng: &mut R,
) -> Result<RoundSummary> {
    let len = buffers.len();
    if len < cfg.batch_size {
        return Err(Error::BufferUnderfilled { len, needed: cfg.batch_size });
    }
    let round = counters.update_rounds + 1;
    let policy_due = policy_round_due(cfg, round);
    let lookups_before = buffers.lookup_count();
    let mut q_losses = Vec::with_capacity(trainers.len());
    let mut p_losses = Vec::with_capacity(trainers.len());

    for i in 0..trainers.len() {
        let batch = report.scoped_time(PhaseId::MiniBatchSampling, || {
            let indices = sample_indices(rng, cfg.batch_size, len)?;
            if cfg.gather_workers > 1 {
                buffers.gather_joint_parallel(&indices, cfg.gather_workers)
            } else {
                buffers.gather_joint(&indices)
            }
        })??;

        let target = report.scoped_time(PhaseId::TargetQCalculation, || {
            let next = compute_next_actions(trainers, i, &batch, cfg, rng, counters)?;
            let next_obs: Vec<ArrayView2<f64>> = batch.agents.iter().map(|a| a.next_obs.view()).collect();
            let own = &batch.agents[i];
            compute_target_q(&trainers[i], &own.rewards, &own.dones, &next_obs, &next, cfg)
        })??;

        let q_loss = report
            .scoped_time(PhaseId::QLoss, || update_critic(&mut trainers[i], &batch, &target.y, cfg, counters))??;
        q_losses.push(q_loss);

        let p_loss = if policy_due {
            Some(report.scoped_time(PhaseId::PLoss, || update_actor(&mut trainers[i], &batch, cfg, rng, counters))??)
        } else {
            None
        };
        p_losses.push(p_loss);
    }

    if policy_due {
        report.scoped_time(PhaseId::TargetUpdate, || {
            trainers.iter_mut().try_for_each(|t| t.soft_update_targets(cfg.tau))
        })??;
    }
    counters.buffer_lookups += buffers.lookup_count() - lookups_before;
    counters.update_rounds = round;
    Ok(RoundSummary { round, q_losses, p_losses, targets_updated: policy_due })
}

/// Per-episode rewards summed over steps, one entry per agent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub episode_rewards: Vec<Vec<f64>>,
    pub update_rounds: u64,
}

impl TrainingLog {
    /// Episode totals summed over all agents.
    pub fn team_rewards(&self) -> Vec<f64> {
        self.episode_rewards.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Environment, trainers, buffers and generator for one training run.
#[derive(Debug)]
pub struct Learner {
    pub env: ParticleEnv,
    pub trainers: Vec<Trainer>,
    pub buffers: BufferSet,
    pub counters: UpdateCounters,
    pub cfg: AlgoConfig,
    pub rng: SeededRng,
}

impl Learner {
    pub fn new(env: ParticleEnv, cfg: AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let dims = env.space_dims();
        let n = env.config().n_learners;
        let trainers = (0..n).map(|i| Trainer::new(i, dims, &cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
        let buffers = BufferSet::new(n, cfg.buffer_capacity, &vec![dims.obs_dim; n], dims.action_dim)?;
        Ok(Self { env, trainers, buffers, counters: UpdateCounters::default(), cfg, rng })
    }

    pub fn n_agents(&self) -> usize {
        self.trainers.len()
    }

    pub fn counter_snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            buffer_lookups: self.counters.buffer_lookups,
            cross_agent_policy_reads: self.counters.cross_agent_policy_reads,
            critic_backprops: self.counters.critic_backprops,
            actor_backprops: self.counters.actor_backprops,
            update_rounds: self.counters.update_rounds,
            env_steps: self.counters.env_steps,
            critic_input_dim: self.env.space_dims().critic_input_dim as u64,
            trainable_params: self.trainers.iter().map(|t| t.param_count() as u64).sum(),
        }
    }

    pub fn update_round(&mut self, report: &mut PhaseReport) -> Result<RoundSummary> {
        update_all_trainers(&mut self.trainers, &self.buffers, report, &mut self.counters, &self.cfg, &mut self.rng)
    }

    /// Runs `n_episodes` episodes with exploration, storing every joint
    /// transition and running an update round after every `update_every`
    /// steps once the buffers hold a full batch.
    pub fn run_episodes(&mut self, n_episodes: usize, report: &mut PhaseReport) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        let n = self.n_agents();
        for _ in 0..n_episodes {
            let (mut state, mut obs) = report.scoped_time(PhaseId::Other, || self.env.reset(&mut self.rng))?;
            let mut totals = vec![0.0; n];
            loop {
                let actions = report.scoped_time(PhaseId::ActionSelection, || {
                    select_actions(&self.trainers, &obs, true, &self.cfg, &mut self.rng)
                })??;
                let outcome = report.scoped_time(PhaseId::ExperienceCollection, || {
                    let outcome = self.env.step(&state, &actions, &mut self.rng)?;
                    let records: Vec<TransitionRecord> = (0..n)
                        .map(|i| TransitionRecord {
                            obs: std::mem::take(&mut obs[i]),
                            action: actions.clipped().0[i].to_vec(),
                            reward: outcome.rewards[i],
                            next_obs: outcome.observations[i].clone(),
                            done: outcome.done,
                        })
                        .collect();
                    self.buffers.store_joint(&records)?;
                    Ok::<_, Error>(outcome)
                })??;
                self.counters.env_steps += 1;
                for (t, r) in totals.iter_mut().zip(&outcome.rewards) {
                    *t += r;
                }
                if self.counters.env_steps.is_multiple_of(self.cfg.update_every as u64)
                    && self.buffers.len() >= self.cfg.batch_size
                {
                    self.update_round(report)?;
                    log.update_rounds += 1;
                }
                state = outcome.state;
                obs = outcome.observations;
                if outcome.done {
                    break;
                }
            }
            log.episode_rewards.push(totals);
        }
        report.counters = self.counter_snapshot();
        Ok(log)
    }
}
