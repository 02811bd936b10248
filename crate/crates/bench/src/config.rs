//! JSON run and sweep configuration. Every key is optional; omitted keys take
//! the defaults below and unknown keys are rejected.

use std::path::Path;

use marl_core::algos::{AlgoConfig, Algorithm};
use marl_core::env::{EnvConfig, Scenario};
use marl_core::profiler::RunMeta;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// Desk-scale episode count; full-scale runs use 60 000.
pub const DEFAULT_EPISODES: usize = 2000;
pub const DEFAULT_AGENT_COUNTS: [usize; 3] = [3, 6, 12];
pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub n_agents: usize,
    pub episodes: usize,
    pub seed: u64,
    /// When false phases are still counted but never timed.
    pub profiler: bool,
    pub gather_workers: usize,

    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub update_every: usize,
    pub buffer_capacity: usize,
    pub hidden_units: Vec<usize>,
    pub entropy_alpha: f64,
    pub policy_delay: usize,
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    pub explore_noise_sigma: f64,
    /// Global gradient-norm clip; `null` disables it.
    pub grad_clip: Option<f64>,

    /// `null` means the scenario rule: `ceil(N/3)` prey, none for navigation.
    pub n_prey: Option<usize>,
    /// `null` means the scenario rule: 2 obstacles, or `N` landmarks.
    pub n_landmarks: Option<usize>,
    pub max_episode_len: usize,
    pub dt: f64,
    pub damping: f64,
    pub accel_scale: f64,
    pub world_half_width: f64,
    pub learner_max_speed: f64,
    pub prey_max_speed: f64,
    pub learner_radius: f64,
    pub prey_radius: f64,
    pub landmark_radius: f64,
    pub prey_speed_factor: f64,
    pub prey_jitter_sigma: f64,
    pub boundary_penalty: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AlgoConfig::new(Algorithm::Maddpg);
        let e = EnvConfig::predator_prey(3);
        Self {
            algorithm: a.algorithm,
            scenario: e.scenario,
            n_agents: e.n_learners,
            episodes: DEFAULT_EPISODES,
            seed: 0,
            profiler: true,
            gather_workers: a.gather_workers,
            gamma: a.gamma,
            lr: a.lr,
            batch_size: a.batch_size,
            tau: a.tau,
            update_every: a.update_every,
            buffer_capacity: a.buffer_capacity,
            hidden_units: a.hidden_units,
            entropy_alpha: a.entropy_alpha,
            policy_delay: a.policy_delay,
            target_noise_sigma: a.target_noise_sigma,
            target_noise_clip: a.target_noise_clip,
            explore_noise_sigma: a.explore_noise_sigma,
            grad_clip: a.grad_clip,
            n_prey: None,
            n_landmarks: None,
            max_episode_len: e.max_episode_len,
            dt: e.dt,
            damping: e.damping,
            accel_scale: e.accel_scale,
            world_half_width: e.world_half_width,
            learner_max_speed: e.learner_max_speed,
            prey_max_speed: e.prey_max_speed,
            learner_radius: e.learner_radius,
            prey_radius: e.prey_radius,
            landmark_radius: e.landmark_radius,
            prey_speed_factor: e.prey_speed_factor,
            prey_jitter_sigma: e.prey_jitter_sigma,
            boundary_penalty: e.boundary_penalty,
        }
    }
}

impl RunConfig {
    pub fn algo_config(&self) -> AlgoConfig {
        AlgoConfig {
            algorithm: self.algorithm,
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            tau: self.tau,
            update_every: self.update_every,
            buffer_capacity: self.buffer_capacity,
            hidden_units: self.hidden_units.clone(),
            entropy_alpha: self.entropy_alpha,
            policy_delay: self.policy_delay,
            target_noise_sigma: self.target_noise_sigma,
            target_noise_clip: self.target_noise_clip,
            explore_noise_sigma: self.explore_noise_sigma,
            grad_clip: self.grad_clip,
            gather_workers: self.gather_workers,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        let rule = EnvConfig::for_scenario(self.scenario, self.n_agents);
        EnvConfig {
            n_prey: self.n_prey.unwrap_or(rule.n_prey),
            n_landmarks: self.n_landmarks.unwrap_or(rule.n_landmarks),
            max_episode_len: self.max_episode_len,
            dt: self.dt,
            damping: self.damping,
            accel_scale: self.accel_scale,
            world_half_width: self.world_half_width,
            learner_max_speed: self.learner_max_speed,
            prey_max_speed: self.prey_max_speed,
            learner_radius: self.learner_radius,
            prey_radius: self.prey_radius,
            landmark_radius: self.landmark_radius,
            prey_speed_factor: self.prey_speed_factor,
            prey_jitter_sigma: self.prey_jitter_sigma,
            boundary_penalty: self.boundary_penalty,
            ..rule
        }
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            algorithm: self.algorithm,
            scenario: self.scenario,
            n_agents: self.n_agents,
            batch_size: self.batch_size,
            episodes: self.episodes,
            seeds: vec![self.seed],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(invalid("n_agents", "must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(invalid("episodes", "must be at least 1"));
        }
        self.algo_config().validate().map_err(field_error)?;
        self.env_config().validate().map_err(field_error)?;
        Ok(())
    }
}

/// An agent-count sweep: `base` is run once per count and repetition, with
/// repetition `r` using seed `base.seed + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub agent_counts: Vec<usize>,
    pub repetitions: usize,
    /// Run the points concurrently. Counters are unaffected but timings are
    /// marked as contended.
    pub parallel_points: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            agent_counts: DEFAULT_AGENT_COUNTS.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
            parallel_points: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = &self.agent_counts;
        if counts.len() < 2 || counts[0] == 0 || counts.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(invalid("agent_counts", format!("non-doubling sequence {counts:?}")));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        for &n in counts {
            RunConfig { n_agents: n, ..self.base.clone() }.validate().map_err(|e| match e {
                BenchError::Validation { path, message } => {
                    BenchError::Validation { path: format!("base.{path}"), message }
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Per-point run configurations, grouped by agent count.
    pub fn points(&self) -> Vec<Vec<RunConfig>> {
        self.agent_counts
            .iter()
            .map(|&n| {
                (0..self.repetitions as u64)
                    .map(|r| RunConfig { n_agents: n, seed: self.base.seed + r, ..self.base.clone() })
                    .collect()
            })
            .collect()
    }
}

fn invalid(path: &str, message: impl Into<String>) -> BenchError {
    BenchError::Validation { path: path.into(), message: message.into() }
}

/// Turns a core `InvalidConfig("field: ...")` or `"field must ..."` into a
/// field-path validation error.
fn field_error(err: marl_core::Error) -> BenchError {
    match err {
        marl_core::Error::InvalidConfig(msg) => {
            let field = msg.split([':', ' ']).next().unwrap_or_default();
            let known = serde_json::to_value(RunConfig::default())
                .ok()
                .and_then(|v| v.as_object().map(|o| o.contains_key(field)))
                .unwrap_or(false);
            let path = if known { field } else { "." };
            BenchError::Validation { path: path.into(), message: msg }
        }
        other => other.into(),
    }
}

/// Deserializes `text`, reporting the JSON path of the first bad field.
pub fn parse_json<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| BenchError::Parse {
        source_name: source_name.into(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| BenchError::Parse {
        source_name: source_name.into(),
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = parse_json(text, "run config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    let cfg: SweepConfig = parse_json(text, "sweep config")?;
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(BenchError::io(path))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    parse_run_config(&read(path)?)
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    parse_sweep_config(&read(path)?)
}
