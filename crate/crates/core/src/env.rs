//! Deterministic 2-D particle worlds: predator-prey and cooperative navigation.
//!
//! Learners are accelerated by a continuous command in `[-1, 1]²`. Prey in
//! predator-prey are scripted to flee the nearest predator. Observations have
//! the fixed layout
//!
//! ```text
//! [ self vel (2) | self pos (2) | landmarks rel (2L) | other learners rel (2(N-1))
//!   | other learners vel (2(N-1)) | prey rel (2M) | prey vel (2M) ]
//! ```
//!
//! so `obs_dim = 4 + 2L + 4(N-1) + 4M`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PredatorPrey,
    CooperativeNavigation,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::PredatorPrey => "predator_prey",
            Scenario::CooperativeNavigation => "cooperative_navigation",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub scenario: Scenario,
    pub n_learners: usize,
    pub n_prey: usize,
    pub n_landmarks: usize,
    pub dt: f64,
    pub damping: f64,
    pub accel_scale: f64,
    pub max_episode_len: usize,
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

impl EnvConfig {
    /// `N` predators chasing `ceil(N/3)` prey around 2 obstacles.
    pub fn predator_prey(n_learners: usize) -> Self {
        Self::with_counts(Scenario::PredatorPrey, n_learners, n_learners.div_ceil(3), 2)
    }

    /// `N` agents covering `N` landmarks.
    pub fn cooperative_navigation(n_learners: usize) -> Self {
        Self::with_counts(Scenario::CooperativeNavigation, n_learners, 0, n_learners)
    }

    pub fn for_scenario(scenario: Scenario, n_learners: usize) -> Self {
        match scenario {
            Scenario::PredatorPrey => Self::predator_prey(n_learners),
            Scenario::CooperativeNavigation => Self::cooperative_navigation(n_learners),
        }
    }

    pub fn with_counts(scenario: Scenario, n_learners: usize, n_prey: usize, n_landmarks: usize) -> Self {
        Self {
            scenario,
            n_learners,
            n_prey,
            n_landmarks,
            dt: 0.1,
            damping: 0.25,
            accel_scale: 5.0,
            max_episode_len: 25,
            world_half_width: 1.0,
            learner_max_speed: 1.0,
            prey_max_speed: 1.3,
            learner_radius: 0.05,
            prey_radius: 0.035,
            landmark_radius: 0.05,
            prey_speed_factor: 1.3,
            prey_jitter_sigma: 0.05,
            boundary_penalty: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_learners == 0 {
            return fail("n_learners must be at least 1".into());
        }
        match self.scenario {
            Scenario::PredatorPrey if self.n_prey == 0 => return fail("predator_prey needs at least one prey".into()),
            Scenario::CooperativeNavigation if self.n_prey != 0 => {
                return fail("cooperative_navigation has no prey".into())
            }
            Scenario::CooperativeNavigation if self.n_landmarks == 0 => {
                return fail("cooperative_navigation needs at least one landmark".into())
            }
            _ => {}
        }
        if self.max_episode_len == 0 {
            return fail("max_episode_len must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return fail(format!("damping must lie in [0, 1], got {}", self.damping));
        }
        let positive = [
            ("dt", self.dt),
            ("world_half_width", self.world_half_width),
            ("learner_max_speed", self.learner_max_speed),
            ("prey_max_speed", self.prey_max_speed),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return fail(format!("{name} must be positive, got {value}"));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.n_landmarks + 4 * (self.n_learners - 1) + 4 * self.n_prey
    }

    /// `(obs_dim, action_dim, critic_input_dim)` with
    /// `critic_input_dim = N·obs_dim + N·action_dim`.
    pub fn space_dims(&self) -> SpaceDims {
        let obs_dim = self.obs_dim();
        SpaceDims { obs_dim, action_dim: ACTION_DIM, critic_input_dim: self.n_learners * (obs_dim + ACTION_DIM) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceDims {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub critic_input_dim: usize,
}

pub type Vec2 = [f64; 2];

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub learner_pos: Vec<Vec2>,
    pub learner_vel: Vec<Vec2>,
    pub prey_pos: Vec<Vec2>,
    pub prey_vel: Vec<Vec2>,
    pub landmark_pos: Vec<Vec2>,
    pub step_index: usize,
}

impl WorldState {
    pub fn is_finite(&self) -> bool {
        [&self.learner_pos, &self.learner_vel, &self.prey_pos, &self.prey_vel, &self.landmark_pos]
            .iter()
            .flat_map(|v| v.iter())
            .all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

/// Joint acceleration command, one row per learner.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction(pub Vec<Vec2>);

impl JointAction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![[0.0; 2]; n])
    }

    /// Clips every component into `[-1, 1]`; NaN becomes 0.
    pub fn clipped(&self) -> Self {
        let clip = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self(self.0.iter().map(|a| [clip(a[0]), clip(a[1])]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ParticleEnv {
    config: EnvConfig,
}

impl ParticleEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn space_dims(&self) -> SpaceDims {
        self.config.space_dims()
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (WorldState, Vec<Vec<f64>>) {
        let w = self.config.world_half_width;
        let mut place = |count: usize| -> Vec<Vec2> {
            (0..count).map(|_| [rng.random_range(-w..=w), rng.random_range(-w..=w)]).collect()
        };
        let learner_pos = place(self.config.n_learners);
        let prey_pos = place(self.config.n_prey);
        let landmark_pos = place(self.config.n_landmarks);
        let state = WorldState {
            learner_vel: vec![[0.0; 2]; learner_pos.len()],
            prey_vel: vec![[0.0; 2]; prey_pos.len()],
            learner_pos,
            prey_pos,
            landmark_pos,
            step_index: 0,
        };
        let obs = self.observe_all(&state);
        (state, obs)
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &WorldState, actions: &JointAction, rng: &mut R) -> Result<StepOutcome> {
        let cfg = &self.config;
        if state.step_index >= cfg.max_episode_len {
            return Err(Error::EpisodeFinished(state.step_index));
        }
        if actions.0.len() != cfg.n_learners {
            return Err(Error::ShapeMismatch(format!("{} actions for {} learners", actions.0.len(), cfg.n_learners)));
        }
        let actions = actions.clipped();

        // Prey commands are computed from the pre-step state.
        let prey_accel: Vec<Vec2> = (0..cfg.n_prey).map(|m| self.scripted_prey_policy(state, m, rng)).collect();

        let mut next = state.clone();
        for (i, a) in actions.0.iter().enumerate() {
            integrate(&mut next.learner_pos[i], &mut next.learner_vel[i], *a, cfg, cfg.learner_max_speed);
        }
        let w = cfg.world_half_width;
        for (m, a) in prey_accel.iter().enumerate() {
            let (pos, vel) = (&mut next.prey_pos[m], &mut next.prey_vel[m]);
            integrate(pos, vel, *a, cfg, cfg.prey_max_speed);
            // Scripted prey are kept inside the arena.
            for c in 0..2 {
                if pos[c].abs() > w {
                    pos[c] = pos[c].clamp(-w, w);
                    vel[c] = 0.0;
                }
            }
        }
        next.step_index += 1;

        let mut rewards = match cfg.scenario {
            Scenario::PredatorPrey => self.reward_predator_prey(&next)?,
            Scenario::CooperativeNavigation => self.reward_cooperative_navigation(&next)?,
        };
        for (r, p) in rewards.iter_mut().zip(&next.learner_pos) {
            *r -= self.boundary_penalty(*p);
        }
        let observations = self.observe_all(&next);
        let done = next.step_index == cfg.max_episode_len;
        Ok(StepOutcome { state: next, rewards, observations, done })
    }

    /// Penalty for a learner outside the arena: `scale · Σ_c max(0, |p_c| − w)`.
    pub fn boundary_penalty(&self, p: Vec2) -> f64 {
        let w = self.config.world_half_width;
        self.config.boundary_penalty * p.iter().map(|c| (c.abs() - w).max(0.0)).sum::<f64>()
    }

    pub fn observe(&self, state: &WorldState, agent: usize) -> Result<Vec<f64>> {
        let n = self.config.n_learners;
        if agent >= n {
            return Err(Error::IndexOutOfRange { index: agent, len: n });
        }
        let me = state.learner_pos[agent];
        let mut obs = Vec::with_capacity(self.config.obs_dim());
        obs.extend_from_slice(&state.learner_vel[agent]);
        obs.extend_from_slice(&me);
        for l in &state.landmark_pos {
            obs.extend_from_slice(&sub(*l, me));
        }
        let others = (0..n).filter(|&j| j != agent);
        for j in others.clone() {
            obs.extend_from_slice(&sub(state.learner_pos[j], me));
        }
        for j in others {
            obs.extend_from_slice(&state.learner_vel[j]);
        }
        for p in &state.prey_pos {
            obs.extend_from_slice(&sub(*p, me));
        }
        for v in &state.prey_vel {
            obs.extend_from_slice(v);
        }
        Ok(obs)
    }

    pub fn observe_all(&self, state: &WorldState) -> Vec<Vec<f64>> {
        (0..self.config.n_learners).map(|i| self.observe(state, i).expect("index in range")).collect()
    }

    /// Shared reward: `−Σ_landmarks min_agents dist − (#colliding agent pairs)`.
    pub fn reward_cooperative_navigation(&self, state: &WorldState) -> Result<Vec<f64>> {
        if self.config.scenario != Scenario::CooperativeNavigation {
            return Err(Error::InvalidConfig("cooperative navigation reward on another scenario".into()));
        }
        let coverage: f64 = state
            .landmark_pos
            .iter()
            .map(|l| state.learner_pos.iter().map(|p| dist(*p, *l)).fold(f64::INFINITY, f64::min))
            .sum();
        let contact = 2.0 * self.config.learner_radius;
        let mut collisions = 0usize;
        for (i, a) in state.learner_pos.iter().enumerate() {
            for b in &state.learner_pos[i + 1..] {
                if dist(*a, *b) < contact {
                    collisions += 1;
                }
            }
        }
        let shared = -coverage - collisions as f64;
        Ok(vec![shared; self.config.n_learners])
    }

    /// Shared team reward: `+10` per predator-prey contact and
    /// `−0.1 ·` the smallest predator-prey distance.
    pub fn reward_predator_prey(&self, state: &WorldState) -> Result<Vec<f64>> {
        if self.config.scenario != Scenario::PredatorPrey {
            return Err(Error::InvalidConfig("predator-prey reward on another scenario".into()));
        }
        let contact = self.config.learner_radius + self.config.prey_radius;
        let mut contacts = 0usize;
        let mut closest = f64::INFINITY;
        for p in &state.learner_pos {
            for q in &state.prey_pos {
                let d = dist(*p, *q);
                if d < contact {
                    contacts += 1;
                }
                closest = closest.min(d);
            }
        }
        let shared = 10.0 * contacts as f64 - 0.1 * closest;
        Ok(vec![shared; self.config.n_learners])
    }

    /// Flee the nearest predator (lowest index on ties) at
    /// `prey_speed_factor`, plus Gaussian jitter.
    pub fn scripted_prey_policy<R: Rng + ?Sized>(&self, state: &WorldState, prey: usize, rng: &mut R) -> Vec2 {
        let dir = self.flee_direction(state, prey);
        let jitter = Normal::new(0.0, self.config.prey_jitter_sigma).expect("valid sigma");
        let scale = self.config.prey_speed_factor;
        [dir[0] * scale + jitter.sample(rng), dir[1] * scale + jitter.sample(rng)]
    }

    /// Unit vector from the nearest predator toward the prey.
    pub fn flee_direction(&self, state: &WorldState, prey: usize) -> Vec2 {
        let me = state.prey_pos[prey];
        let mut best: Option<(f64, Vec2)> = None;
        for p in &state.learner_pos {
            let d = dist(*p, me);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *p));
            }
        }
        match best {
            Some((d, p)) if d > 0.0 => {
                let away = sub(me, p);
                [away[0] / d, away[1] / d]
            }
            _ => [1.0, 0.0],
        }
    }
}

fn integrate(pos: &mut Vec2, vel: &mut Vec2, accel: Vec2, cfg: &EnvConfig, max_speed: f64) {
    for c in 0..2 {
        vel[c] = (1.0 - cfg.damping) * vel[c] + accel[c] * cfg.accel_scale * cfg.dt;
    }
    let speed = norm(*vel);
    if speed > max_speed {
        vel[0] *= max_speed / speed;
        vel[1] *= max_speed / speed;
    }
    pos[0] += vel[0] * cfg.dt;
    pos[1] += vel[1] * cfg.dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn still_state(cfg: &EnvConfig) -> WorldState {
        WorldState {
            learner_pos: vec![[0.0; 2]; cfg.n_learners],
            learner_vel: vec![[0.0; 2]; cfg.n_learners],
            prey_pos: vec![[0.5; 2]; cfg.n_prey],
            prey_vel: vec![[0.0; 2]; cfg.n_prey],
            landmark_pos: vec![[0.0; 2]; cfg.n_landmarks],
            step_index: 0,
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let env = ParticleEnv::new(EnvConfig::predator_prey(3)).unwrap();
        let a = env.reset(&mut seeded_rng(4));
        let b = env.reset(&mut seeded_rng(4));
        assert_eq!(a, b);
        assert!(a.0.learner_vel.iter().chain(&a.0.prey_vel).all(|v| *v == [0.0, 0.0]));
        assert_eq!(a.0.step_index, 0);
    }

    #[test]
    fn cooperative_navigation_defaults() {
        let env = ParticleEnv::new(EnvConfig::cooperative_navigation(3)).unwrap();
        let (state, _) = env.reset(&mut seeded_rng(1));
        assert_eq!(state.landmark_pos.len(), 3);
        assert!(state.prey_pos.is_empty());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EnvConfig::predator_prey(3);
        cfg.n_prey = 0;
        assert!(ParticleEnv::new(cfg).is_err());
        let mut cfg = EnvConfig::cooperative_navigation(3);
        cfg.n_prey = 1;
        assert!(ParticleEnv::new(cfg).is_err());
        assert!(ParticleEnv::new(EnvConfig::predator_prey(0)).is_err());
    }

    #[test]
    fn zero_action_at_rest_is_fixed_point() {
        let cfg = EnvConfig::cooperative_navigation(2);
        let env = ParticleEnv::new(cfg).unwrap();
        let mut state = still_state(&cfg);
        state.learner_pos = vec![[0.2, -0.3], [0.6, 0.1]];
        let out = env.step(&state, &JointAction::zeros(2), &mut seeded_rng(0)).unwrap();
        assert_eq!(out.state.learner_pos, state.learner_pos);
    }

    #[test]
    fn damping_update_hand_evaluated() {
        let cfg = EnvConfig::cooperative_navigation(1);
        let env = ParticleEnv::new(cfg).unwrap();
        let mut state = still_state(&cfg);
        state.learner_vel = vec![[1.0, 0.0]];
        let out = env.step(&state, &JointAction::zeros(1), &mut seeded_rng(0)).unwrap();
        assert!((out.state.learner_vel[0][0] - 0.75).abs() < 1e-15);
        assert!((out.state.learner_pos[0][0] - 0.075).abs() < 1e-15);
        assert_eq!(out.state.learner_vel[0][1], 0.0);
    }

    #[test]
    fn episode_ends_at_max_len() {
        let env = ParticleEnv::new(EnvConfig::predator_prey(3)).unwrap();
        let mut rng = seeded_rng(2);
        let (mut state, _) = env.reset(&mut rng);
        for t in 1..=25 {
            let out = env.step(&state, &JointAction::zeros(3), &mut rng).unwrap();
            assert_eq!(out.done, t == 25);
            state = out.state;
        }
        assert!(matches!(env.step(&state, &JointAction::zeros(3), &mut rng), Err(Error::EpisodeFinished(25))));
    }

    #[test]
    fn observation_dims() {
        let cfg = EnvConfig::with_counts(Scenario::PredatorPrey, 3, 1, 2);
        assert_eq!(cfg.obs_dim(), 20);
        let dims = cfg.space_dims();
        assert_eq!((dims.obs_dim, dims.action_dim, dims.critic_input_dim), (20, 2, 66));
        let cfg = EnvConfig::with_counts(Scenario::PredatorPrey, 6, 2, 2);
        assert_eq!(cfg.obs_dim(), 36);
        assert_eq!(cfg.space_dims().critic_input_dim, 228);

        let env = ParticleEnv::new(EnvConfig::with_counts(Scenario::PredatorPrey, 3, 1, 2)).unwrap();
        let (_, obs) = env.reset(&mut seeded_rng(0));
        assert!(obs.iter().all(|o| o.len() == 20));
    }

    #[test]
    fn observation_layout() {
        let cfg = EnvConfig::with_counts(Scenario::PredatorPrey, 2, 1, 1);
        let env = ParticleEnv::new(cfg).unwrap();
        let state = WorldState {
            learner_pos: vec![[0.1, 0.2], [0.5, -0.5]],
            learner_vel: vec![[0.3, 0.4], [-0.1, 0.0]],
            prey_pos: vec![[0.0, 1.0]],
            prey_vel: vec![[0.2, 0.2]],
            landmark_pos: vec![[0.1, 0.2]],
            step_index: 0,
        };
        let obs = env.observe(&state, 0).unwrap();
        let expected = [0.3, 0.4, 0.1, 0.2, 0.0, 0.0, 0.4, -0.7, -0.1, 0.0, -0.1, 0.8, 0.2, 0.2];
        assert_eq!(obs.len(), expected.len());
        for (a, b) in obs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{obs:?}");
        }
        assert!(matches!(env.observe(&state, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn coverage_reward_cases() {
        let cfg = EnvConfig::cooperative_navigation(2);
        let env = ParticleEnv::new(cfg).unwrap();
        let mut state = still_state(&cfg);
        state.learner_pos = vec![[0.5, 0.5], [-0.5, -0.5]];
        state.landmark_pos = vec![[0.5, 0.5], [-0.5, -0.5]];
        assert_eq!(env.reward_cooperative_navigation(&state).unwrap(), vec![0.0, 0.0]);

        state.landmark_pos = vec![[0.5, 0.5], [-0.5, 0.5]];
        assert_eq!(env.reward_cooperative_navigation(&state).unwrap(), vec![-1.0, -1.0]);

        // Two agents in contact share the collision penalty once.
        state.learner_pos = vec![[0.5, 0.5], [0.55, 0.5]];
        state.landmark_pos = vec![[0.5, 0.5], [0.55, 0.5]];
        assert_eq!(env.reward_cooperative_navigation(&state).unwrap(), vec![-1.0, -1.0]);
        assert!(env.reward_predator_prey(&state).is_err());
    }

    #[test]
    fn predator_reward_cases() {
        let cfg = EnvConfig::with_counts(Scenario::PredatorPrey, 2, 1, 0);
        let env = ParticleEnv::new(cfg).unwrap();
        let mut state = still_state(&cfg);
        state.learner_pos = vec![[0.0, 0.0], [-0.9, 0.0]];
        state.prey_pos = vec![[0.4, 0.0]];
        let r = env.reward_predator_prey(&state).unwrap();
        assert!(r.iter().all(|&v| (v - -0.04).abs() < 1e-12));

        state.prey_pos = vec![[0.05, 0.0]];
        let r = env.reward_predator_prey(&state).unwrap();
        assert!(r.iter().all(|&v| (v - (10.0 - 0.005)).abs() < 1e-12));
        assert!(env.reward_cooperative_navigation(&state).is_err());
    }

    #[test]
    fn prey_flees_nearest_predator() {
        let cfg = EnvConfig::with_counts(Scenario::PredatorPrey, 2, 1, 0);
        let env = ParticleEnv::new(cfg).unwrap();
        let mut state = still_state(&cfg);
        state.prey_pos = vec![[0.0, 0.0]];
        state.learner_pos = vec![[-0.3, 0.0], [0.0, 0.9]];
        assert_eq!(env.flee_direction(&state, 0), [1.0, 0.0]);

        // Equidistant predators: index 0 wins.
        state.learner_pos = vec![[0.0, 0.5], [0.5, 0.0]];
        assert_eq!(env.flee_direction(&state, 0), [0.0, -1.0]);

        let mut no_jitter = cfg;
        no_jitter.prey_jitter_sigma = 0.0;
        let env = ParticleEnv::new(no_jitter).unwrap();
        let a = env.scripted_prey_policy(&state, 0, &mut seeded_rng(0));
        assert!((norm(a) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn boundary_penalty_only_outside() {
        let env = ParticleEnv::new(EnvConfig::cooperative_navigation(1)).unwrap();
        assert_eq!(env.boundary_penalty([0.9, -0.9]), 0.0);
        assert!((env.boundary_penalty([1.2, -1.1]) - 3.0).abs() < 1e-12);
    }
}
