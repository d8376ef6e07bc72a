//! Analytic desk-scale environments: a one-state continuous bandit, a 2D
//! multimodal point mass, and pendulum swing-up.
//!
//! Dynamics and rewards are deterministic closed forms; randomness enters
//! only through `reset`. Episodes end by the step limit, which the collector
//! treats as truncation (`done = false` in stored transitions).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    /// Conservative bound on |reward| over any reachable (state, action).
    pub reward_bound: f64,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Apply an action (clamped to the box), return `(next_obs, reward)`.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64);
    fn obs(&self) -> Vec<f64>;
    /// Internal physical state, for exact checkpoint/restore.
    fn state_vec(&self) -> Vec<f64>;
    fn set_state_vec(&mut self, s: &[f64]);
}

/// Environment registry keyed by name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "bandit" => Ok(Box::new(BanditEnv::default())),
        "pointmass" => Ok(Box::new(PointMassEnv::new())),
        "pendulum" => Ok(Box::new(PendulumEnv::new())),
        other => Err(Error::invalid(format!(
            "unknown environment '{other}' (expected bandit|pointmass|pendulum)"
        ))),
    }
}

fn clamp_action(a: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| v.clamp(l, h))
        .collect()
}

// ---------------------------------------------------------------------------
// Bandit
// ---------------------------------------------------------------------------

/// Bimodal default bandit reward: global argmax at `a = 0.6`, a smaller mode
/// at `a = -0.6`.
pub fn default_bandit_reward(a: f64) -> f64 {
    (-8.0 * (a - 0.6).powi(2)).exp() + 0.5 * (-8.0 * (a + 0.6).powi(2)).exp()
}

/// Single-state continuous bandit on `a in [-1, 1]`: one step per episode,
/// constant state, reward `r(a)`.
pub struct BanditEnv {
    spec: EnvSpec,
    reward_fn: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl BanditEnv {
    pub fn new(reward_fn: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64) -> Self {
        Self {
            spec: EnvSpec {
                name: "bandit".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: 1,
                reward_bound: bound,
            },
            reward_fn: Box::new(reward_fn),
        }
    }

    pub fn reward(&self, a: f64) -> f64 {
        (self.reward_fn)(a)
    }
}

impl Default for BanditEnv {
    fn default() -> Self {
        Self::new(default_bandit_reward, 1.5)
    }
}

impl Env for BanditEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64) {
        let a = action[0].clamp(-1.0, 1.0);
        (self.obs(), (self.reward_fn)(a))
    }

    fn obs(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn state_vec(&self) -> Vec<f64> {
        vec![]
    }

    fn set_state_vec(&mut self, _s: &[f64]) {}
}

// ---------------------------------------------------------------------------
// Point mass
// ---------------------------------------------------------------------------

pub const POINTMASS_DT: f64 = 0.05;
pub const POINTMASS_DAMPING: f64 = 0.1;
pub const POINTMASS_WELLS: [[f64; 2]; 2] = [[0.7, 0.7], [-0.7, -0.7]];

/// 2D point mass under force control with two equal reward wells — a
/// multimodal task: both wells are equally good from the central resets.
///
/// Semi-implicit Euler: `v' = v + dt (a - damping v)`, `p' = p + dt v'`.
/// Reward: Gaussian bumps at the wells minus a small action cost.
pub struct PointMassEnv {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl PointMassEnv {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass".into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                max_episode_steps: 200,
                reward_bound: 2.5,
            },
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
        }
    }

    pub fn reward(pos: &[f64; 2], action: &[f64]) -> f64 {
        let mut r = 0.0;
        for w in &POINTMASS_WELLS {
            let d2 = (pos[0] - w[0]).powi(2) + (pos[1] - w[1]).powi(2);
            r += (-8.0 * d2).exp();
        }
        r - 0.001 * (action[0].powi(2) + action[1].powi(2))
    }
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMassEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        self.vel = [0.0, 0.0];
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64) {
        let a = clamp_action(action, &self.spec.action_low, &self.spec.action_high);
        for i in 0..2 {
            self.vel[i] += POINTMASS_DT * (a[i] - POINTMASS_DAMPING * self.vel[i]);
            self.pos[i] += POINTMASS_DT * self.vel[i];
        }
        let r = Self::reward(&self.pos, &a);
        (self.obs(), r)
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn state_vec(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn set_state_vec(&mut self, s: &[f64]) {
        self.pos = [s[0], s[1]];
        self.vel = [s[2], s[3]];
    }
}

// ---------------------------------------------------------------------------
// Pendulum swing-up
// ---------------------------------------------------------------------------

pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_G: f64 = 10.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = (theta + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

/// Classic swing-up: `theta = 0` is upright, torque-limited so the pendulum
/// must pump energy from below. Observation `(cos theta, sin theta, theta_dot)`,
/// reward `-(theta_bar^2 + 0.1 theta_dot^2 + 0.001 a^2)` evaluated at the
/// post-step state. The angular velocity is not clamped; the reward bound
/// below covers the worst 200-step excursion from the reset set.
pub struct PendulumEnv {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
}

impl PendulumEnv {
    pub fn new() -> Self {
        // |theta_dot| <= 1 + 200 * dt * (3g/2 + 3*2) = 211 in 200 steps.
        let max_speed = 211.0;
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-PENDULUM_MAX_TORQUE],
                action_high: vec![PENDULUM_MAX_TORQUE],
                max_episode_steps: 200,
                reward_bound: std::f64::consts::PI.powi(2)
                    + 0.1 * max_speed * max_speed
                    + 0.001 * PENDULUM_MAX_TORQUE * PENDULUM_MAX_TORQUE,
            },
            theta: 0.0,
            theta_dot: 0.0,
        }
    }

    pub fn angles(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PendulumEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64) {
        let u = action[0].clamp(-PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE);
        // theta'' = (3g / 2l) sin(theta) + 3u / (m l^2), m = l = 1.
        let acc = 1.5 * PENDULUM_G * self.theta.sin() + 3.0 * u;
        self.theta_dot += PENDULUM_DT * acc;
        self.theta = wrap_angle(self.theta + PENDULUM_DT * self.theta_dot);
        let r = -(self.theta.powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u);
        (self.obs(), r)
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn state_vec(&self) -> Vec<f64> {
        vec![self.theta, self.theta_dot]
    }

    fn set_state_vec(&mut self, s: &[f64]) {
        self.theta = s[0];
        self.theta_dot = s[1];
    }
}
