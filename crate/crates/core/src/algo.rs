//! Full training loops for the two diffusion-policy algorithms — mirror
//! descent (DPMD) and soft actor-critic (SDAC) — with lambda scheduling, EMA
//! maintenance, deterministic evaluation, and bit-exact checkpointing.
//!
//! One iteration = collect `env_interactions_per_iter` environment steps,
//! then (after warmup) one critic gradient step and one policy gradient
//! step. All randomness flows from a single seeded stream in `TrainState`,
//! so identical configs reproduce identical runs byte for byte.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_perturb, normal_vec, NoiseSchedule};
use crate::env::{make_env, Env};
use crate::error::Error;
use crate::losses::{dpmd_loss, sdac_loss, EmaStats};
use crate::net::{Activation, Adam, LrSchedule, ScoreModel, ScoreNet};
use crate::report::{log_debug, log_info, MetricsCsv, MetricsRow, RunManifest};
use crate::rl::{
    default_target_entropy, gaussian_entropy, q_loss_soft, q_loss_standard, select_action,
    tune_exploration, DiffusionPolicy, QEnsemble, ReplayBuffer, Transition,
};
use crate::Result;

/// Complete hyperparameter record for a training run; serialized with every
/// checkpoint and manifest. Unknown keys in config files are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    pub total_iters: usize,
    pub env_interactions_per_iter: usize,
    /// Uniform-random action steps before any gradient update.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lambda0: f64,
    pub lambda_target: f64,
    /// The lambda step size (`beta` in the update rule).
    pub lambda_lr: f64,
    /// `contractive`: `lambda -= beta (lambda - target)` (anneals toward the
    /// target). `printed`: `lambda += beta (lambda - target)`, which moves
    /// away from the target and is kept only for comparison.
    pub lambda_rule: String,
    pub ema_xi: f64,
    /// Standardize Q by the EMA stats inside the mirror-descent weights
    /// (`false` uses raw `exp(Q/lambda)`).
    pub normalize_q_weights: bool,
    pub t_steps: usize,
    pub schedule: String,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cosine_s: f64,
    /// Candidate actions per behaviour selection (`M`).
    pub action_batch_m: usize,
    /// Reverse-sampled candidates per state in the softmax loss (`K`).
    pub phi_samples_k: usize,
    /// SDAC sampling distribution for `a_t`:
    /// `perturbed_policy` | `last_policy` | `uniform`.
    pub h_sampler: String,
    /// Multiplies rewards inside the critic losses (Q is learned in scaled
    /// units; evaluation returns are never scaled). Keeps Bellman targets at
    /// trainable magnitudes on long-horizon dense-cost tasks.
    pub reward_scale: f64,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub policy_lr_final: f64,
    pub critics: usize,
    pub tau: f64,
    pub policy_hidden_layers: usize,
    pub policy_hidden_width: usize,
    pub policy_activation: Activation,
    pub critic_hidden_layers: usize,
    pub critic_hidden_width: usize,
    pub critic_activation: Activation,
    pub time_embed_dim: usize,
    /// Parametrize the policy score as a residual on the standard-normal
    /// prior score (keeps early and diffuse-step reverse chains bounded).
    pub prior_anchor: bool,
    pub sigma_explore_init: f64,
    pub sigma_lr: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
}

impl TrainConfig {
    /// Desk-scale defaults. Optimizer form, diffusion steps (20), cosine
    /// schedule, twin critics and the 1e6 replay buffer follow the reference
    /// table; network widths are shrunk so a full run finishes in minutes on
    /// one CPU core.
    pub fn defaults(algorithm: &str, env: &str, seed: u64) -> Self {
        Self {
            algorithm: algorithm.into(),
            env: env.into(),
            seed,
            total_iters: 150_000,
            env_interactions_per_iter: 1,
            warmup_steps: 5_000,
            batch_size: 64,
            gamma: 0.99,
            lambda0: 1.0,
            lambda_target: 0.1,
            lambda_lr: 1e-4,
            lambda_rule: "contractive".into(),
            ema_xi: 0.01,
            normalize_q_weights: true,
            t_steps: 20,
            schedule: "cosine".into(),
            beta_start: 0.001,
            beta_end: 0.999,
            cosine_s: 0.008,
            action_batch_m: 8,
            phi_samples_k: 8,
            h_sampler: "perturbed_policy".into(),
            reward_scale: 1.0,
            critic_lr: 3e-4,
            policy_lr: 3e-4,
            policy_lr_final: 3e-5,
            critics: 2,
            tau: 0.005,
            policy_hidden_layers: 2,
            policy_hidden_width: 48,
            policy_activation: Activation::Mish,
            critic_hidden_layers: 2,
            critic_hidden_width: 48,
            critic_activation: Activation::Mish,
            time_embed_dim: 16,
            prior_anchor: true,
            sigma_explore_init: 0.2,
            sigma_lr: 3e-4,
            eval_every: 2_000,
            eval_episodes: 20,
            replay_capacity: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("total_iters", self.total_iters as f64),
            ("env_interactions_per_iter", self.env_interactions_per_iter as f64),
            ("batch_size", self.batch_size as f64),
            ("lambda0", self.lambda0),
            ("lambda_target", self.lambda_target),
            ("t_steps", self.t_steps as f64),
            ("action_batch_m", self.action_batch_m as f64),
            ("phi_samples_k", self.phi_samples_k as f64),
            ("tau", self.tau),
            ("sigma_explore_init", self.sigma_explore_init),
            ("eval_every", self.eval_every as f64),
            ("eval_episodes", self.eval_episodes as f64),
            ("replay_capacity", self.replay_capacity as f64),
            ("ema_xi", self.ema_xi),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must be in (0, 1)"));
        }
        if !(1..=2).contains(&self.critics) {
            return Err(Error::invalid("critics must be 1 or 2"));
        }
        if !["dpmd", "sdac"].contains(&self.algorithm.as_str()) {
            return Err(Error::invalid(format!(
                "unknown algorithm '{}' (expected dpmd|sdac)",
                self.algorithm
            )));
        }
        if !["contractive", "printed"].contains(&self.lambda_rule.as_str()) {
            return Err(Error::invalid(format!(
                "unknown lambda_rule '{}' (expected contractive|printed)",
                self.lambda_rule
            )));
        }
        if !["perturbed_policy", "last_policy", "uniform"].contains(&self.h_sampler.as_str()) {
            return Err(Error::invalid(format!(
                "unknown h_sampler '{}' (expected perturbed_policy|last_policy|uniform)",
                self.h_sampler
            )));
        }
        if self.algorithm == "sdac" && self.phi_samples_k < 2 {
            return Err(Error::invalid("sdac needs phi_samples_k >= 2"));
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        match self.schedule.as_str() {
            "linear" => NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end),
            "cosine" => NoiseSchedule::cosine(self.t_steps, self.cosine_s),
            other => Err(Error::invalid(format!(
                "unknown schedule '{other}' (expected linear|cosine)"
            ))),
        }
    }
}

/// Everything a run needs to continue: networks, optimizers, buffer,
/// schedules, counters and the RNG stream.
pub struct TrainState {
    pub config: TrainConfig,
    pub policy: DiffusionPolicy,
    pub q: QEnsemble,
    pub policy_opt: Adam,
    pub critic_opts: Vec<Adam>,
    pub ema: EmaStats,
    pub lambda: f64,
    pub buffer: ReplayBuffer,
    pub iter: usize,
    pub env_steps: usize,
    pub episode_steps: usize,
    pub last_obs: Vec<f32>,
    pub rng: ChaCha8Rng,
    pub last_q_loss: f64,
    pub last_policy_loss: f64,
}

fn obs_to_f32(obs: &[f64]) -> Vec<f32> {
    obs.iter().map(|&v| v as f32).collect()
}

pub fn init_state(config: TrainConfig, env: &mut dyn Env) -> Result<TrainState> {
    config.validate()?;
    let sched = config.noise_schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spec = env.spec().clone();
    let net = ScoreNet::init(
        spec.action_dim,
        spec.state_dim,
        config.policy_hidden_layers,
        config.policy_hidden_width,
        config.policy_activation,
        config.time_embed_dim,
        config.t_steps,
        &mut rng,
    )?;
    let net = if config.prior_anchor { net.with_prior_anchor() } else { net };
    let q = QEnsemble::init(
        spec.state_dim,
        spec.action_dim,
        config.critic_hidden_layers,
        config.critic_hidden_width,
        config.critic_activation,
        config.critics,
        &mut rng,
    )?;
    let policy = DiffusionPolicy {
        net,
        sched,
        action_low: spec.action_low.iter().map(|&v| v as f32).collect(),
        action_high: spec.action_high.iter().map(|&v| v as f32).collect(),
        sigma_explore: config.sigma_explore_init,
    };
    let policy_opt = Adam::new(
        policy.net.n_params(),
        LrSchedule::Linear {
            start: config.policy_lr,
            end: config.policy_lr_final,
            total: config.total_iters as u64,
        },
    );
    let critic_opts = (0..config.critics)
        .map(|_| Adam::new(q.online()[0].n_params(), LrSchedule::Constant(config.critic_lr)))
        .collect();
    let last_obs = obs_to_f32(&env.reset(&mut rng));
    Ok(TrainState {
        ema: EmaStats::new(config.ema_xi),
        lambda: config.lambda0,
        buffer: ReplayBuffer::new(config.replay_capacity),
        iter: 0,
        env_steps: 0,
        episode_steps: 0,
        last_obs,
        rng,
        last_q_loss: 0.0,
        last_policy_loss: 0.0,
        policy,
        q,
        policy_opt,
        critic_opts,
        config,
    })
}

fn lambda_step(lambda: f64, target: f64, beta: f64, rule: &str) -> f64 {
    match rule {
        // Contractive form: anneal toward the target.
        "contractive" => lambda - beta * (lambda - target),
        // As-printed form, kept behind the flag for comparison.
        _ => lambda + beta * (lambda - target),
    }
}

fn uniform_action(lo: &[f32], hi: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| rng.random_range(l as f64..h as f64) as f32)
        .collect()
}

/// One environment interaction: behaviour action (uniform during warmup),
/// env step, transition storage, episode bookkeeping. Time-limit resets are
/// stored with `done = false`.
fn collect_step(state: &mut TrainState, env: &mut dyn Env) -> Result<()> {
    let s = state.last_obs.clone();
    let action = if state.env_steps < state.config.warmup_steps {
        uniform_action(&state.policy.action_low, &state.policy.action_high, &mut state.rng)
    } else {
        let q = &state.q;
        let mut qmin = |s: &[f32], a: &[f32]| q.q_min_online(s, a);
        select_action(
            &state.policy,
            &mut qmin,
            &s,
            state.config.action_batch_m,
            &mut state.rng,
            true,
        )?
    };
    let a64: Vec<f64> = action.iter().map(|&v| v as f64).collect();
    let (obs_next, reward) = env.step(&a64);
    let s_next = obs_to_f32(&obs_next);
    state.buffer.push(Transition {
        s,
        a: action,
        r: reward as f32,
        s_next: s_next.clone(),
        done: false,
    });
    state.env_steps += 1;
    state.episode_steps += 1;
    if state.episode_steps >= env.spec().max_episode_steps {
        state.episode_steps = 0;
        state.last_obs = obs_to_f32(&env.reset(&mut state.rng));
    } else {
        state.last_obs = s_next;
    }
    Ok(())
}

fn sample_batch(state: &mut TrainState) -> Vec<Transition> {
    let idx = state.buffer.sample_indices(state.config.batch_size, &mut state.rng);
    idx.into_iter().map(|i| state.buffer.get(i).clone()).collect()
}

fn critic_update(state: &mut TrainState, batch: &[Transition]) -> Result<()> {
    let soft = state.config.algorithm == "sdac";
    let scale = state.config.reward_scale as f32;
    let batch: Vec<Transition> = batch
        .iter()
        .map(|t| Transition { r: t.r * scale, ..t.clone() })
        .collect();
    let batch = &batch[..];
    let policy = &state.policy;
    let (loss, grads) = if soft {
        let mut next = |s: &[f32], rng: &mut ChaCha8Rng| {
            policy.sample_with_noise_logp(s, rng).expect("finite policy sample")
        };
        q_loss_soft(&state.q, batch, state.config.gamma, state.lambda, &mut next, &mut state.rng)?
    } else {
        let mut next = |s: &[f32], rng: &mut ChaCha8Rng| {
            policy.sample_clipped(s, rng).expect("finite policy sample")
        };
        q_loss_standard(&state.q, batch, state.config.gamma, &mut next, &mut state.rng)?
    };
    if !loss.is_finite() {
        return Err(Error::NumericalAbort { component: "critic".into(), iteration: state.iter });
    }
    for ((critic, opt), grad) in state
        .q
        .online_mut()
        .iter_mut()
        .zip(state.critic_opts.iter_mut())
        .zip(&grads)
    {
        opt.step(critic.params_mut(), grad);
    }
    state.q.polyak(state.config.tau)?;
    state.last_q_loss = loss;
    Ok(())
}

fn dpmd_policy_update(state: &mut TrainState, batch: &[Transition]) -> Result<()> {
    let states: Vec<Vec<f32>> = batch.iter().map(|t| t.s.clone()).collect();
    // a0 drawn from the current policy at the batch states (pi_old).
    let mut actions0 = Vec::with_capacity(states.len());
    for s in &states {
        actions0.push(state.policy.sample_clipped(s, &mut state.rng)?);
    }
    let qs: Vec<f64> = states
        .iter()
        .zip(&actions0)
        .map(|(s, a)| state.q.q_min_online(s, a) as f64)
        .collect();
    let ema = if state.config.normalize_q_weights { state.ema } else { EmaStats::identity() };
    let q = &state.q;
    let mut q_fn = |s: &[f32], a: &[f32]| q.q_min_online(s, a) as f64;
    let (loss, grad) = dpmd_loss(
        &state.policy.net,
        &state.policy.sched,
        &states,
        &actions0,
        &mut q_fn,
        state.lambda,
        &ema,
        false,
        &mut state.rng,
    )?;
    if !loss.is_finite() {
        return Err(Error::NumericalAbort { component: "policy".into(), iteration: state.iter });
    }
    state.policy_opt.step(state.policy.net.params_mut(), &grad);
    state.last_policy_loss = loss as f64;
    // Algorithm order: the policy step consumed the previous EMA stats; the
    // lambda and EMA updates close the iteration.
    state.lambda = lambda_step(
        state.lambda,
        state.config.lambda_target,
        state.config.lambda_lr,
        &state.config.lambda_rule,
    );
    state.ema.update(&qs);
    Ok(())
}

fn sdac_policy_update(state: &mut TrainState, batch: &[Transition]) -> Result<()> {
    let states: Vec<Vec<f32>> = batch.iter().map(|t| t.s.clone()).collect();
    let q = &state.q;
    let policy = &state.policy;
    let cfg = &state.config;
    let sched = policy.sched.clone();
    let mut q_fn = |s: &[f32], a: &[f32]| q.q_min_online(s, a) as f64;
    let (lo, hi) = (policy.action_low.clone(), policy.action_high.clone());
    let h_kind = cfg.h_sampler.clone();
    let mut h = move |s: Option<&[f32]>, t: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        let s = s.expect("sdac is state-conditional");
        match h_kind.as_str() {
            "uniform" => uniform_action(&lo, &hi, rng),
            "last_policy" => policy.sample_clipped(s, rng).expect("finite policy sample"),
            // Perturbed current policy: a_t ~ q_{t|0}(.|a0), a0 ~ pi_old.
            _ => {
                let a0 = policy.sample_clipped(s, rng).expect("finite policy sample");
                let eps = normal_vec(rng, a0.len());
                forward_perturb(&sched, &a0, t, &eps).expect("t in schedule range")
            }
        }
    };
    let (loss, grad) = sdac_loss(
        &policy.net,
        &policy.sched,
        &states,
        &mut q_fn,
        state.lambda,
        cfg.phi_samples_k,
        &mut h,
        false,
        &mut state.rng,
    )?;
    if !loss.is_finite() {
        return Err(Error::NumericalAbort { component: "policy".into(), iteration: state.iter });
    }
    state.policy_opt.step(state.policy.net.params_mut(), &grad);
    state.last_policy_loss = loss as f64;
    state.lambda = lambda_step(
        state.lambda,
        state.config.lambda_target,
        state.config.lambda_lr,
        &state.config.lambda_rule,
    );
    Ok(())
}

/// One training iteration: collect, then critic + policy updates once the
/// warmup phase has filled the buffer.
pub fn train_iter(state: &mut TrainState, env: &mut dyn Env) -> Result<()> {
    for _ in 0..state.config.env_interactions_per_iter {
        collect_step(state, env)?;
    }
    let warm = state.env_steps > state.config.warmup_steps;
    if warm && state.buffer.len() >= state.config.batch_size {
        let batch = sample_batch(state);
        critic_update(state, &batch)?;
        if state.config.algorithm == "sdac" {
            sdac_policy_update(state, &batch)?;
        } else {
            dpmd_policy_update(state, &batch)?;
        }
        // Exploration noise tracks the entropy target.
        let d = state.policy.action_dim();
        state.policy.sigma_explore = tune_exploration(
            state.policy.sigma_explore,
            gaussian_entropy(d, state.policy.sigma_explore),
            default_target_entropy(d),
            state.config.sigma_lr,
        );
    }
    state.iter += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub std_return: f64,
}

/// Deterministic evaluation seed for a given run seed and tag.
pub fn eval_seed(config_seed: u64, tag: u64) -> u64 {
    config_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(tag)
}

/// Noise-free evaluation (`explore = false`): seeded episode generation,
/// mean and population std of episodic returns.
pub fn evaluate_policy(
    state: &TrainState,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::invalid("need at least one evaluation episode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = obs_to_f32(&env.reset(&mut rng));
        let mut ep_return = 0.0f64;
        for _ in 0..env.spec().max_episode_steps {
            let q = &state.q;
            let mut qmin = |s: &[f32], a: &[f32]| q.q_min_online(s, a);
            let a = select_action(
                &state.policy,
                &mut qmin,
                &obs,
                state.config.action_batch_m,
                &mut rng,
                false,
            )?;
            let a64: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let (next, r) = env.step(&a64);
            ep_return += r;
            obs = obs_to_f32(&next);
        }
        returns.push(ep_return);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / returns.len() as f64;
    Ok(EvalResult { mean_return: mean, std_return: var.sqrt() })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: TrainConfig,
    config_hash: String,
    iteration: usize,
    env_steps: usize,
    episode_steps: usize,
    last_obs: Vec<f32>,
    env_state: Vec<f64>,
    rng: ChaCha8Rng,
    ema: EmaStats,
    lambda: f64,
    sigma_explore: f64,
    policy_opt: Adam,
    critic_opts: Vec<Adam>,
    last_q_loss: f64,
    last_policy_loss: f64,
    version: String,
}

fn write_buffer(path: &Path, buf: &ReplayBuffer) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let first = buf.iter().next();
    let s_dim = first.map_or(0, |t| t.s.len()) as u64;
    let a_dim = first.map_or(0, |t| t.a.len()) as u64;
    f.write_all(&(buf.len() as u64).to_le_bytes())?;
    f.write_all(&(buf.capacity() as u64).to_le_bytes())?;
    f.write_all(&s_dim.to_le_bytes())?;
    f.write_all(&a_dim.to_le_bytes())?;
    for t in buf.iter() {
        for v in t.s.iter().chain(&t.a).chain(std::iter::once(&t.r)).chain(&t.s_next) {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&[t.done as u8])?;
    }
    f.flush()?;
    Ok(())
}

fn read_buffer(path: &Path) -> Result<ReplayBuffer> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let read_u64 = |pos: &mut usize| -> Result<u64> {
        let v = u64::from_le_bytes(
            bytes
                .get(*pos..*pos + 8)
                .ok_or_else(|| Error::Checkpoint("truncated buffer file".into()))?
                .try_into()
                .unwrap(),
        );
        *pos += 8;
        Ok(v)
    };
    let n = read_u64(&mut pos)? as usize;
    let capacity = read_u64(&mut pos)? as usize;
    let s_dim = read_u64(&mut pos)? as usize;
    let a_dim = read_u64(&mut pos)? as usize;
    let mut buf = ReplayBuffer::new(capacity.max(1));
    let rec = (2 * s_dim + a_dim + 1) * 4 + 1;
    for i in 0..n {
        let base = pos + i * rec;
        let f32_at = |off: usize| -> Result<f32> {
            Ok(f32::from_le_bytes(
                bytes
                    .get(base + off * 4..base + off * 4 + 4)
                    .ok_or_else(|| Error::Checkpoint("truncated buffer file".into()))?
                    .try_into()
                    .unwrap(),
            ))
        };
        let mut s = Vec::with_capacity(s_dim);
        let mut a = Vec::with_capacity(a_dim);
        let mut s_next = Vec::with_capacity(s_dim);
        for d in 0..s_dim {
            s.push(f32_at(d)?);
        }
        for d in 0..a_dim {
            a.push(f32_at(s_dim + d)?);
        }
        let r = f32_at(s_dim + a_dim)?;
        for d in 0..s_dim {
            s_next.push(f32_at(s_dim + a_dim + 1 + d)?);
        }
        let done = bytes
            .get(base + rec - 1)
            .copied()
            .ok_or_else(|| Error::Checkpoint("truncated buffer file".into()))?
            != 0;
        buf.push(Transition { s, a, r, s_next, done });
    }
    Ok(buf)
}

/// Write a complete, bit-exact checkpoint: parameter blobs with JSON
/// sidecars, the replay buffer, and a manifest carrying optimizer state, RNG
/// state and counters.
pub fn save_checkpoint(state: &TrainState, env: &dyn Env, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    state.policy.net.save(dir, "policy")?;
    for (i, c) in state.q.online().iter().enumerate() {
        c.save(dir, &format!("critic{i}"))?;
    }
    for (i, c) in state.q.target().iter().enumerate() {
        c.save(dir, &format!("target{i}"))?;
    }
    write_buffer(&dir.join("buffer.bin"), &state.buffer)?;
    let manifest = CheckpointManifest {
        config: state.config.clone(),
        config_hash: crate::report::config_hash(&state.config)?,
        iteration: state.iter,
        env_steps: state.env_steps,
        episode_steps: state.episode_steps,
        last_obs: state.last_obs.clone(),
        env_state: env.state_vec(),
        rng: state.rng.clone(),
        ema: state.ema,
        lambda: state.lambda,
        sigma_explore: state.policy.sigma_explore,
        policy_opt: state.policy_opt.clone(),
        critic_opts: state.critic_opts.clone(),
        last_q_loss: state.last_q_loss,
        last_policy_loss: state.last_policy_loss,
        version: format!("rsm {}", env!("CARGO_PKG_VERSION")),
    };
    crate::report::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Restore a checkpoint and its environment; continuing the run reproduces
/// an uninterrupted one bit for bit.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainState, Box<dyn Env>)> {
    let manifest_path = dir.join("manifest.json");
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let m: CheckpointManifest = serde_json::from_reader(file)
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    let net = ScoreNet::<f32>::load(dir, "policy")?;
    let mut online = Vec::new();
    let mut target = Vec::new();
    for i in 0..m.config.critics {
        online.push(crate::net::Mlp::<f32>::load(dir, &format!("critic{i}"))?);
        target.push(crate::net::Mlp::<f32>::load(dir, &format!("target{i}"))?);
    }
    let mut env = make_env(&m.config.env)?;
    env.set_state_vec(&m.env_state);
    let spec = env.spec().clone();
    let q = QEnsemble::from_parts(online, target, spec.state_dim, spec.action_dim);
    let policy = DiffusionPolicy {
        net,
        sched: m.config.noise_schedule()?,
        action_low: spec.action_low.iter().map(|&v| v as f32).collect(),
        action_high: spec.action_high.iter().map(|&v| v as f32).collect(),
        sigma_explore: m.sigma_explore,
    };
    let buffer = read_buffer(&dir.join("buffer.bin"))?;
    let state = TrainState {
        config: m.config,
        policy,
        q,
        policy_opt: m.policy_opt,
        critic_opts: m.critic_opts,
        ema: m.ema,
        lambda: m.lambda,
        buffer,
        iter: m.iteration,
        env_steps: m.env_steps,
        episode_steps: m.episode_steps,
        last_obs: m.last_obs,
        rng: m.rng,
        last_q_loss: m.last_q_loss,
        last_policy_loss: m.last_policy_loss,
    };
    Ok((state, env))
}

// ---------------------------------------------------------------------------
// End-to-end driver (shared by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

pub struct TrainOutcome {
    pub state: TrainState,
    pub final_eval: EvalResult,
}

/// Run a training loop to completion. When `out_dir` is given, appends one
/// metrics row per evaluation and writes the final checkpoint and manifest
/// there.
pub fn run_training(config: TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut env = make_env(&config.env)?;
    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let manifest = RunManifest::new(&config, config.seed)?;
            crate::report::write_json(&dir.join("manifest.json"), &manifest)?;
            Some(MetricsCsv::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let mut state = init_state(config, env.as_mut())?;
    let mut eval_env = make_env(&state.config.env)?;
    let mut last_eval = EvalResult { mean_return: 0.0, std_return: 0.0 };
    log_info(format!(
        "training {} on {} for {} iterations (seed {})",
        state.config.algorithm, state.config.env, state.config.total_iters, state.config.seed
    ));
    for i in 0..state.config.total_iters {
        train_iter(&mut state, env.as_mut())?;
        let is_last = i + 1 == state.config.total_iters;
        if (i + 1) % state.config.eval_every == 0 || is_last {
            last_eval = evaluate_policy(
                &state,
                eval_env.as_mut(),
                state.config.eval_episodes,
                eval_seed(state.config.seed, (i + 1) as u64),
            )?;
            log_debug(format!(
                "iter {} return {:.2} +- {:.2} q_loss {:.4} lambda {:.3}",
                i + 1,
                last_eval.mean_return,
                last_eval.std_return,
                state.last_q_loss,
                state.lambda
            ));
            if let Some(m) = metrics.as_mut() {
                m.append(&MetricsRow {
                    iter: i + 1,
                    env_steps: state.env_steps,
                    mean_return: last_eval.mean_return,
                    std_return: last_eval.std_return,
                    q_loss: state.last_q_loss,
                    policy_loss: state.last_policy_loss,
                    lambda: state.lambda,
                    sigma_explore: state.policy.sigma_explore,
                })?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&state, env.as_ref(), &dir.join("checkpoint"))?;
    }
    Ok(TrainOutcome { state, final_eval: last_eval })
}
