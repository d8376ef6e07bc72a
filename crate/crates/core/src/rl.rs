//! Off-policy RL infrastructure: transitions, replay buffer, twin critics
//! with Bellman losses, the diffusion behaviour policy with batch action
//! selection, and exploration-noise tuning.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{reverse_sample, NoiseSchedule};
use crate::error::Error;
use crate::net::{Activation, Mlp, MlpSpec, ScoreModel, ScoreNet};
use crate::Result;

/// One environment transition. `done` is true only at genuine terminals;
/// time-limit truncations are stored with `done = false` so bootstrapping
/// stays correct.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs positive capacity");
        Self { capacity, data: Vec::new(), head: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// Uniform indices over current contents.
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.data.len())).collect()
    }
}

// ---------------------------------------------------------------------------
// Critics
// ---------------------------------------------------------------------------

/// One or two Q critics with lagged target copies. Inputs are `[s, a]`.
#[derive(Debug, Clone)]
pub struct QEnsemble {
    online: Vec<Mlp<f32>>,
    target: Vec<Mlp<f32>>,
    state_dim: usize,
    action_dim: usize,
}

impl QEnsemble {
    pub fn init(
        state_dim: usize,
        action_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        activation: Activation,
        n_critics: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(1..=2).contains(&n_critics) {
            return Err(Error::invalid("critics must be 1 or 2"));
        }
        let spec = MlpSpec::new(state_dim + action_dim, 1)
            .with_hidden(hidden_layers, hidden_width)
            .with_activation(activation);
        let online: Vec<Mlp<f32>> = (0..n_critics)
            .map(|_| Mlp::init(spec.clone(), false, rng))
            .collect::<Result<_>>()?;
        let target = online.clone();
        Ok(Self { online, target, state_dim, action_dim })
    }

    pub fn from_parts(
        online: Vec<Mlp<f32>>,
        target: Vec<Mlp<f32>>,
        state_dim: usize,
        action_dim: usize,
    ) -> Self {
        Self { online, target, state_dim, action_dim }
    }

    pub fn n_critics(&self) -> usize {
        self.online.len()
    }

    pub fn online(&self) -> &[Mlp<f32>] {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut [Mlp<f32>] {
        &mut self.online
    }

    pub fn target(&self) -> &[Mlp<f32>] {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut [Mlp<f32>] {
        &mut self.target
    }

    pub fn swap_critics(&mut self) {
        self.online.swap(0, 1);
        self.target.swap(0, 1);
    }

    fn input(&self, s: &[f32], a: &[f32]) -> Vec<f32> {
        debug_assert_eq!(s.len(), self.state_dim);
        debug_assert_eq!(a.len(), self.action_dim);
        let mut v = Vec::with_capacity(s.len() + a.len());
        v.extend_from_slice(s);
        v.extend_from_slice(a);
        v
    }

    pub fn q_min_online(&self, s: &[f32], a: &[f32]) -> f32 {
        let x = self.input(s, a);
        self.online.iter().map(|c| c.forward(&x)[0]).fold(f32::INFINITY, f32::min)
    }

    pub fn q_min_target(&self, s: &[f32], a: &[f32]) -> f32 {
        let x = self.input(s, a);
        self.target.iter().map(|c| c.forward(&x)[0]).fold(f32::INFINITY, f32::min)
    }

    /// `target <- (1 - tau) target + tau * online` on every critic.
    pub fn polyak(&mut self, tau: f64) -> Result<()> {
        for (o, t) in self.online.iter().zip(self.target.iter_mut()) {
            polyak_update(o.params(), t.params_mut(), tau)?;
        }
        Ok(())
    }
}

/// Elementwise Polyak average toward the online parameters.
pub fn polyak_update(online: &[f32], target: &mut [f32], tau: f64) -> Result<()> {
    if online.len() != target.len() {
        return Err(Error::invalid(format!(
            "polyak shape mismatch: {} vs {}",
            online.len(),
            target.len()
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must be in (0, 1]: {tau}")));
    }
    let t = tau as f32;
    for (tg, &on) in target.iter_mut().zip(online) {
        *tg = (1.0 - t) * *tg + t * on;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bellman losses
// ---------------------------------------------------------------------------

/// Shared Bellman residual. The target per transition is
/// `r + gamma (1 - done) (min_target_Q(s', a') - lambda log_pi(a'|s'))`,
/// with `(a', log_pi)` produced by `next_action`. Targets are constants:
/// no gradient flows into the target networks. Returns the summed critic
/// loss and one gradient per online critic.
fn bellman_loss(
    q: &QEnsemble,
    batch: &[Transition],
    gamma: f64,
    lambda: f64,
    next_action: &mut dyn FnMut(&[f32], &mut ChaCha8Rng) -> (Vec<f32>, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f32>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = batch.len() as f64;
    let mut targets = Vec::with_capacity(batch.len());
    for tr in batch {
        let boot = if tr.done {
            0.0
        } else {
            let (a_next, logp) = next_action(&tr.s_next, rng);
            let qmin = q.q_min_target(&tr.s_next, &a_next) as f64;
            gamma * (qmin - lambda * logp)
        };
        targets.push(tr.r as f64 + boot);
    }
    let mut loss = 0.0f64;
    let mut grads = vec![vec![0.0f32; q.online[0].n_params()]; q.n_critics()];
    for (critic, grad) in q.online.iter().zip(grads.iter_mut()) {
        for (tr, &target) in batch.iter().zip(&targets) {
            let x = q.input(&tr.s, &tr.a);
            let (out, cache) = critic.forward_cached(&x);
            let res = out[0] as f64 - target;
            loss += res * res / b;
            critic.backward(&cache, &[(2.0 * res / b) as f32], grad);
        }
    }
    Ok((loss, grads))
}

/// Standard Bellman residual (no entropy term); `a'` is a plain reverse-
/// diffusion sample from the policy at `s'`.
pub fn q_loss_standard(
    q: &QEnsemble,
    batch: &[Transition],
    gamma: f64,
    next_action: &mut dyn FnMut(&[f32], &mut ChaCha8Rng) -> Vec<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut wrap = |s: &[f32], rng: &mut ChaCha8Rng| (next_action(s, rng), 0.0);
    bellman_loss(q, batch, gamma, 0.0, &mut wrap, rng)
}

/// Soft Bellman residual: the `-lambda log_pi` entropy bonus rides on the
/// next-state action inside the discounted bootstrap term, matching the soft
/// value definition `V(s) = E[Q(s,a) - lambda log_pi(a|s)]`.
pub fn q_loss_soft(
    q: &QEnsemble,
    batch: &[Transition],
    gamma: f64,
    lambda: f64,
    next_action_logp: &mut dyn FnMut(&[f32], &mut ChaCha8Rng) -> (Vec<f32>, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f32>>)> {
    bellman_loss(q, batch, gamma, lambda, next_action_logp, rng)
}

// ---------------------------------------------------------------------------
// Diffusion behaviour policy
// ---------------------------------------------------------------------------

/// Score-network policy: actions are drawn by the reverse diffusion chain
/// conditioned on the state, clipped to the action box. Exploration adds a
/// tunable Gaussian on top.
pub struct DiffusionPolicy {
    pub net: ScoreNet<f32>,
    pub sched: NoiseSchedule,
    pub action_low: Vec<f32>,
    pub action_high: Vec<f32>,
    pub sigma_explore: f64,
}

impl DiffusionPolicy {
    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn clip(&self, a: &mut [f32]) {
        for (v, (&lo, &hi)) in a.iter_mut().zip(self.action_low.iter().zip(&self.action_high)) {
            *v = v.clamp(lo, hi);
        }
    }

    /// One unclipped reverse-chain draw conditioned on `s`.
    pub fn sample_raw(&self, s: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
        let d = self.action_dim();
        let mut out = reverse_sample(
            &self.sched,
            |x: &[f32], t| self.net.eval(x, Some(s), t),
            rng,
            1,
            d,
        )?;
        Ok(out.pop().expect("one sample requested"))
    }

    /// Reverse-chain draw clipped to the action box.
    pub fn sample_clipped(&self, s: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
        let mut a = self.sample_raw(s, rng)?;
        self.clip(&mut a);
        Ok(a)
    }

    /// Behaviour draw for soft policy evaluation: clipped reverse sample plus
    /// exploration noise, together with the additive-Gaussian log-density of
    /// the final action around the pre-noise sample.
    pub fn sample_with_noise_logp(
        &self,
        s: &[f32],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f32>, f64)> {
        let mean = self.sample_clipped(s, rng)?;
        let mut a = mean.clone();
        for v in a.iter_mut() {
            *v += (self.sigma_explore * rng.sample::<f64, _>(StandardNormal)) as f32;
        }
        self.clip(&mut a);
        let logp = gaussian_logp(&a, &mean, self.sigma_explore);
        Ok((a, logp))
    }
}

/// Log-density of `N(mean, sigma^2 I)` at `x`. At `x == mean` this is
/// `-(d/2) ln(2 pi sigma^2)`.
pub fn gaussian_logp(x: &[f32], mean: &[f32], sigma: f64) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0f64;
    for (&xi, &mi) in x.iter().zip(mean) {
        let z = (xi as f64 - mi as f64) / sigma;
        quad += z * z;
    }
    -0.5 * quad - 0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

/// Batch action selection: draw `m` clipped candidates from the reverse
/// chain, pick the argmax of `q_min` (ties broken by the lowest candidate
/// index), then optionally add exploration noise and clip again.
pub fn select_action(
    policy: &DiffusionPolicy,
    q_min: &mut dyn FnMut(&[f32], &[f32]) -> f32,
    s: &[f32],
    m: usize,
    rng: &mut ChaCha8Rng,
    explore: bool,
) -> Result<Vec<f32>> {
    if m == 0 {
        return Err(Error::invalid("need at least one candidate action"));
    }
    let mut best: Option<(f32, Vec<f32>)> = None;
    for _ in 0..m {
        let cand = policy.sample_clipped(s, rng)?;
        let q = q_min(s, &cand);
        match &best {
            Some((bq, _)) if q <= *bq => {}
            _ => best = Some((q, cand)),
        }
    }
    let (_, mut action) = best.expect("m >= 1");
    if explore {
        for v in action.iter_mut() {
            *v += (policy.sigma_explore * rng.sample::<f64, _>(StandardNormal)) as f32;
        }
        policy.clip(&mut action);
    }
    Ok(action)
}

// ---------------------------------------------------------------------------
// Exploration tuning
// ---------------------------------------------------------------------------

/// Entropy of `N(., sigma^2 I_d)`: `(d/2)(1 + ln 2 pi) + d ln sigma`.
pub fn gaussian_entropy(dim: usize, sigma: f64) -> f64 {
    let d = dim as f64;
    0.5 * d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + d * sigma.ln()
}

/// Gradient-free noise tuning: `ln sigma <- ln sigma - lr (H - H_target)`.
/// Contracts toward the sigma whose Gaussian entropy hits the target.
pub fn tune_exploration(sigma: f64, observed_entropy: f64, target_entropy: f64, lr: f64) -> f64 {
    (sigma.ln() - lr * (observed_entropy - target_entropy)).exp()
}

/// SAC-style default target entropy: `-dim(A)`.
pub fn default_target_entropy(action_dim: usize) -> f64 {
    -(action_dim as f64)
}
