//! Shared oracles for the integration and acceptance suites.
//!
//! Everything here is deliberately independent of the library's diffusion
//! arithmetic: quadrature oracles carry their own Gaussian formulas so they
//! can catch sign or scaling mistakes in the implementation they check.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rsm::diffusion::NoiseSchedule;
use rsm::env::{Env, PendulumEnv};
use rsm::net::ScoreModel;
use rsm::real::Real;

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// Normalize an unnormalized log-density on a grid; returns density values.
pub fn normalized_density(grid: &[f64], log_unnorm: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let logs: Vec<f64> = grid.iter().map(|&x| log_unnorm(x)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let z = trapezoid(grid, &dens);
    dens.into_iter().map(|d| d / z).collect()
}

/// Quadrature oracle for the noise-perturbed score of a 1D density:
/// `s_t(x) = d/dx log int N(x; sqrt(ab) a, 1 - ab) p0(a) da`, evaluated with
/// this module's own Gaussian kernel formulas.
pub struct NoisyScoreOracle {
    grid: Vec<f64>,
    p0: Vec<f64>,
}

impl NoisyScoreOracle {
    pub fn new(lo: f64, hi: f64, n: usize, log_p0: &dyn Fn(f64) -> f64) -> Self {
        let grid = linspace(lo, hi, n);
        let p0 = normalized_density(&grid, log_p0);
        Self { grid, p0 }
    }

    /// Marginal density of `x_t` at level `alpha_bar`.
    pub fn density_t(&self, x: f64, alpha_bar: f64) -> f64 {
        let sa = alpha_bar.sqrt();
        let var = 1.0 - alpha_bar;
        let vals: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.p0)
            .map(|(&a, &p)| {
                let z = x - sa * a;
                (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt() * p
            })
            .collect();
        trapezoid(&self.grid, &vals)
    }

    /// Noisy score via the kernel-gradient identity:
    /// numerator `int dN/dx * p0`, denominator `int N * p0`.
    pub fn score_t(&self, x: f64, alpha_bar: f64) -> f64 {
        let sa = alpha_bar.sqrt();
        let var = 1.0 - alpha_bar;
        let mut num = Vec::with_capacity(self.grid.len());
        let mut den = Vec::with_capacity(self.grid.len());
        for (&a, &p) in self.grid.iter().zip(&self.p0) {
            let z = x - sa * a;
            let kern = (-0.5 * z * z / var).exp();
            den.push(kern * p);
            num.push(kern * (-(z) / var) * p);
        }
        trapezoid(&self.grid, &num) / trapezoid(&self.grid, &den)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }
}

// ---------------------------------------------------------------------------
// Tabulated 1D score model (piecewise constant in x, separate table per t)
// ---------------------------------------------------------------------------

pub struct TabularScore {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub t_max: usize,
    /// Row-major `[t-1][bin]`.
    pub table: Vec<f64>,
}

impl TabularScore {
    pub fn new(lo: f64, hi: f64, bins: usize, t_max: usize) -> Self {
        Self { lo, hi, bins, t_max, table: vec![0.0; bins * t_max] }
    }

    pub fn bin(&self, x: f64) -> usize {
        let f = (x - self.lo) / (self.hi - self.lo);
        ((f * self.bins as f64) as isize).clamp(0, self.bins as isize - 1) as usize
    }

    pub fn idx(&self, t: usize, bin: usize) -> usize {
        (t - 1) * self.bins + bin
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|b| self.lo + (self.hi - self.lo) * (b as f64 + 0.5) / self.bins as f64)
            .collect()
    }
}

impl ScoreModel<f64> for TabularScore {
    fn action_dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        self.table.len()
    }

    fn params(&self) -> &[f64] {
        &self.table
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    fn eval(&self, a_t: &[f64], _s: Option<&[f64]>, t: usize) -> Vec<f64> {
        vec![self.table[self.idx(t, self.bin(a_t[0]))]]
    }

    fn eval_backward(
        &self,
        a_t: &[f64],
        s: Option<&[f64]>,
        t: usize,
        dout: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let out = self.eval(a_t, s, t);
        let d = dout(&out);
        grad[self.idx(t, self.bin(a_t[0]))] += d[0];
        out
    }
}

// ---------------------------------------------------------------------------
// Scripted pendulum controller (energy shaping + PD catch)
// ---------------------------------------------------------------------------

/// Energy-shaping swing-up with a gravity-compensating PD catch near the top.
/// Written against the environment's published dynamics only.
pub fn pendulum_controller(theta: f64, theta_dot: f64) -> f64 {
    let e = 0.5 * theta_dot * theta_dot + 15.0 * theta.cos();
    let e_top = 15.0;
    if theta.abs() < 0.35 && theta_dot.abs() < 3.0 {
        // PD with gravity compensation: accel = -kp th - kd thdot - 15 sin th.
        ((-40.0 * theta - 12.0 * theta_dot - 15.0 * theta.sin()) / 3.0).clamp(-2.0, 2.0)
    } else {
        // Pump or dump energy: dE/dt = 3 u thdot.
        let dir = if theta_dot >= 0.0 { 1.0 } else { -1.0 };
        (2.0 * (e_top - e).signum() * dir).clamp(-2.0, 2.0)
    }
}

/// Mean return of the scripted controller over seeded episodes.
pub fn pendulum_controller_return(episodes: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut env = PendulumEnv::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(&mut rng);
        let mut ep = 0.0;
        for _ in 0..env.spec().max_episode_steps {
            let (theta, theta_dot) = env.angles();
            let u = pendulum_controller(theta, theta_dot);
            let (_, r) = env.step(&[u]);
            ep += r;
        }
        total += ep;
    }
    total / episodes as f64
}

/// Mean return of uniform random actions over seeded episodes.
pub fn random_policy_return(env: &mut dyn Env, episodes: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = env.spec().clone();
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(&mut rng);
        let mut ep = 0.0;
        for _ in 0..spec.max_episode_steps {
            let a: Vec<f64> = (0..spec.action_dim)
                .map(|i| rng.random_range(spec.action_low[i]..spec.action_high[i]))
                .collect();
            let (_, r) = env.step(&a);
            ep += r;
        }
        total += ep;
    }
    total / episodes as f64
}

// ---------------------------------------------------------------------------
// Point-mass shooting oracle: direct trajectory optimization over the
// 200 x 2 action variables with numerical gradients.
// ---------------------------------------------------------------------------

fn pointmass_rollout_return(actions: &[f64], start: &[f64; 2]) -> f64 {
    let mut env = rsm::env::PointMassEnv::new();
    env.set_state_vec(&[start[0], start[1], 0.0, 0.0]);
    let mut total = 0.0;
    for a in actions.chunks(2) {
        let (_, r) = env.step(a);
        total += r;
    }
    total
}

/// Locally optimal return from `start` by gradient ascent (central
/// differences) on the full action sequence.
pub fn pointmass_shooting_return(start: [f64; 2], iters: usize) -> f64 {
    let steps = 200;
    let mut actions = vec![0.0f64; steps * 2];
    // Warm start: accelerate straight toward the nearer well.
    let well = if start[0] + start[1] >= 0.0 { [0.7, 0.7] } else { [-0.7, -0.7] };
    for k in 0..steps {
        let frac = k as f64 / steps as f64;
        let scale = if frac < 0.25 { 1.0 } else { 0.0 };
        actions[2 * k] = scale * (well[0] - start[0]).signum();
        actions[2 * k + 1] = scale * (well[1] - start[1]).signum();
    }
    let h = 1e-4;
    let lr = 0.05;
    for _ in 0..iters {
        let mut grad = vec![0.0f64; actions.len()];
        for i in 0..actions.len() {
            let orig = actions[i];
            actions[i] = (orig + h).clamp(-1.0, 1.0);
            let fp = pointmass_rollout_return(&actions, &start);
            actions[i] = (orig - h).clamp(-1.0, 1.0);
            let fm = pointmass_rollout_return(&actions, &start);
            actions[i] = orig;
            grad[i] = (fp - fm) / (2.0 * h);
        }
        for (a, g) in actions.iter_mut().zip(&grad) {
            *a = (*a + lr * g).clamp(-1.0, 1.0);
        }
    }
    pointmass_rollout_return(&actions, &start)
}

// ---------------------------------------------------------------------------
// Gaussian-closure recursion: exact law of the reverse chain driven by the
// analytic noisy score of a 1D Gaussian target.
// ---------------------------------------------------------------------------

/// For `p0 = N(mu, sigma^2)`, iterate the affine reverse dynamics and return
/// the exact `(mean, var)` of the chain output started from `N(0, 1)`.
pub fn gaussian_chain_law(sched: &NoiseSchedule, mu: f64, sigma2: f64) -> (f64, f64) {
    let mut mean = 0.0f64;
    let mut var = 1.0f64;
    for t in (1..=sched.len()).rev() {
        let ab = sched.alpha_bar(t);
        let beta = sched.beta(t);
        let alpha = 1.0 - beta;
        let vt = ab * sigma2 + 1.0 - ab; // marginal variance of p_t
        let mt = ab.sqrt() * mu;
        // x' = (x + beta * (-(x - mt)/vt)) / sqrt(alpha) + sigma_t z
        let a = (1.0 - beta / vt) / alpha.sqrt();
        let b = beta * mt / vt / alpha.sqrt();
        let s2 = if t == 1 { 0.0 } else { beta };
        mean = a * mean + b;
        var = a * a * var + s2;
    }
    (mean, var)
}

/// Analytic noisy score of a 1D Gaussian target, exposed generically so both
/// `f32` and `f64` chains can consume it.
pub fn gaussian_noisy_score<F: Real>(x: F, alpha_bar: f64, mu: f64, sigma2: f64) -> F {
    let vt = alpha_bar * sigma2 + 1.0 - alpha_bar;
    let mt = alpha_bar.sqrt() * mu;
    F::c(-(x.f64() - mt) / vt)
}

// ---------------------------------------------------------------------------
// Misc statistics
// ---------------------------------------------------------------------------

pub fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
