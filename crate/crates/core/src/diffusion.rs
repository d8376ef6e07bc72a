//! Noise schedules, the forward perturbation kernel, the reverse (denoising)
//! sampler, and the reverse-sampling distribution `phi_{0|t}`.
//!
//! All randomness is injected by the caller: every operation that needs noise
//! takes either an explicit standard-normal draw or an `&mut impl Rng`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::real::Real;
use crate::Result;

/// Per-step variances `beta_t` and cumulative products `alpha_bar_t` for
/// `t = 1..=T`. Schedules are always built and stored in `f64`; consumers cast
/// the per-step coefficients to their working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule with inclusive endpoints: `beta_1 = start`,
    /// `beta_T = end`. With `t_steps == 1` the single entry is `start`.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "betas must lie in (0,1): start={beta_start}, end={beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::invalid(format!(
                "beta_start={beta_start} exceeds beta_end={beta_end}"
            )));
        }
        let beta: Vec<f64> = if t_steps == 1 {
            vec![beta_start]
        } else {
            (0..t_steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
                })
                .collect()
        };
        Ok(Self::from_betas(beta))
    }

    /// Cosine schedule: `f(t) = cos(((t/T + s)/(1 + s)) * pi/2)^2`,
    /// `alpha_bar_t = f(t)/f(0)`, `beta_t = 1 - alpha_bar_t/alpha_bar_{t-1}`.
    /// `beta_t` is clamped to at most 0.999 so `1 - beta_t` stays positive
    /// near `t = T`; `alpha_bar` is accumulated from the clamped betas so the
    /// reconstruction invariant holds exactly.
    pub fn cosine(t_steps: usize, s: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if s <= 0.0 {
            return Err(Error::invalid(format!("cosine offset must be positive: s={s}")));
        }
        let f = |t: f64| {
            let arg = (t / t_steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
            arg.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut beta = Vec::with_capacity(t_steps);
        let mut prev = 1.0;
        for t in 1..=t_steps {
            let ab = f(t as f64) / f0;
            let b = (1.0 - ab / prev).clamp(0.0, 0.999);
            beta.push(b);
            prev *= 1.0 - b;
        }
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Self { beta, alpha_bar }
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `beta_t` for `t in 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `alpha_bar_t` for `t in 1..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `alpha_bar_{t-1}` with the convention `alpha_bar_0 := 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// Reverse-step noise standard deviation, the variance-matching choice
    /// `sigma_t = sqrt(beta_t)`. Zero at `t = 1`: the final step is
    /// deterministic. The posterior-variance alternative
    /// `sqrt(((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)) beta_t)`
    /// under-disperses chains badly at desk-scale step counts; with
    /// `sigma_t = sqrt(beta_t)` the reverse chain driven by the exact noisy
    /// score reproduces a unit-variance Gaussian target exactly at any `T`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            self.beta(t).sqrt()
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            Err(Error::TimeOutOfRange { t, t_max: self.len() })
        } else {
            Ok(())
        }
    }
}

/// A point of the diffusion chain: sample `x` at schedule index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState<F: Real> {
    pub x: Vec<F>,
    pub t: usize,
}

/// Draw a standard-normal vector. Draws are made in `f64` and cast, so the
/// consumed RNG stream is identical across precisions.
pub fn normal_vec<F: Real, R: Rng>(rng: &mut R, d: usize) -> Vec<F> {
    (0..d).map(|_| F::c(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Forward perturbation `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`,
/// a draw from `q_{t|0}(. | x_0)` when `eps` is standard normal.
pub fn forward_perturb<F: Real>(
    sched: &NoiseSchedule,
    x0: &[F],
    t: usize,
    eps: &[F],
) -> Result<Vec<F>> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (ca, ce) = (F::c(ab.sqrt()), F::c((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| ca * x + ce * e).collect())
}

/// Score of the forward kernel:
/// `grad_{x_t} log q_{t|0}(x_t | x_0) = -(x_t - sqrt(alpha_bar_t) x_0) / (1 - alpha_bar_t)`.
pub fn forward_score<F: Real>(
    sched: &NoiseSchedule,
    x0: &[F],
    xt: &[F],
    t: usize,
) -> Result<Vec<F>> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (ca, inv) = (F::c(ab.sqrt()), F::c(1.0 / (1.0 - ab)));
    Ok(xt.iter().zip(x0).map(|(&x, &x0)| -(x - ca * x0) * inv).collect())
}

/// Draw from the reverse-sampling distribution
/// `phi_{0|t}(. | x_t) = N(x_t / sqrt(alpha_bar_t), ((1 - alpha_bar_t)/alpha_bar_t) I)`.
pub fn phi_sample<F: Real>(
    sched: &NoiseSchedule,
    xt: &[F],
    t: usize,
    eps: &[F],
) -> Result<Vec<F>> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (cm, cs) = (F::c(1.0 / ab.sqrt()), F::c(((1.0 - ab) / ab).sqrt()));
    Ok(xt.iter().zip(eps).map(|(&x, &e)| cm * x + cs * e).collect())
}

/// Score of `phi_{0|t}` in `x_t`. The densities of `q_{t|0}` and `phi_{0|t}`
/// differ only by a constant, so this is the same closed form as
/// [`forward_score`] with `x0 := x0_tilde`; the delegation makes the two
/// bitwise equal.
pub fn phi_score<F: Real>(
    sched: &NoiseSchedule,
    xt: &[F],
    x0_tilde: &[F],
    t: usize,
) -> Result<Vec<F>> {
    forward_score(sched, x0_tilde, xt, t)
}

/// One reverse step
/// `x_{t-1} = (x_t + beta_t * score) / sqrt(alpha_t) + sigma_t * z`.
/// At `t = 1` the noise is forced to zero (`sigma_1 = 0` already by the
/// `alpha_bar_0 := 1` convention; `z` is ignored entirely).
pub fn reverse_step<F: Real>(
    sched: &NoiseSchedule,
    score: &[F],
    xt: &[F],
    t: usize,
    z: &[F],
) -> Result<Vec<F>> {
    sched.check_t(t)?;
    let beta = sched.beta(t);
    let inv_sqrt_alpha = F::c(1.0 / (1.0 - beta).sqrt());
    let b = F::c(beta);
    let sigma = if t == 1 { F::zero() } else { F::c(sched.sigma(t)) };
    Ok(xt
        .iter()
        .zip(score)
        .zip(z)
        .map(|((&x, &s), &zi)| inv_sqrt_alpha * (x + b * s) + sigma * zi)
        .collect())
}

/// Run the full reverse chain `t = T, T-1, ..., 1` for `n` independent
/// samples of dimension `d`, starting from `x_T ~ N(0, I)`.
///
/// `score_fn(x, t)` evaluates the score model. A non-finite score output
/// aborts with the offending step index.
pub fn reverse_sample<F: Real, R: Rng>(
    sched: &NoiseSchedule,
    mut score_fn: impl FnMut(&[F], usize) -> Vec<F>,
    rng: &mut R,
    n: usize,
    d: usize,
) -> Result<Vec<Vec<F>>> {
    let mut out = Vec::with_capacity(n);
    let zero = vec![F::zero(); d];
    for _ in 0..n {
        let mut x: Vec<F> = normal_vec(rng, d);
        for t in (1..=sched.len()).rev() {
            let score = score_fn(&x, t);
            if score.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "score output at reverse step t={t}"
                )));
            }
            let z = if t > 1 { normal_vec(rng, d) } else { zero.clone() };
            x = reverse_step(sched, &score, &x, t, &z)?;
        }
        out.push(x);
    }
    Ok(out)
}
