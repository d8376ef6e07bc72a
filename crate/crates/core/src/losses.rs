//! Score-matching objectives.
//!
//! Four losses share one skeleton — a weighted squared residual between the
//! score model and an analytic Gaussian-kernel score:
//!
//! - [`dsm_loss`]: denoising score matching on data samples, weighted by
//!   `(1 - alpha_bar_t)`.
//! - [`dpmd_loss`]: mirror-descent reweighting `exp(Qbar/lambda)` on samples
//!   from the current policy.
//! - [`sdac_loss`]: softmax (max-entropy) reweighting with the reverse
//!   sampling trick — `a_t` from a chosen sampling distribution `h`, `K`
//!   candidate `a0~phi_{0|t}` draws, logsumexp-normalized weights.
//! - [`rsm_energy_loss`]: the Boltzmann-sampler variant of the softmax loss,
//!   with `log p0` logits instead of `Q/lambda`.
//!
//! Every loss returns `(value, parameter gradient)`. Exponential weights are
//! treated as constants: no gradient flows through them. Each loss draws `t`
//! uniformly from `{1..T}` per example and consumes its RNG in a documented
//! order (`t`, then noise draws), which tests exploit to share draws across
//! losses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{forward_perturb, forward_score, normal_vec, phi_sample, phi_score, NoiseSchedule};
use crate::error::Error;
use crate::net::ScoreModel;
use crate::real::Real;
use crate::Result;

/// Which reweighting a training loop applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// `exp(Qbar/lambda)` weights on policy samples (DPMD).
    MirrorDescent { lambda: f64 },
    /// Softmax weights over `k` reverse-sampled candidates (SDAC).
    MaxEnt { lambda: f64, k: usize },
    /// Softmax weights with raw energy logits (Boltzmann toy).
    EnergyDirect { k: usize },
}

impl WeightMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightMode::MirrorDescent { lambda } => {
                if lambda <= 0.0 {
                    return Err(Error::invalid("lambda must be positive"));
                }
            }
            WeightMode::MaxEnt { lambda, k } => {
                if lambda <= 0.0 {
                    return Err(Error::invalid("lambda must be positive"));
                }
                if k < 2 {
                    return Err(Error::invalid("logsumexp weights need k >= 2 samples"));
                }
            }
            WeightMode::EnergyDirect { k } => {
                if k < 2 {
                    return Err(Error::invalid("logsumexp weights need k >= 2 samples"));
                }
            }
        }
        Ok(())
    }
}

/// Exponential moving average of the critic's batch mean and standard
/// deviation, used to standardize `Q` before exponentiation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EmaStats {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

pub const EMA_SIGMA_FLOOR: f64 = 1e-6;

impl EmaStats {
    /// Algorithm start values: `mu = 0`, `sigma = 1`.
    pub fn new(xi: f64) -> Self {
        Self { mu: 0.0, sigma: 1.0, xi }
    }

    /// The identity standardization (raw weights).
    pub fn identity() -> Self {
        Self { mu: 0.0, sigma: 1.0, xi: 1.0 }
    }

    /// `mu <- (1-xi) mu + xi mean(q)`, `sigma <- (1-xi) sigma + xi std(q)`,
    /// with `sigma` floored at `1e-6`. `std` is the population deviation.
    pub fn update(&mut self, batch_q: &[f64]) {
        if batch_q.is_empty() {
            return;
        }
        let n = batch_q.len() as f64;
        let mean = batch_q.iter().sum::<f64>() / n;
        let var = batch_q.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
        self.mu = (1.0 - self.xi) * self.mu + self.xi * mean;
        self.sigma = ((1.0 - self.xi) * self.sigma + self.xi * var.sqrt()).max(EMA_SIGMA_FLOOR);
    }

    pub fn standardize(&self, q: f64) -> f64 {
        (q - self.mu) / self.sigma.max(EMA_SIGMA_FLOOR)
    }
}

fn term_weight(sched: &NoiseSchedule, t: usize, alpha_bar_weight: bool) -> f64 {
    if alpha_bar_weight {
        1.0 - sched.alpha_bar(t)
    } else {
        1.0
    }
}

fn squared_norm<F: Real>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).f64().powi(2)).sum()
}

// ---------------------------------------------------------------------------
// Denoising score matching
// ---------------------------------------------------------------------------

/// DSM on explicit `(x0, t, eps)` triples. [`dsm_loss`] draws the triples;
/// this deterministic core makes permutation and pairing properties testable.
pub fn dsm_loss_paired<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    triples: &[(Vec<F>, usize, Vec<F>)],
    cond_s: Option<&[Vec<F>]>,
    alpha_bar_weight: bool,
) -> Result<(F, Vec<F>)> {
    if triples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = triples.len() as f64;
    let mut grad = vec![F::zero(); net.n_params()];
    let mut loss = 0.0f64;
    for (i, (x0, t, eps)) in triples.iter().enumerate() {
        let s = cond_s.map(|c| c[i].as_slice());
        let xt = forward_perturb(sched, x0, *t, eps)?;
        let target = forward_score(sched, x0, &xt, *t)?;
        let w = term_weight(sched, *t, alpha_bar_weight);
        let scale = F::c(2.0 * w / b);
        net.eval_backward(
            &xt,
            s,
            *t,
            &mut |out: &[F]| {
                loss += w * squared_norm(out, &target) / b;
                out.iter().zip(&target).map(|(&o, &tg)| scale * (o - tg)).collect()
            },
            &mut grad,
        );
    }
    Ok((F::c(loss), grad))
}

/// Denoising score matching: per example `t ~ U{1..T}`, `eps ~ N(0,I)`,
/// loss `mean (1 - alpha_bar_t) ||s(x_t; s, t) - grad log q_{t|0}(x_t|x0)||^2`.
pub fn dsm_loss<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    batch_x0: &[Vec<F>],
    cond_s: Option<&[Vec<F>]>,
    alpha_bar_weight: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Vec<F>)> {
    let triples: Vec<(Vec<F>, usize, Vec<F>)> = batch_x0
        .iter()
        .map(|x0| {
            let t = rng.random_range(1..=sched.len());
            let eps = normal_vec(rng, x0.len());
            (x0.clone(), t, eps)
        })
        .collect();
    dsm_loss_paired(net, sched, &triples, cond_s, alpha_bar_weight)
}

// ---------------------------------------------------------------------------
// Mirror-descent reweighted loss (DPMD)
// ---------------------------------------------------------------------------

/// Mirror-descent reweighted score matching. `actions0` must be drawn from
/// the current policy; the weight for each example is
/// `exp((Q(s, a0) - mu_Q) / (sigma_Q * lambda))`, excluded from gradient flow.
pub fn dpmd_loss<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    states: &[Vec<F>],
    actions0: &[Vec<F>],
    q_fn: &mut dyn FnMut(&[F], &[F]) -> f64,
    lambda: f64,
    ema: &EmaStats,
    alpha_bar_weight: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Vec<F>)> {
    if states.is_empty() || states.len() != actions0.len() {
        return Err(Error::invalid("empty or mismatched (state, action) batch"));
    }
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let b = states.len() as f64;
    let mut grad = vec![F::zero(); net.n_params()];
    let mut loss = 0.0f64;
    for (s, a0) in states.iter().zip(actions0) {
        let q = q_fn(s, a0);
        if !q.is_finite() {
            return Err(Error::NonFinite(format!(
                "Q value at state {:?}",
                s.iter().map(|v| v.f64()).collect::<Vec<_>>()
            )));
        }
        let w = (ema.standardize(q) / lambda).exp();
        let t = rng.random_range(1..=sched.len());
        let eps = normal_vec(rng, a0.len());
        let at = forward_perturb(sched, a0, t, &eps)?;
        let target = forward_score(sched, a0, &at, t)?;
        let w_total = w * term_weight(sched, t, alpha_bar_weight);
        let scale = F::c(2.0 * w_total / b);
        net.eval_backward(
            &at,
            Some(s),
            t,
            &mut |out: &[F]| {
                loss += w_total * squared_norm(out, &target) / b;
                out.iter().zip(&target).map(|(&o, &tg)| scale * (o - tg)).collect()
            },
            &mut grad,
        );
    }
    Ok((F::c(loss), grad))
}

// ---------------------------------------------------------------------------
// Softmax reweighted losses (SDAC / Boltzmann)
// ---------------------------------------------------------------------------

/// Normalized softmax weights from raw logits via the logsumexp trick.
/// Errors when the logits cannot produce a valid distribution.
fn softmax_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("softmax logit".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "degenerate softmax weights: all logits are -inf",
        ));
    }
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / denom).collect())
}

/// Shared core of the softmax-weighted losses. `logit_fn` maps a candidate
/// `a0_tilde` (and the state) to its raw logit.
fn softmax_score_loss<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    states: Option<&[Vec<F>]>,
    n_draws: usize,
    dim: usize,
    logit_fn: &mut dyn FnMut(Option<&[F]>, &[F]) -> f64,
    k: usize,
    h_sampler: &mut dyn FnMut(Option<&[F]>, usize, &mut ChaCha8Rng) -> Vec<F>,
    alpha_bar_weight: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Vec<F>)> {
    if n_draws == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if k < 2 {
        return Err(Error::invalid("logsumexp weights need k >= 2 samples"));
    }
    let b = n_draws as f64;
    let mut grad = vec![F::zero(); net.n_params()];
    let mut loss = 0.0f64;
    for i in 0..n_draws {
        let s = states.map(|ss| ss[i].as_slice());
        let t = rng.random_range(1..=sched.len());
        let at = h_sampler(s, t, rng);
        debug_assert_eq!(at.len(), dim);
        let mut cands = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for _ in 0..k {
            let eps = normal_vec(rng, dim);
            let a0 = phi_sample(sched, &at, t, &eps)?;
            logits.push(logit_fn(s, &a0));
            cands.push(a0);
        }
        let w = softmax_weights(&logits)?;
        let targets: Vec<Vec<F>> = cands
            .iter()
            .map(|a0| phi_score(sched, &at, a0, t))
            .collect::<Result<_>>()?;
        // Weighted-mean target: dL/dout = 2 aw/B (out - sum_i w_i target_i).
        let mut tbar = vec![F::zero(); dim];
        for (wi, tg) in w.iter().zip(&targets) {
            for (acc, &v) in tbar.iter_mut().zip(tg) {
                *acc += F::c(*wi) * v;
            }
        }
        let aw = term_weight(sched, t, alpha_bar_weight);
        let scale = F::c(2.0 * aw / b);
        net.eval_backward(
            &at,
            s,
            t,
            &mut |out: &[F]| {
                for (wi, tg) in w.iter().zip(&targets) {
                    loss += aw * wi * squared_norm(out, tg) / b;
                }
                out.iter().zip(&tbar).map(|(&o, &tg)| scale * (o - tg)).collect()
            },
            &mut grad,
        );
    }
    Ok((F::c(loss), grad))
}

/// Softmax (max-entropy) reweighted loss. Per state: `t ~ U{1..T}`,
/// `a_t ~ h_t`, `K` candidates `a0_tilde ~ phi_{0|t}(.|a_t)` with weights
/// `softmax_i(Q(s, a0_i)/lambda)`, residuals against
/// `grad log phi_{0|t}(a0_i | a_t)`.
pub fn sdac_loss<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    states: &[Vec<F>],
    q_fn: &mut dyn FnMut(&[F], &[F]) -> f64,
    lambda: f64,
    k: usize,
    h_sampler: &mut dyn FnMut(Option<&[F]>, usize, &mut ChaCha8Rng) -> Vec<F>,
    alpha_bar_weight: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Vec<F>)> {
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let dim = net.action_dim();
    let mut logit_fn = |s: Option<&[F]>, a0: &[F]| q_fn(s.unwrap_or(&[]), a0) / lambda;
    softmax_score_loss(
        net,
        sched,
        Some(states),
        states.len(),
        dim,
        &mut logit_fn,
        k,
        h_sampler,
        alpha_bar_weight,
        rng,
    )
}

/// How the raw exponential weights of [`rsm_energy_loss`] are stabilized.
///
/// Each mode rescales weights by a positive constant within its group, so
/// the minimizing score per `(x_t, t)` point is identical; what changes is
/// how much each sampled point counts, which matters for SGD with finite
/// batches and shared network capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyWeightNorm {
    /// Raw `p0` weights shifted by the batch-wide max logit: the loss of the
    /// appendix formulation up to one positive per-batch constant. Keeps the
    /// density-mass weighting across `x_t` points.
    BatchMax,
    /// As `BatchMax`, but the shift is the max logit within each t-slice of
    /// the batch, so no diffusion step is starved by the `alpha_bar^{d/2}`
    /// mass suppression at large `t`.
    PerTimeSlice,
    /// Softmax over the `K` candidates of each point: every `x_t` gets equal
    /// total weight. Stable, but discards the cross-point mass weighting.
    PerPoint,
}

/// Candidate proposal for the energy loss.
///
/// The loss integrates `p0(a0) phi(a0|x_t) ||s - grad log phi||^2` over
/// candidates. Drawing candidates from `phi` alone starves the diffuse steps:
/// once the `phi` ball is orders of magnitude wider than the data, no draw
/// ever lands on `p0` mass and the weights carry no signal. The defensive
/// variant draws half the candidates from a fixed data-scale Gaussian and
/// corrects the weights by exact importance sampling against the mixture, so
/// the estimated loss (and its minimizer) is unchanged while every step stays
/// informative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateProposal {
    /// Plain `a0 ~ phi_{0|t}(.|x_t)`.
    Phi,
    /// Alternating draws from `phi` and `N(0, sigma^2 I)`, importance-
    /// corrected against the balanced mixture of the two.
    Defensive { sigma: f64 },
}

fn log_gaussian(x: &[f64], mean_scale: f64, center: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0;
    for (xi, ci) in x.iter().zip(center) {
        let z = xi - mean_scale * ci;
        quad += z * z;
    }
    -0.5 * quad / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
}

/// Boltzmann-sampler variant: unconditional, with logits `log p0(a0_tilde)`
/// in place of `Q/lambda`. Weight stabilization per [`EnergyWeightNorm`];
/// every mode is a positive rescaling within its group, so the minimizing
/// score per `(x_t, t)` point is unchanged.
pub fn rsm_energy_loss<F: Real, M: ScoreModel<F>>(
    net: &M,
    sched: &NoiseSchedule,
    log_density: &dyn Fn(&[f64]) -> f64,
    h_sampler: &mut dyn FnMut(usize, &mut ChaCha8Rng) -> Vec<F>,
    batch: usize,
    k: usize,
    norm: EnergyWeightNorm,
    proposal: CandidateProposal,
    alpha_bar_weight: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Vec<F>)> {
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if k < 2 {
        return Err(Error::invalid("reverse-sampled weights need k >= 2 samples"));
    }
    let dim = net.action_dim();
    // Pass 1: draw everything and collect logits.
    struct Point<F> {
        t: usize,
        at: Vec<F>,
        cands: Vec<Vec<F>>,
        logits: Vec<f64>,
    }
    let mut points: Vec<Point<F>> = Vec::with_capacity(batch);
    for _ in 0..batch {
        let t = rng.random_range(1..=sched.len());
        let at = h_sampler(t, rng);
        let at64: Vec<f64> = at.iter().map(|v| v.f64()).collect();
        let ab = sched.alpha_bar(t);
        let phi_var = (1.0 - ab) / ab;
        let inv_sqrt_ab = 1.0 / ab.sqrt();
        let mut cands = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for i in 0..k {
            let eps = normal_vec::<F, _>(rng, dim);
            let (a0, is_correction) = match proposal {
                CandidateProposal::Phi => (phi_sample(sched, &at, t, &eps)?, 0.0),
                CandidateProposal::Defensive { sigma } => {
                    let a0 = if i % 2 == 0 {
                        phi_sample(sched, &at, t, &eps)?
                    } else {
                        eps.iter().map(|&e| F::c(sigma) * e).collect()
                    };
                    let a64: Vec<f64> = a0.iter().map(|v| v.f64()).collect();
                    let log_phi = log_gaussian(&a64, inv_sqrt_ab, &at64, phi_var);
                    let zero = vec![0.0; dim];
                    let log_data = log_gaussian(&a64, 0.0, &zero, sigma * sigma);
                    let m = log_phi.max(log_data);
                    let log_rho =
                        m + ((log_phi - m).exp() + (log_data - m).exp()).ln() - 2.0f64.ln();
                    (a0, log_phi - log_rho)
                }
            };
            let a64: Vec<f64> = a0.iter().map(|v| v.f64()).collect();
            let l = log_density(&a64) + is_correction;
            if l.is_nan() {
                return Err(Error::NonFinite("energy logit".into()));
            }
            logits.push(l);
            cands.push(a0);
        }
        points.push(Point { t, at, cands, logits });
    }
    // Pass 2: weights under the chosen stabilization.
    let weights: Vec<Vec<f64>> = match norm {
        EnergyWeightNorm::PerPoint => points
            .iter()
            .map(|p| softmax_weights(&p.logits))
            .collect::<Result<_>>()?,
        EnergyWeightNorm::BatchMax => {
            let m = points
                .iter()
                .flat_map(|p| p.logits.iter().cloned())
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(Error::invalid("degenerate weights: all logits are -inf"));
            }
            points
                .iter()
                .map(|p| p.logits.iter().map(|l| (l - m).exp()).collect())
                .collect()
        }
        EnergyWeightNorm::PerTimeSlice => {
            let mut slice_max = vec![f64::NEG_INFINITY; sched.len() + 1];
            for p in &points {
                for &l in &p.logits {
                    slice_max[p.t] = slice_max[p.t].max(l);
                }
            }
            points
                .iter()
                .map(|p| {
                    let m = slice_max[p.t];
                    if m == f64::NEG_INFINITY {
                        return Err(Error::invalid("degenerate weights: all logits are -inf"));
                    }
                    Ok(p.logits.iter().map(|l| (l - m).exp()).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    // Pass 3: residuals and gradient. Softmax weights sum to one per point;
    // the raw modes average the K Monte-Carlo terms instead.
    let k_scale = match norm {
        EnergyWeightNorm::PerPoint => 1.0,
        _ => 1.0 / k as f64,
    };
    let b = batch as f64;
    let mut grad = vec![F::zero(); net.n_params()];
    let mut loss = 0.0f64;
    for (p, w) in points.iter().zip(&weights) {
        let targets: Vec<Vec<F>> = p
            .cands
            .iter()
            .map(|a0| phi_score(sched, &p.at, a0, p.t))
            .collect::<Result<_>>()?;
        let aw = term_weight(sched, p.t, alpha_bar_weight) * k_scale;
        let mut tbar = vec![F::zero(); dim];
        let mut wsum = 0.0f64;
        for (wi, tg) in w.iter().zip(&targets) {
            wsum += wi;
            for (acc, &v) in tbar.iter_mut().zip(tg) {
                *acc += F::c(*wi) * v;
            }
        }
        let scale = F::c(2.0 * aw / b);
        let wsum_f = F::c(wsum);
        net.eval_backward(
            &p.at,
            None,
            p.t,
            &mut |out: &[F]| {
                for (wi, tg) in w.iter().zip(&targets) {
                    loss += aw * wi * squared_norm(out, tg) / b;
                }
                out.iter()
                    .zip(&tbar)
                    .map(|(&o, &tg)| scale * (o * wsum_f - tg))
                    .collect()
            },
            &mut grad,
        );
    }
    Ok((F::c(loss), grad))
}
