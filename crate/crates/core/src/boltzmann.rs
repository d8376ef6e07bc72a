//! Toy Boltzmann-sampling suite: analytic energy targets, reweighted and
//! denoising score-matching training drivers, a Langevin baseline, and
//! evaluation metrics (mode weights, 1D total-variation distance).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{normal_vec, reverse_sample, NoiseSchedule};
use crate::error::Error;
use crate::losses::{dsm_loss, rsm_energy_loss, CandidateProposal, EnergyWeightNorm};
use crate::net::{Activation, Adam, LrSchedule, ScoreModel, ScoreNet};
use crate::Result;

/// An unnormalized target density: the only thing a Boltzmann sampler may
/// assume is `log_density`. The optional analytic score feeds the Langevin
/// baseline; the optional exact sampler feeds the DSM reference.
pub struct EnergyFunction {
    pub dim: usize,
    pub log_density: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub analytic_score: Option<Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    pub sample_oracle: Option<Box<dyn Fn(usize, &mut ChaCha8Rng) -> Vec<Vec<f64>> + Send + Sync>>,
}

pub const GMM_MEANS: [[f64; 2]; 2] = [[3.0, 3.0], [-3.0, -3.0]];
pub const GMM_WEIGHTS: [f64; 2] = [0.8, 0.2];

/// Two-component 2D Gaussian mixture with unit covariances, means
/// `[3, 3]` and `[-3, -3]`, mixing coefficients `0.8` and `0.2`.
pub fn gmm_target() -> EnergyFunction {
    fn comp_logs(x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, m) in GMM_MEANS.iter().enumerate() {
            let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
            out[k] = GMM_WEIGHTS[k].ln() - 0.5 * d2 - (2.0 * std::f64::consts::PI).ln();
        }
        out
    }
    EnergyFunction {
        dim: 2,
        log_density: Box::new(|x| {
            let l = comp_logs(x);
            logsumexp2(l[0], l[1])
        }),
        analytic_score: Some(Box::new(|x| {
            let l = comp_logs(x);
            let m = l[0].max(l[1]);
            let w0 = (l[0] - m).exp();
            let w1 = (l[1] - m).exp();
            let z = w0 + w1;
            let (g0, g1) = (w0 / z, w1 / z);
            vec![
                g0 * (GMM_MEANS[0][0] - x[0]) + g1 * (GMM_MEANS[1][0] - x[0]),
                g0 * (GMM_MEANS[0][1] - x[1]) + g1 * (GMM_MEANS[1][1] - x[1]),
            ]
        })),
        sample_oracle: Some(Box::new(|n, rng| {
            (0..n)
                .map(|_| {
                    let k = if rng.random_range(0.0..1.0) < GMM_WEIGHTS[0] { 0 } else { 1 };
                    vec![
                        GMM_MEANS[k][0] + rng.sample::<f64, _>(StandardNormal),
                        GMM_MEANS[k][1] + rng.sample::<f64, _>(StandardNormal),
                    ]
                })
                .collect()
        })),
    }
}

pub const TWO_MOON_RADIUS: f64 = 2.0;
pub const TWO_MOON_RADIAL_SCALE: f64 = 0.2;
pub const TWO_MOON_LOBE_OFFSET: f64 = 2.0;
pub const TWO_MOON_LOBE_SCALE: f64 = 0.3;

/// Two-moon density: a thin ring of radius 2 modulated by two lobes in the
/// first coordinate, giving two separated arcs around `(2, 0)` and `(-2, 0)`.
pub fn two_moon_log_density(z: &[f64]) -> f64 {
    let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
    let ring = -0.5 * ((r - TWO_MOON_RADIUS) / TWO_MOON_RADIAL_SCALE).powi(2);
    let a = -0.5 * ((z[0] - TWO_MOON_LOBE_OFFSET) / TWO_MOON_LOBE_SCALE).powi(2);
    let b = -0.5 * ((z[0] + TWO_MOON_LOBE_OFFSET) / TWO_MOON_LOBE_SCALE).powi(2);
    ring + logsumexp2(a, b)
}

pub fn two_moon_target() -> EnergyFunction {
    EnergyFunction {
        dim: 2,
        log_density: Box::new(|z| two_moon_log_density(z)),
        analytic_score: Some(Box::new(|z| {
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt().max(1e-12);
            let ring_coef = -(r - TWO_MOON_RADIUS) / (TWO_MOON_RADIAL_SCALE * TWO_MOON_RADIAL_SCALE * r);
            let a = -0.5 * ((z[0] - TWO_MOON_LOBE_OFFSET) / TWO_MOON_LOBE_SCALE).powi(2);
            let b = -0.5 * ((z[0] + TWO_MOON_LOBE_OFFSET) / TWO_MOON_LOBE_SCALE).powi(2);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let (wa, wb) = (ea / (ea + eb), eb / (ea + eb));
            let s2 = TWO_MOON_LOBE_SCALE * TWO_MOON_LOBE_SCALE;
            let lobe_dx = wa * (-(z[0] - TWO_MOON_LOBE_OFFSET) / s2)
                + wb * (-(z[0] + TWO_MOON_LOBE_OFFSET) / s2);
            vec![ring_coef * z[0] + lobe_dx, ring_coef * z[1]]
        })),
        sample_oracle: None,
    }
}

/// 1D standard normal, for fast end-to-end checks.
pub fn gauss1d_target() -> EnergyFunction {
    EnergyFunction {
        dim: 1,
        log_density: Box::new(|x| -0.5 * x[0] * x[0]),
        analytic_score: Some(Box::new(|x| vec![-x[0]])),
        sample_oracle: Some(Box::new(|n, rng| {
            (0..n).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect()
        })),
    }
}

pub fn make_target(name: &str) -> Result<EnergyFunction> {
    match name {
        "gmm" => Ok(gmm_target()),
        "twomoon" => Ok(two_moon_target()),
        "gauss1d" => Ok(gauss1d_target()),
        other => Err(Error::invalid(format!(
            "unknown target '{other}' (expected gmm|twomoon|gauss1d)"
        ))),
    }
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Complete hyperparameter record for a toy run. Defaults follow the toy
/// training table: lr 3e-4, 20 diffusion steps, linear schedule
/// 0.001..0.999, 2 hidden layers of 128 LeakyReLU units, batch 1024,
/// 300 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoltzmannConfig {
    pub target: String,
    pub method: String,
    pub h: String,
    pub seed: u64,
    pub t_steps: usize,
    pub schedule: String,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cosine_s: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub lr: f64,
    /// Final learning rate of the linear anneal (equal to `lr` disables it).
    pub lr_final: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Gradient steps per epoch. The toy table counts epochs only; with no
    /// dataset to sweep, an epoch is defined as this many fresh-batch steps.
    pub steps_per_epoch: usize,
    pub k_samples: usize,
    /// Stabilization of the raw energy weights:
    /// batch_max | per_time_slice | per_point.
    pub energy_weight_norm: String,
    /// Candidate proposal: phi | defensive.
    pub proposal: String,
    /// Parametrize the score as a residual on the standard-normal prior
    /// score, which pins the unlearnable diffuse steps to the exact prior.
    pub prior_anchor: bool,
    /// Scale of the defensive data proposal.
    pub proposal_sigma: f64,
    pub n_samples: usize,
    pub langevin_steps: usize,
    pub langevin_eta: f64,
}

impl BoltzmannConfig {
    pub fn table_defaults(target: &str, method: &str, h: &str, seed: u64) -> Self {
        Self {
            target: target.into(),
            method: method.into(),
            h: h.into(),
            seed,
            t_steps: 20,
            schedule: "linear".into(),
            beta_start: 0.001,
            beta_end: 0.999,
            cosine_s: 0.008,
            hidden_layers: 2,
            hidden_width: 128,
            activation: Activation::LeakyRelu,
            lr: 3e-4,
            lr_final: 3e-5,
            batch_size: 1024,
            epochs: 300,
            steps_per_epoch: 20,
            k_samples: 64,
            energy_weight_norm: "per_time_slice".into(),
            proposal: "defensive".into(),
            prior_anchor: true,
            proposal_sigma: 3.5,
            n_samples: 10_000,
            langevin_steps: 20,
            langevin_eta: 0.05,
        }
    }

    pub fn candidate_proposal(&self) -> Result<CandidateProposal> {
        match self.proposal.as_str() {
            "phi" => Ok(CandidateProposal::Phi),
            "defensive" => Ok(CandidateProposal::Defensive { sigma: self.proposal_sigma }),
            other => Err(Error::invalid(format!(
                "unknown proposal '{other}' (expected phi|defensive)"
            ))),
        }
    }

    pub fn weight_norm(&self) -> Result<EnergyWeightNorm> {
        match self.energy_weight_norm.as_str() {
            "batch_max" => Ok(EnergyWeightNorm::BatchMax),
            "per_time_slice" => Ok(EnergyWeightNorm::PerTimeSlice),
            "per_point" => Ok(EnergyWeightNorm::PerPoint),
            other => Err(Error::invalid(format!(
                "unknown energy_weight_norm '{other}' (expected batch_max|per_time_slice|per_point)"
            ))),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.schedule.as_str() {
            "linear" => NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end),
            "cosine" => NoiseSchedule::cosine(self.t_steps, self.cosine_s),
            other => Err(Error::invalid(format!(
                "unknown schedule '{other}' (expected linear|cosine)"
            ))),
        }
    }
}

/// Sampling distribution for `x_t` in the energy-reweighted loss:
/// `N(0, 4I)` or uniform on `[-6, 6]^d`.
pub fn make_h_sampler(
    kind: &str,
    dim: usize,
) -> Result<Box<dyn FnMut(usize, &mut ChaCha8Rng) -> Vec<f32> + Send>> {
    match kind {
        "gaussian" => Ok(Box::new(move |_t, rng| {
            (0..dim).map(|_| (2.0 * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
        })),
        "uniform" => Ok(Box::new(move |_t, rng| {
            (0..dim).map(|_| rng.random_range(-6.0..6.0) as f32).collect()
        })),
        other => Err(Error::invalid(format!(
            "unknown h sampler '{other}' (expected gaussian|uniform)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

fn toy_lr_schedule(cfg: &BoltzmannConfig) -> LrSchedule {
    if cfg.lr_final == cfg.lr {
        LrSchedule::Constant(cfg.lr)
    } else {
        LrSchedule::Linear {
            start: cfg.lr,
            end: cfg.lr_final,
            total: (cfg.epochs * cfg.steps_per_epoch) as u64,
        }
    }
}

pub struct ToyTrainResult {
    pub net: ScoreNet<f32>,
    pub losses: Vec<f64>,
}

fn init_toy_net(
    target: &EnergyFunction,
    cfg: &BoltzmannConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ScoreNet<f32>> {
    let net = ScoreNet::init(
        target.dim,
        0,
        cfg.hidden_layers,
        cfg.hidden_width,
        cfg.activation,
        crate::net::DEFAULT_TIME_EMBED_DIM,
        cfg.t_steps,
        rng,
    )?;
    Ok(if cfg.prior_anchor { net.with_prior_anchor() } else { net })
}

/// Train an unconditional sampler from the energy function alone, using the
/// softmax-reweighted loss with the configured `h` sampler.
pub fn train_rsm_sampler(
    target: &EnergyFunction,
    cfg: &BoltzmannConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ToyTrainResult> {
    let sched = cfg.schedule()?;
    let mut net = init_toy_net(target, cfg, rng)?;
    let mut h = make_h_sampler(&cfg.h, target.dim)?;
    let norm = cfg.weight_norm()?;
    let proposal = cfg.candidate_proposal()?;
    let mut opt = Adam::new(net.n_params(), toy_lr_schedule(cfg));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0f64;
        for _ in 0..cfg.steps_per_epoch {
            let (loss, grad) = rsm_energy_loss(
                &net,
                &sched,
                target.log_density.as_ref(),
                &mut *h,
                cfg.batch_size,
                cfg.k_samples,
                norm,
                proposal,
                false,
                rng,
            )?;
            if !loss.is_finite() {
                return Err(Error::NumericalAbort {
                    component: "rsm_energy_loss".into(),
                    iteration: epoch,
                });
            }
            opt.step(net.params_mut(), &grad);
            epoch_loss += loss as f64;
        }
        losses.push(epoch_loss / cfg.steps_per_epoch as f64);
    }
    Ok(ToyTrainResult { net, losses })
}

/// Reference model trained by plain denoising score matching on draws from
/// the target's exact sampler.
pub fn train_dsm_reference(
    target: &EnergyFunction,
    cfg: &BoltzmannConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ToyTrainResult> {
    let oracle = target
        .sample_oracle
        .as_ref()
        .ok_or(Error::MissingOracle("target has no exact sampler for DSM training"))?;
    let sched = cfg.schedule()?;
    let mut net = init_toy_net(target, cfg, rng)?;
    let mut opt = Adam::new(net.n_params(), toy_lr_schedule(cfg));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0f64;
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<Vec<f32>> = oracle(cfg.batch_size, rng)
                .into_iter()
                .map(|x| x.into_iter().map(|v| v as f32).collect())
                .collect();
            let (loss, grad) = dsm_loss(&net, &sched, &batch, None, true, rng)?;
            if !loss.is_finite() {
                return Err(Error::NumericalAbort {
                    component: "dsm_loss".into(),
                    iteration: epoch,
                });
            }
            opt.step(net.params_mut(), &grad);
            epoch_loss += loss as f64;
        }
        losses.push(epoch_loss / cfg.steps_per_epoch as f64);
    }
    Ok(ToyTrainResult { net, losses })
}

/// Draw `n` samples from a trained unconditional score network.
pub fn sample_net(
    net: &ScoreNet<f32>,
    sched: &NoiseSchedule,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let dim = net.action_dim();
    let rows = reverse_sample(sched, |x: &[f32], t| net.eval(x, None, t), rng, n, dim)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v as f64).collect())
        .collect())
}

/// Unadjusted Langevin dynamics with the exact score:
/// `x <- x + eta * score(x) + sqrt(2 eta) z`, `n` chains from `N(0, I)`.
pub fn langevin_baseline(
    target: &EnergyFunction,
    steps: usize,
    step_size: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let score = target
        .analytic_score
        .as_ref()
        .ok_or(Error::MissingOracle("target has no analytic score for Langevin"))?;
    let noise_scale = (2.0 * step_size).sqrt();
    let mut chains: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(rng, target.dim)).collect();
    for _ in 0..steps {
        for x in chains.iter_mut() {
            let g = score(x);
            for d in 0..x.len() {
                let z: f64 = rng.sample(StandardNormal);
                x[d] += step_size * g[d] + noise_scale * z;
            }
        }
    }
    Ok(chains)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of samples nearest to each mode (Euclidean distance, ties broken
/// by the lower mode index).
pub fn estimate_mode_weights(samples: &[Vec<f64>], modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if modes.len() < 2 {
        return Err(Error::invalid("need at least two modes"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let mut counts = vec![0usize; modes.len()];
    for x in samples {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, m) in modes.iter().enumerate() {
            let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        counts[best] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / samples.len() as f64).collect())
}

/// Number of equal-width histogram bins used by [`tv_distance_1d`]. Coarser
/// than the quadrature grid so the sampling noise of a 1e5-draw histogram
/// stays well under the comparison tolerances.
pub const TV_HIST_BINS: usize = 100;

/// Total-variation distance between a sample set and the quadrature-
/// normalized density on `grid` (sorted, at least 100 points). Density mass
/// is integrated by the trapezoid rule on the fine grid and aggregated into
/// [`TV_HIST_BINS`] equal bins; samples outside the grid range count as
/// unmatched mass.
pub fn tv_distance_1d(
    samples: &[f64],
    log_density_unnorm: &dyn Fn(f64) -> f64,
    grid: &[f64],
) -> Result<f64> {
    if grid.len() < 100 {
        return Err(Error::GridTooCoarse { len: grid.len(), min: 100 });
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let lo = grid[0];
    let hi = *grid.last().unwrap();
    let width = hi - lo;
    if width <= 0.0 {
        return Err(Error::invalid("grid must be increasing"));
    }
    // Quadrature on the fine grid, aggregated per histogram bin.
    let logs: Vec<f64> = grid.iter().map(|&x| log_density_unnorm(x)).collect();
    let lmax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|&l| (l - lmax).exp()).collect();
    let mut bin_mass = vec![0.0f64; TV_HIST_BINS];
    let mut total = 0.0f64;
    for j in 0..grid.len() - 1 {
        let seg = 0.5 * (dens[j] + dens[j + 1]) * (grid[j + 1] - grid[j]);
        let mid = 0.5 * (grid[j] + grid[j + 1]);
        let b = (((mid - lo) / width) * TV_HIST_BINS as f64) as usize;
        bin_mass[b.min(TV_HIST_BINS - 1)] += seg;
        total += seg;
    }
    if !(total > 0.0) {
        return Err(Error::NonFinite("density mass on grid".into()));
    }
    for m in bin_mass.iter_mut() {
        *m /= total;
    }
    // Sample histogram over the same bins.
    let mut hist = vec![0.0f64; TV_HIST_BINS];
    let mut outside = 0usize;
    for &x in samples {
        if x < lo || x > hi {
            outside += 1;
        } else {
            let b = (((x - lo) / width) * TV_HIST_BINS as f64) as usize;
            hist[b.min(TV_HIST_BINS - 1)] += 1.0;
        }
    }
    let n = samples.len() as f64;
    for h in hist.iter_mut() {
        *h /= n;
    }
    let out_frac = outside as f64 / n;
    let sum_abs: f64 = hist.iter().zip(&bin_mass).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * (sum_abs + out_frac))
}

/// Uniform grid helper for quadrature oracles.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// End-to-end driver (shared by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BoltzmannMetrics {
    pub mode_weights: Option<Vec<f64>>,
    pub tv: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

pub struct BoltzmannOutcome {
    pub samples: Vec<Vec<f64>>,
    pub metrics: BoltzmannMetrics,
    pub losses: Vec<f64>,
}

/// Run one toy experiment: train (or run the baseline), draw samples, and
/// compute the target-appropriate metrics.
pub fn run_boltzmann(cfg: &BoltzmannConfig) -> Result<BoltzmannOutcome> {
    use rand::SeedableRng;
    let target = make_target(&cfg.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (samples, losses) = match cfg.method.as_str() {
        "rsm" => {
            let trained = train_rsm_sampler(&target, cfg, &mut rng)?;
            let sched = cfg.schedule()?;
            (sample_net(&trained.net, &sched, cfg.n_samples, &mut rng)?, trained.losses)
        }
        "dsm" => {
            let trained = train_dsm_reference(&target, cfg, &mut rng)?;
            let sched = cfg.schedule()?;
            (sample_net(&trained.net, &sched, cfg.n_samples, &mut rng)?, trained.losses)
        }
        "langevin" => (
            langevin_baseline(&target, cfg.langevin_steps, cfg.langevin_eta, cfg.n_samples, &mut rng)?,
            Vec::new(),
        ),
        other => {
            return Err(Error::invalid(format!(
                "unknown method '{other}' (expected rsm|dsm|langevin)"
            )))
        }
    };
    let mode_weights = if cfg.target == "gmm" {
        let modes: Vec<Vec<f64>> = GMM_MEANS.iter().map(|m| m.to_vec()).collect();
        Some(estimate_mode_weights(&samples, &modes)?)
    } else {
        None
    };
    let tv = if target.dim == 1 {
        let xs: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let grid = linspace(-5.0, 5.0, 2001);
        Some(tv_distance_1d(&xs, &|x| (target.log_density)(&[x]), &grid)?)
    } else {
        None
    };
    let metrics = BoltzmannMetrics {
        mode_weights,
        tv,
        seed: cfg.seed,
        config_hash: crate::report::config_hash(cfg)?,
    };
    Ok(BoltzmannOutcome { samples, metrics, losses })
}
