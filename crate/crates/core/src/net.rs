//! Small MLPs with hand-written reverse-mode backprop, a sinusoidal-time
//! score network wrapper, and an Adam optimizer.
//!
//! Everything is generic over [`Real`]: production training runs in `f32`,
//! gradient-check tests instantiate `f64`. Parameters live in one flat vector
//! (per layer: row-major weight matrix, then bias) so optimizers and
//! checkpoints treat a network as a plain slice.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::real::Real;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Mish,
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > F::zero() {
                    x
                } else {
                    F::c(0.01) * x
                }
            }
        }
    }

    /// Derivative as a function of the pre-activation.
    fn deriv<F: Real>(self, x: F) -> F {
        match self {
            Activation::Mish => {
                let sp = softplus(x);
                let th = sp.tanh();
                let sig = F::one() / (F::one() + (-x).exp());
                th + x * (F::one() - th * th) * sig
            }
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::c(0.01)
                }
            }
        }
    }
}

fn softplus<F: Real>(x: F) -> F {
    if x > F::c(20.0) {
        x
    } else if x < F::c(-20.0) {
        x.exp()
    } else {
        (F::one() + x.exp()).ln()
    }
}

/// Architecture of a fully connected network. `hidden_layers == 0` degrades
/// to a single linear map, which tests use to build exact hand-set critics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_layers: 3,
            hidden_width: 256,
            activation: Activation::Mish,
        }
    }

    pub fn with_hidden(mut self, layers: usize, width: usize) -> Self {
        self.hidden_layers = layers;
        self.hidden_width = width;
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    /// Sizes of the linear maps, as (in, out) pairs.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_layers == 0 {
            return vec![(self.input_dim, self.output_dim)];
        }
        let mut dims = vec![(self.input_dim, self.hidden_width)];
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden_width, self.hidden_width));
        }
        dims.push((self.hidden_width, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| (i + 1) * o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("network dims must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }
}

/// Fully connected network over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Mlp<F: Real> {
    spec: MlpSpec,
    params: Vec<F>,
}

/// Forward-pass cache for backprop: the input and every pre-activation.
pub struct MlpCache<F: Real> {
    input: Vec<F>,
    pre: Vec<Vec<F>>,
}

impl<F: Real> Mlp<F> {
    /// Layer-wise uniform fan-in init `U(-1/sqrt(in), 1/sqrt(in))` for weights
    /// and biases. With `zero_final` the last linear map starts at zero, so a
    /// fresh score network outputs zero everywhere.
    pub fn init<R: Rng>(spec: MlpSpec, zero_final: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let mut params = Vec::with_capacity(spec.param_count());
        for (l, &(fan_in, out)) in dims.iter().enumerate() {
            let last = l + 1 == n_layers;
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in + 1) * out {
                let v = if last && zero_final {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                };
                params.push(F::c(v));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<F>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "parameter count {} does not match spec ({} expected)",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn forward(&self, input: &[F]) -> Vec<F> {
        debug_assert_eq!(input.len(), self.spec.input_dim);
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        let mut act = input.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, out)) in dims.iter().enumerate() {
            let mut z = vec![F::zero(); out];
            linear_forward(&self.params[offset..], fan_in, out, &act, &mut z);
            offset += (fan_in + 1) * out;
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    *v = self.spec.activation.apply(*v);
                }
            }
            act = z;
        }
        act
    }

    pub fn forward_cached(&self, input: &[F]) -> (Vec<F>, MlpCache<F>) {
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = input.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, out)) in dims.iter().enumerate() {
            let mut z = vec![F::zero(); out];
            linear_forward(&self.params[offset..], fan_in, out, &act, &mut z);
            offset += (fan_in + 1) * out;
            pre.push(z.clone());
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    *v = self.spec.activation.apply(*v);
                }
            }
            act = z;
        }
        (act, MlpCache { input: input.to_vec(), pre })
    }

    /// Accumulate `J^T dout` into `grad` (same layout as `params`).
    pub fn backward(&self, cache: &MlpCache<F>, dout: &[F], grad: &mut [F]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        // Layer input activations are recomputed from the cached pre-activations.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for &(fan_in, out) in &dims {
            offsets.push(off);
            off += (fan_in + 1) * out;
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, out) = dims[l];
            let w = &self.params[offsets[l]..offsets[l] + fan_in * out];
            let layer_input: Vec<F> = if l == 0 {
                cache.input.clone()
            } else {
                cache.pre[l - 1]
                    .iter()
                    .map(|&z| self.spec.activation.apply(z))
                    .collect()
            };
            // dW[o][i] += delta[o] * input[i]; db[o] += delta[o]
            let g = &mut grad[offsets[l]..offsets[l] + (fan_in + 1) * out];
            for o in 0..out {
                let d = delta[o];
                let row = &mut g[o * fan_in..(o + 1) * fan_in];
                for (gi, &xi) in row.iter_mut().zip(&layer_input) {
                    *gi += d * xi;
                }
                g[fan_in * out + o] += d;
            }
            if l > 0 {
                // da = W^T delta, then through the activation derivative.
                let mut da = vec![F::zero(); fan_in];
                for o in 0..out {
                    let d = delta[o];
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (ai, &wi) in da.iter_mut().zip(row) {
                        *ai += wi * d;
                    }
                }
                let prev_pre = &cache.pre[l - 1];
                delta = da
                    .iter()
                    .zip(prev_pre)
                    .map(|(&a, &z)| a * self.spec.activation.deriv(z))
                    .collect();
            }
        }
    }
}

fn linear_forward<F: Real>(params: &[F], fan_in: usize, out: usize, input: &[F], z: &mut [F]) {
    for (o, zo) in z.iter_mut().enumerate() {
        let row = &params[o * fan_in..(o + 1) * fan_in];
        let mut acc = params[fan_in * out + o]; // bias
        for (&w, &x) in row.iter().zip(input) {
            acc += w * x;
        }
        *zo = acc;
    }
}

/// A parametric score model `s(a_t; s, t)`, differentiable in its parameters.
/// Implemented by [`ScoreNet`] and by test-side tabulated models.
pub trait ScoreModel<F: Real> {
    fn action_dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn params(&self) -> &[F];
    fn params_mut(&mut self) -> &mut [F];
    /// Plain evaluation.
    fn eval(&self, a_t: &[F], s: Option<&[F]>, t: usize) -> Vec<F>;
    /// Evaluate, hand the output to `dout` to obtain the output gradient, and
    /// accumulate the parameter gradient into `grad`. Returns the output.
    fn eval_backward(
        &self,
        a_t: &[F],
        s: Option<&[F]>,
        t: usize,
        dout: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F>;
}

/// Score network `s(a_t; s, t)`: an MLP over `[a_t, s, time_embedding(t/T)]`.
///
/// The schedule index enters through a sinusoidal embedding of the normalized
/// time `t/T`; the embedding dimension defaults to 16.
#[derive(Debug, Clone)]
pub struct ScoreNet<F: Real> {
    mlp: Mlp<F>,
    action_dim: usize,
    state_dim: usize,
    time_embed_dim: usize,
    t_max: usize,
    anchored: bool,
}

pub const DEFAULT_TIME_EMBED_DIM: usize = 16;

impl<F: Real> ScoreNet<F> {
    pub fn init<R: Rng>(
        action_dim: usize,
        state_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        activation: Activation,
        time_embed_dim: usize,
        t_max: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if time_embed_dim == 0 || time_embed_dim % 2 != 0 {
            return Err(Error::invalid("time embedding dimension must be even and positive"));
        }
        if t_max == 0 {
            return Err(Error::invalid("t_max must be positive"));
        }
        let spec = MlpSpec::new(action_dim + state_dim + time_embed_dim, action_dim)
            .with_hidden(hidden_layers, hidden_width)
            .with_activation(activation);
        // Zero-init final layer: score ~ 0 at init keeps the reverse sampler
        // near the prior early in training.
        let mlp = Mlp::init(spec, true, rng)?;
        Ok(Self { mlp, action_dim, state_dim, time_embed_dim, t_max, anchored: false })
    }

    /// Anchor the model to the standard-normal prior score:
    /// `s(a_t; s, t) = f(a_t; s, t) - a_t`. A zero-initialized residual then
    /// starts at the exact prior score, and the diffuse steps — where the
    /// data signal vanishes — only need the residual to stay near zero
    /// instead of reproducing `-a_t` to within the reverse chain's
    /// `beta_t / sqrt(alpha_t)` error amplification.
    pub fn with_prior_anchor(mut self) -> Self {
        self.anchored = true;
        self
    }

    pub fn anchored(&self) -> bool {
        self.anchored
    }

    pub fn from_parts(
        mlp: Mlp<F>,
        action_dim: usize,
        state_dim: usize,
        time_embed_dim: usize,
        t_max: usize,
    ) -> Result<Self> {
        if mlp.spec().input_dim != action_dim + state_dim + time_embed_dim
            || mlp.spec().output_dim != action_dim
        {
            return Err(Error::invalid("MLP dims do not match score-net layout"));
        }
        Ok(Self { mlp, action_dim, state_dim, time_embed_dim, t_max, anchored: false })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn mlp(&self) -> &Mlp<F> {
        &self.mlp
    }

    /// Checked evaluation: rejects non-finite inputs and out-of-range `t`.
    pub fn eval_checked(&self, a_t: &[F], s: Option<&[F]>, t: usize) -> Result<Vec<F>> {
        if t == 0 || t > self.t_max {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_max });
        }
        if a_t.iter().any(|v| !v.is_finite())
            || s.map_or(false, |s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("score network input".into()));
        }
        Ok(ScoreModel::eval(self, a_t, s, t))
    }

    fn assemble_input(&self, a_t: &[F], s: Option<&[F]>, t: usize) -> Vec<F> {
        debug_assert_eq!(a_t.len(), self.action_dim);
        let s = s.unwrap_or(&[]);
        debug_assert_eq!(s.len(), self.state_dim);
        let mut input = Vec::with_capacity(self.mlp.spec().input_dim);
        input.extend_from_slice(a_t);
        input.extend_from_slice(s);
        time_embedding(t, self.t_max, self.time_embed_dim, &mut input);
        input
    }
}

/// Sinusoidal features of `u = t/T`: pairs `(sin(u w_k), cos(u w_k))` with
/// geometrically spaced frequencies `w_k` from 1 to 1000.
pub fn time_embedding<F: Real>(t: usize, t_max: usize, dim: usize, out: &mut Vec<F>) {
    let u = t as f64 / t_max as f64;
    let half = dim / 2;
    for k in 0..half {
        let w = if half > 1 {
            1000f64.powf(k as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out.push(F::c((u * w).sin()));
        out.push(F::c((u * w).cos()));
    }
}

impl<F: Real> ScoreModel<F> for ScoreNet<F> {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    fn params(&self) -> &[F] {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> &mut [F] {
        self.mlp.params_mut()
    }

    fn eval(&self, a_t: &[F], s: Option<&[F]>, t: usize) -> Vec<F> {
        let mut out = self.mlp.forward(&self.assemble_input(a_t, s, t));
        if self.anchored {
            for (o, &a) in out.iter_mut().zip(a_t) {
                *o -= a;
            }
        }
        out
    }

    fn eval_backward(
        &self,
        a_t: &[F],
        s: Option<&[F]>,
        t: usize,
        dout: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F> {
        let input = self.assemble_input(a_t, s, t);
        let (mut out, cache) = self.mlp.forward_cached(&input);
        if self.anchored {
            for (o, &a) in out.iter_mut().zip(a_t) {
                *o -= a;
            }
        }
        // The anchor is constant in the parameters, so dL/d(mlp out) equals
        // dL/d(model out).
        let d = dout(&out);
        self.mlp.backward(&cache, &d, grad);
        out
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear interpolation from `start` at step 0 to `end` at `total - 1`.
    Linear { start: f64, end: f64, total: u64 },
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Linear { start, end, total } => {
                if total <= 1 {
                    end
                } else {
                    let k = step.min(total - 1) as f64 / (total - 1) as f64;
                    start + (end - start) * k
                }
            }
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision: mirror-descent weights can reach `exp(30)` and their
/// squared gradients overflow `f32` accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Adam {
    pub fn new(n_params: usize, schedule: LrSchedule) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// One update with the learning rate taken from the schedule.
    pub fn step<F: Real>(&mut self, params: &mut [F], grad: &[F]) {
        let lr = self.schedule.lr(self.step);
        self.step_with_lr(params, grad, lr);
    }

    pub fn step_with_lr<F: Real>(&mut self, params: &mut [F], grad: &[F], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i].f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            let delta = lr * mhat / (vhat.sqrt() + self.eps);
            params[i] -= F::c(delta);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: flat little-endian f32 parameter blobs with JSON sidecars.
// ---------------------------------------------------------------------------

pub fn write_params_f32(path: &Path, params: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(params.len() * 4);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_params_f32(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "{} has length {} not divisible by 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Sidecar describing a serialized [`ScoreNet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreNetMeta {
    pub spec: MlpSpec,
    pub action_dim: usize,
    pub state_dim: usize,
    pub time_embed_dim: usize,
    pub t_max: usize,
    #[serde(default)]
    pub anchored: bool,
}

impl ScoreNet<f32> {
    /// Writes `<stem>.bin` (little-endian f32 params) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_params_f32(&dir.join(format!("{stem}.bin")), self.mlp.params())?;
        let meta = ScoreNetMeta {
            spec: self.mlp.spec().clone(),
            action_dim: self.action_dim,
            state_dim: self.state_dim,
            time_embed_dim: self.time_embed_dim,
            t_max: self.t_max,
            anchored: self.anchored,
        };
        let f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        serde_json::to_writer_pretty(f, &meta)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta_file = std::fs::File::open(dir.join(format!("{stem}.json")))
            .map_err(|e| Error::Checkpoint(format!("missing sidecar for {stem}: {e}")))?;
        let meta: ScoreNetMeta = serde_json::from_reader(meta_file)?;
        let params = read_params_f32(&dir.join(format!("{stem}.bin")))?;
        let mlp = Mlp::from_params(meta.spec, params)?;
        let net = ScoreNet::from_parts(
            mlp,
            meta.action_dim,
            meta.state_dim,
            meta.time_embed_dim,
            meta.t_max,
        )?;
        Ok(if meta.anchored { net.with_prior_anchor() } else { net })
    }
}

impl Mlp<f32> {
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_params_f32(&dir.join(format!("{stem}.bin")), &self.params)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        serde_json::to_writer_pretty(f, &self.spec)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let spec_file = std::fs::File::open(dir.join(format!("{stem}.json")))
            .map_err(|e| Error::Checkpoint(format!("missing sidecar for {stem}: {e}")))?;
        let spec: MlpSpec = serde_json::from_reader(spec_file)?;
        let params = read_params_f32(&dir.join(format!("{stem}.bin")))?;
        Mlp::from_params(spec, params)
    }
}
