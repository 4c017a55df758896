//! Toy-scale networks: the consistency network `f_theta` (GeLU MLP with a
//! sinusoidal time embedding, wrapped in the boundary parameterization) and
//! the Gaussian encoder `g_phi` (GeLU MLP without time input).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Smallest encoder scale; keeps the KL log term finite.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TimeInput {
    Sigma,
    LogSigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MlpSpec {
    pub hidden_dim: usize,
    /// Number of linear layers.
    pub depth: usize,
    /// Width of the sinusoidal time embedding; ignored by the encoder.
    pub time_embed_dim: usize,
    pub time_input: TimeInput,
}

impl MlpSpec {
    pub fn consistency_default() -> Self {
        MlpSpec {
            hidden_dim: 128,
            depth: 4,
            time_embed_dim: 64,
            time_input: TimeInput::Sigma,
        }
    }

    pub fn encoder_default() -> Self {
        MlpSpec {
            hidden_dim: 64,
            depth: 4,
            time_embed_dim: 0,
            time_input: TimeInput::Sigma,
        }
    }

    pub fn validate(&self, with_time: bool) -> Result<()> {
        if self.depth == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("MLP depth and hidden_dim must be positive"));
        }
        if with_time && (self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2)) {
            return Err(Error::invalid("time_embed_dim must be positive and even"));
        }
        Ok(())
    }
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        let same = self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape());
        if same {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.names, other.names
            )))
        }
    }

    /// Places every tensor on the tape, as parameters or as constants.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// `shadow <- mu * shadow + (1 - mu) * current`.
pub fn ema_update(shadow: &mut ParamSet, current: &ParamSet, mu: f64) -> Result<()> {
    shadow.check_layout(current)?;
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::OutOfRange {
            what: "ema rate",
            value: mu,
            lo: 0.0,
            hi: 1.0,
        });
    }
    for (s, c) in shadow.tensors.iter_mut().zip(&current.tensors) {
        for (a, b) in s.data_mut().iter_mut().zip(c.data()) {
            *a = mu * *a + (1.0 - mu) * b;
        }
    }
    Ok(())
}

/// Sinusoidal features `[sin(t w_j)..., cos(t w_j)...]`, `w_j` geometric in `[1, 1e4]`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!("time embedding dim must be even, got {dim}")));
    }
    let mut out = vec![0.0; dim];
    fill_embedding(t, &mut out);
    Ok(Tensor::vector(out))
}

fn fill_embedding(t: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    for j in 0..half {
        let frac = if half > 1 { j as f64 / (half - 1) as f64 } else { 0.0 };
        let w = libm::pow(1e4, frac);
        out[j] = libm::sin(t * w);
        out[half + j] = libm::cos(t * w);
    }
}

fn init_mlp(
    input: usize,
    output: usize,
    spec: &MlpSpec,
    zero_last: bool,
    rng: &mut DetRng,
) -> ParamSet {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for layer in 0..spec.depth {
        let fan_in = if layer == 0 { input } else { spec.hidden_dim };
        let fan_out = if layer + 1 == spec.depth { output } else { spec.hidden_dim };
        let last = layer + 1 == spec.depth;
        let std = 1.0 / libm::sqrt(fan_in as f64);
        let w = if last && zero_last {
            Tensor::zeros(&[fan_in, fan_out])
        } else {
            Tensor::from_fn(&[fan_in, fan_out], |_| std * rng.normal())
        };
        names.push(format!("layer{layer}.weight"));
        tensors.push(w);
        names.push(format!("layer{layer}.bias"));
        tensors.push(Tensor::zeros(&[fan_out]));
    }
    ParamSet { names, tensors }
}

fn mlp_forward(tape: &mut Tape, params: &[Var], mut h: Var) -> Result<Var> {
    let depth = params.len() / 2;
    for layer in 0..depth {
        let z = tape.matmul(h, params[2 * layer])?;
        h = tape.add(z, params[2 * layer + 1])?;
        if layer + 1 < depth {
            h = tape.gelu(h)?;
        }
    }
    Ok(h)
}

fn column(values: impl Iterator<Item = f64>) -> Tensor {
    let data: Vec<f64> = values.collect();
    let n = data.len();
    Tensor::new(vec![n, 1], data).expect("column length")
}

/// `f_theta(x, sigma) = c_skip x + c_out F_theta(c_in x, emb(sigma))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyNet {
    pub spec: MlpSpec,
    pub data_dim: usize,
}

impl ConsistencyNet {
    pub fn new(spec: MlpSpec, data_dim: usize) -> Result<Self> {
        spec.validate(true)?;
        if data_dim == 0 {
            return Err(Error::invalid("data dimension must be positive"));
        }
        Ok(ConsistencyNet { spec, data_dim })
    }

    pub fn init(&self, rng: &mut DetRng) -> ParamSet {
        init_mlp(
            self.data_dim + self.spec.time_embed_dim,
            self.data_dim,
            &self.spec,
            false,
            rng,
        )
    }

    fn embed_batch(&self, sigmas: &[f64]) -> Tensor {
        let e = self.spec.time_embed_dim;
        let mut data = vec![0.0; sigmas.len() * e];
        for (row, &s) in data.chunks_mut(e).zip(sigmas) {
            let t = match self.spec.time_input {
                TimeInput::Sigma => s,
                TimeInput::LogSigma => libm::log(s),
            };
            fill_embedding(t, row);
        }
        Tensor::new(vec![sigmas.len(), e], data).expect("embedding shape")
    }

    /// Records the forward pass for a batch `x` of shape `[B, d]` with one
    /// noise level per row.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        kernel: &TransitionKernel,
        x: Var,
        sigmas: &[f64],
    ) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.data_dim || shape[0] != sigmas.len() {
            return Err(Error::ShapeMismatch {
                op: "consistency_forward",
                lhs: shape,
                rhs: vec![sigmas.len(), self.data_dim],
            });
        }
        let scalings = sigmas
            .iter()
            .map(|&s| kernel.scalings(s))
            .collect::<Result<Vec<_>>>()?;
        let c_in = tape.constant(column(scalings.iter().map(|s| s.c_in)));
        let c_skip = tape.constant(column(scalings.iter().map(|s| s.c_skip)));
        let c_out = tape.constant(column(scalings.iter().map(|s| s.c_out)));
        let emb = tape.constant(self.embed_batch(sigmas));
        let x_in = tape.mul(x, c_in)?;
        let h = tape.concat(&[x_in, emb], 1)?;
        let raw = mlp_forward(tape, params, h)?;
        let skip = tape.mul(x, c_skip)?;
        let out = tape.mul(raw, c_out)?;
        tape.add(skip, out)
    }

    /// Batch evaluation at a single noise level.
    pub fn forward(
        &self,
        theta: &ParamSet,
        kernel: &TransitionKernel,
        x: &Tensor,
        sigma: f64,
    ) -> Result<Tensor> {
        let sigmas = vec![sigma; x.rows()];
        self.forward_per_row(theta, kernel, x, &sigmas)
    }

    pub fn forward_per_row(
        &self,
        theta: &ParamSet,
        kernel: &TransitionKernel,
        x: &Tensor,
        sigmas: &[f64],
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = theta.to_tape(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward_tape(&mut tape, &p, kernel, xv, sigmas)?;
        Ok(tape.value(y).clone())
    }
}

/// Diagonal Gaussian `N(mean, diag(scale^2))` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub scale: Tensor,
}

/// Gaussian encoder: an MLP emitting a mean and a log-variance per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder {
    pub spec: MlpSpec,
    pub data_dim: usize,
}

impl Encoder {
    pub fn new(spec: MlpSpec, data_dim: usize) -> Result<Self> {
        spec.validate(false)?;
        if data_dim == 0 {
            return Err(Error::invalid("data dimension must be positive"));
        }
        Ok(Encoder { spec, data_dim })
    }

    /// Final layer zero-initialized: mean 0 and scale 1 at initialization.
    pub fn init(&self, rng: &mut DetRng) -> ParamSet {
        init_mlp(self.data_dim, 2 * self.data_dim, &self.spec, true, rng)
    }

    /// Returns `(mean, scale)` nodes, each `[B, d]`.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x0: Var) -> Result<(Var, Var)> {
        let d = self.data_dim;
        let out = mlp_forward(tape, params, x0)?;
        let mean = tape.slice(out, 1, 0, d)?;
        let log_var = tape.slice(out, 1, d, d)?;
        let half = tape.scale(log_var, 0.5)?;
        let scale = tape.exp(half)?;
        let scale = tape.clamp_min(scale, MIN_SCALE)?;
        Ok((mean, scale))
    }

    pub fn forward(&self, phi: &ParamSet, x0: &Tensor) -> Result<GaussianPosterior> {
        let mut tape = Tape::new();
        let p = phi.to_tape(&mut tape, false);
        let x = tape.constant(x0.clone());
        let (m, s) = self.forward_tape(&mut tape, &p, x)?;
        Ok(GaussianPosterior {
            mean: tape.value(m).clone(),
            scale: tape.value(s).clone(),
        })
    }
}
