//! One iteration of variational consistency training and its supporting
//! pieces: time/pair sampling, the two-point consistency loss with a
//! gradient-stopped target branch, the KL term, clipping, optimizer and EMA
//! updates, plus the gradient-variance probe.

use alloc::vec;
use alloc::vec::Vec;

use crate::couplings::{self, CouplingKind, KlReduction};
use crate::data::GaussianMixture;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::networks::{ema_update, ConsistencyNet, Encoder, MlpSpec, ParamSet};
use crate::optim::{clip_global_norm, optimizer_step, Moments, OptimizerConfig};
use crate::rng::DetRng;
use crate::schedules::{
    karras_grid, sample_continuous_lognormal, DiscreteLognormal, EcmMapping, StepSchedule,
    TimeGrid, WeightingKind, WeightingSpec,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleMode {
    /// Discrete Karras grid with a doubling step count; `(r, t)` adjacent grid points.
    Ict,
    /// Continuous lognormal `t` with `r` from the shrinking-gap mapping.
    Ecm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    pub rho: f64,
    pub s0: usize,
    pub s1: usize,
    pub p_mean: f64,
    pub p_std: f64,
    pub ecm_k: f64,
    pub ecm_b: f64,
    pub ecm_q: f64,
    /// Number of gap halvings over the whole run.
    pub ecm_halvings: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mode: ScheduleMode::Ict,
            rho: 7.0,
            s0: 10,
            s1: 1280,
            p_mean: -1.1,
            p_std: 2.0,
            ecm_k: 8.0,
            ecm_b: 1.0,
            ecm_q: 2.0,
            ecm_halvings: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ObjectiveConfig {
    pub weighting: WeightingKind,
    pub beta: f64,
    /// Pseudo-Huber constant `c`.
    pub huber_c: f64,
    pub kl_reduction: KlReduction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kernel: TransitionKernel,
    pub schedule: ScheduleConfig,
    pub coupling: CouplingKind,
    pub model: MlpSpec,
    pub encoder: MlpSpec,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub iterations: u64,
    pub ema_rate: f64,
    pub clip_norm: f64,
    pub data_dim: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.model.validate(true)?;
        if self.coupling == CouplingKind::Variational {
            self.encoder.validate(false)?;
        }
        self.optimizer.validate()?;
        let s = &self.schedule;
        if s.mode == ScheduleMode::Ict {
            StepSchedule::new(s.s0, s.s1, self.iterations)?;
            if !(s.rho > 0.0) {
                return Err(Error::invalid("rho must be positive"));
            }
        } else if !(s.ecm_q > 1.0) || s.ecm_halvings == 0 {
            return Err(Error::invalid("ECM mapping needs q > 1 and at least one halving"));
        }
        if !(s.p_std > 0.0) {
            return Err(Error::invalid("P_std must be positive"));
        }
        if !(self.objective.beta >= 0.0) || !(self.objective.huber_c >= 0.0) {
            return Err(Error::invalid("beta and huber_c must be nonnegative"));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.data_dim == 0 {
            return Err(Error::invalid("batch size, iterations and data dimension must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_rate) {
            return Err(Error::invalid("EMA rate must lie in [0, 1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }

    pub fn consistency_net(&self) -> Result<ConsistencyNet> {
        ConsistencyNet::new(self.model, self.data_dim)
    }

    pub fn encoder_net(&self) -> Result<Encoder> {
        Encoder::new(self.encoder, self.data_dim)
    }

    pub fn weighting(&self) -> WeightingSpec {
        WeightingSpec {
            kind: self.objective.weighting,
            beta: self.objective.beta,
            sigma_data: self.kernel.sigma_data,
        }
    }

    pub fn step_schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.schedule.s0, self.schedule.s1, self.iterations)
    }

    pub fn ecm_mapping(&self) -> EcmMapping {
        EcmMapping {
            k: self.schedule.ecm_k,
            b: self.schedule.ecm_b,
            q: self.schedule.ecm_q,
            d: self.iterations.div_ceil(self.schedule.ecm_halvings).max(1),
            sigma_min: self.kernel.sigma_min,
        }
    }

    /// Karras grid in use at iteration `k` (iCT mode).
    pub fn grid_at(&self, k: u64) -> Result<TimeGrid> {
        let n = self.step_schedule()?.step_count(k);
        karras_grid(n, self.kernel.sigma_min, self.kernel.sigma_max, self.schedule.rho)
    }
}

/// Random quantities of one iteration, drawn up front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub x0: Tensor,
    /// Standard normal noise; already reordered for the minibatch-OT coupling.
    pub eps: Tensor,
    /// Later time per row.
    pub t: Vec<f64>,
    /// Earlier time per row.
    pub r: Vec<f64>,
    /// `lambda_ct` per row.
    pub weights: Vec<f64>,
    pub lambda_kl: f64,
    /// Grid size in iCT mode, 0 in ECM mode.
    pub n_k: usize,
}

pub fn draw_step(cfg: &TrainConfig, k: u64, x0: Tensor, rng: &mut DetRng) -> Result<StepDraw> {
    let b = x0.rows();
    let weighting = cfg.weighting();
    let kernel = &cfg.kernel;
    let (mut t, mut r) = (Vec::with_capacity(b), Vec::with_capacity(b));
    let (lambda_kl, n_k) = match cfg.schedule.mode {
        ScheduleMode::Ict => {
            let grid = cfg.grid_at(k)?;
            let sampler = DiscreteLognormal::new(&grid, cfg.schedule.p_mean, cfg.schedule.p_std)?;
            for _ in 0..b {
                let i = sampler.sample(rng);
                r.push(grid.sigmas[i]);
                t.push(grid.sigmas[i + 1]);
            }
            (weighting.lambda_kl(Some(&grid))?, grid.len())
        }
        ScheduleMode::Ecm => {
            let map = cfg.ecm_mapping();
            for _ in 0..b {
                let ti = sample_continuous_lognormal(
                    cfg.schedule.p_mean,
                    cfg.schedule.p_std,
                    kernel.sigma_min,
                    kernel.sigma_max,
                    rng,
                );
                t.push(ti);
                r.push(map.r(ti, k));
            }
            // The adaptive KL scale references the gap at the largest time.
            let top = TimeGrid {
                sigmas: vec![map.r(kernel.sigma_max, k), kernel.sigma_max],
                rho: 1.0,
            };
            (weighting.lambda_kl(Some(&top))?, 0)
        }
    };
    // A pair collapsed onto sigma_min carries no consistency signal.
    let weights = t
        .iter()
        .zip(&r)
        .map(|(&ti, &ri)| if ri < ti { weighting.lambda_ct(ti, ri) } else { Ok(0.0) })
        .collect::<Result<Vec<_>>>()?;
    let mut eps = rng.normal_tensor(x0.shape());
    if cfg.coupling == CouplingKind::MinibatchOt {
        let perm = couplings::minibatch_ot_pairing(&x0, &eps)?;
        eps = couplings::permute_rows(&eps, &perm);
    }
    Ok(StepDraw {
        x0,
        eps,
        t,
        r,
        weights,
        lambda_kl,
        n_k,
    })
}

/// `sqrt(||x - y||^2 + c^2) - c` over all entries.
pub fn pseudo_huber(x: &Tensor, y: &Tensor, c: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "pseudo_huber",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    if !(c >= 0.0) {
        return Err(Error::invalid("pseudo-Huber constant must be nonnegative"));
    }
    let sq: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(sq + c * c) - c)
}

/// Row-wise pseudo-Huber distance on the tape, `[B, d] x [B, d] -> [B]`.
pub fn pseudo_huber_rows(tape: &mut Tape, x: Var, y: Var, c: f64) -> Result<Var> {
    let diff = tape.sub(x, y)?;
    let sq = tape.square(diff)?;
    let ss = tape.sum_axis(sq, 1)?;
    let shifted = tape.add_scalar(ss, c * c)?;
    let root = tape.sqrt(shifted)?;
    tape.add_scalar(root, -c)
}

fn column(values: impl Iterator<Item = f64>) -> Tensor {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Tensor::new(vec![n, 1], v).expect("column")
}

/// Loss nodes recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub consistency: Var,
    pub kl: Option<Var>,
}

/// `x_s = a_s x0 + s x1` row by row, differentiable in `x1`.
fn perturb_tape(
    tape: &mut Tape,
    kernel: &TransitionKernel,
    x0: &Tensor,
    x1: Var,
    times: &[f64],
) -> Result<Var> {
    let mut ax0 = x0.clone();
    let w = x0.row_len();
    let mut weights = Vec::with_capacity(times.len());
    for (i, &s) in times.iter().enumerate() {
        let (a, noise_w) = kernel.noise_weight(s)?;
        for v in &mut ax0.data_mut()[i * w..(i + 1) * w] {
            *v *= a;
        }
        weights.push(noise_w);
    }
    let ax0 = tape.constant(ax0);
    let wc = tape.constant(column(weights.into_iter()));
    let noise = tape.mul(x1, wc)?;
    tape.add(ax0, noise)
}

/// Records `lambda_ct d(f_theta(x_t, t), f_target(x_r, r)) + lambda_kl KL`.
///
/// `theta` and `target` are node lists for the online and the frozen
/// parameters; `phi` is present for the variational coupling.
pub fn build_loss(
    tape: &mut Tape,
    cfg: &TrainConfig,
    net: &ConsistencyNet,
    encoder: Option<&Encoder>,
    theta: &[Var],
    target: &[Var],
    phi: Option<&[Var]>,
    draw: &StepDraw,
) -> Result<LossNodes> {
    let eps = tape.constant(draw.eps.clone());
    let (x1, kl) = match (encoder, phi) {
        (Some(enc), Some(phi)) => {
            let x0v = tape.constant(draw.x0.clone());
            let (mean, scale) = enc.forward_tape(tape, phi, x0v)?;
            let noise = tape.mul(scale, eps)?;
            let x1 = tape.add(mean, noise)?;
            let kl = couplings::kl_tape(tape, mean, scale, cfg.objective.kl_reduction)?;
            (x1, Some(kl))
        }
        _ => (eps, None),
    };
    let x_t = perturb_tape(tape, &cfg.kernel, &draw.x0, x1, &draw.t)?;
    let x_r = perturb_tape(tape, &cfg.kernel, &draw.x0, x1, &draw.r)?;
    let f_t = net.forward_tape(tape, theta, &cfg.kernel, x_t, &draw.t)?;
    let f_r = net.forward_tape(tape, target, &cfg.kernel, x_r, &draw.r)?;
    let dist = pseudo_huber_rows(tape, f_t, f_r, cfg.objective.huber_c)?;
    let w = tape.constant(Tensor::vector(draw.weights.clone()));
    let weighted = tape.mul(dist, w)?;
    let consistency = tape.mean(weighted)?;
    let total = match kl {
        Some(kl) => {
            let scaled = tape.scale(kl, draw.lambda_kl)?;
            tape.add(consistency, scaled)?
        }
        None => consistency,
    };
    Ok(LossNodes {
        total,
        consistency,
        kl,
    })
}

/// Scalar loss values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub consistency: f64,
    pub kl: f64,
    pub lambda_kl: f64,
    pub total: f64,
}

/// Loss value and gradients for online parameters `theta`, frozen target
/// `target` and encoder parameters `phi`.
pub fn loss_and_gradients(
    cfg: &TrainConfig,
    theta: &ParamSet,
    target: &ParamSet,
    phi: Option<&ParamSet>,
    draw: &StepDraw,
    want_phi_grad: bool,
) -> Result<(LossValues, Vec<Tensor>, Option<Vec<Tensor>>)> {
    let net = cfg.consistency_net()?;
    let encoder = match phi {
        Some(_) => Some(cfg.encoder_net()?),
        None => None,
    };
    let mut tape = Tape::new();
    let tv = theta.to_tape(&mut tape, true);
    let fv = target.to_tape(&mut tape, false);
    let pv = phi.map(|p| p.to_tape(&mut tape, want_phi_grad));
    let nodes = build_loss(
        &mut tape,
        cfg,
        &net,
        encoder.as_ref(),
        &tv,
        &fv,
        pv.as_deref(),
        draw,
    )?;
    let value = |v: Var| tape.value(v).data()[0];
    let values = LossValues {
        consistency: value(nodes.consistency),
        kl: nodes.kl.map(value).unwrap_or(0.0),
        lambda_kl: if nodes.kl.is_some() { draw.lambda_kl } else { 0.0 },
        total: value(nodes.total),
    };
    if !values.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut grads = tape.backward(nodes.total)?;
    let gt = tv.iter().map(|&v| grads.take(v)).collect();
    let gp = match (&pv, want_phi_grad) {
        (Some(pv), true) => Some(pv.iter().map(|&v| grads.take(v)).collect()),
        _ => None,
    };
    Ok((values, gt, gp))
}

/// Loss value only, for finite-difference checks.
pub fn loss_value(
    cfg: &TrainConfig,
    theta: &ParamSet,
    target: &ParamSet,
    phi: Option<&ParamSet>,
    draw: &StepDraw,
) -> Result<LossValues> {
    let net = cfg.consistency_net()?;
    let encoder = match phi {
        Some(_) => Some(cfg.encoder_net()?),
        None => None,
    };
    let mut tape = Tape::new();
    let tv = theta.to_tape(&mut tape, false);
    let fv = target.to_tape(&mut tape, false);
    let pv = phi.map(|p| p.to_tape(&mut tape, false));
    let nodes = build_loss(
        &mut tape,
        cfg,
        &net,
        encoder.as_ref(),
        &tv,
        &fv,
        pv.as_deref(),
        draw,
    )?;
    let value = |v: Var| tape.value(v).data()[0];
    Ok(LossValues {
        consistency: value(nodes.consistency),
        kl: nodes.kl.map(value).unwrap_or(0.0),
        lambda_kl: if nodes.kl.is_some() { draw.lambda_kl } else { 0.0 },
        total: value(nodes.total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub consistency: f64,
    pub kl: f64,
    pub lambda_kl: f64,
    pub total: f64,
    pub grad_norm_pre_clip: f64,
    pub n_k: usize,
}

/// Encoder parameters, their EMA shadow and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderState {
    pub phi: ParamSet,
    pub phi_ema: ParamSet,
    pub moments: Moments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: ParamSet,
    pub theta_ema: ParamSet,
    pub theta_moments: Moments,
    pub encoder: Option<EncoderState>,
    pub k: u64,
    pub rng: DetRng,
}

/// Why an iteration made no parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedStep {
    pub k: u64,
    pub error: Error,
}

impl TrainState {
    /// Fresh state: `theta` initialized from the seed, encoder present only
    /// for the variational coupling, EMA shadows equal to the live weights.
    pub fn init(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = DetRng::with_stream(seed, 1);
        let theta = cfg.consistency_net()?.init(&mut init_rng);
        let encoder = if cfg.coupling == CouplingKind::Variational {
            let phi = cfg.encoder_net()?.init(&mut init_rng);
            Some(EncoderState {
                phi_ema: phi.clone(),
                moments: Moments::zeros_like(&phi),
                phi,
            })
        } else {
            None
        };
        Ok(TrainState {
            theta_ema: theta.clone(),
            theta_moments: Moments::zeros_like(&theta),
            theta,
            encoder,
            k: 0,
            rng: DetRng::with_stream(seed, 0),
        })
    }

    /// Runs one iteration on a fresh batch from `data`.
    ///
    /// A non-finite loss or gradient leaves parameters, moments and EMA
    /// shadows untouched; the iteration counter and random stream still
    /// advance so the run makes progress.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        data: &GaussianMixture,
    ) -> core::result::Result<LossBreakdown, SkippedStep> {
        let x0 = data.sample(cfg.batch_size, &mut self.rng);
        let k = self.k;
        self.k += 1;
        let out = draw_step(cfg, k, x0, &mut self.rng)
            .and_then(|draw| self.apply_draw(cfg, &draw).map(|b| (b, draw.n_k)));
        match out {
            Ok((mut b, n_k)) => {
                b.n_k = n_k;
                Ok(b)
            }
            Err(error) => Err(SkippedStep { k, error }),
        }
    }

    /// Gradient step for a prepared draw.
    pub fn apply_draw(&mut self, cfg: &TrainConfig, draw: &StepDraw) -> Result<LossBreakdown> {
        let phi = self.encoder.as_ref().map(|e| &e.phi);
        let (values, mut gt, gp) =
            loss_and_gradients(cfg, &self.theta, &self.theta, phi, draw, true)?;
        let mut gp = gp.unwrap_or_default();
        let pre = clip_global_norm(&mut [&mut gt, &mut gp], cfg.clip_norm);
        if !pre.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let o = &cfg.optimizer;
        let lr = o.lr_at(self.theta_moments.step);
        let mut theta = self.theta.clone();
        let mut tm = self.theta_moments.clone();
        optimizer_step(o.kind, &mut theta, &mut tm, &gt, lr, o.beta1, o.beta2, o.eps)?;
        let mut enc = self.encoder.clone();
        if let Some(e) = enc.as_mut() {
            optimizer_step(o.kind, &mut e.phi, &mut e.moments, &gp, lr, o.beta1, o.beta2, o.eps)?;
        }
        if !theta.all_finite() || !enc.as_ref().is_none_or(|e| e.phi.all_finite()) {
            return Err(Error::NonFinite("parameter update"));
        }
        ema_update(&mut self.theta_ema, &theta, cfg.ema_rate)?;
        if let Some(e) = enc.as_mut() {
            ema_update(&mut e.phi_ema, &e.phi.clone(), cfg.ema_rate)?;
        }
        self.theta = theta;
        self.theta_moments = tm;
        self.encoder = enc;
        Ok(LossBreakdown {
            consistency: values.consistency,
            kl: values.kl,
            lambda_kl: values.lambda_kl,
            total: values.total,
            grad_norm_pre_clip: pre,
            n_k: draw.n_k,
        })
    }
}

/// Mean over coordinates of the per-coordinate variance (unbiased) of the
/// consistency-network gradient across the given draws, at fixed parameters.
pub fn grad_variance_of_draws(
    cfg: &TrainConfig,
    state: &TrainState,
    draws: &[StepDraw],
) -> Result<f64> {
    if draws.len() < 2 {
        return Err(Error::invalid("gradient variance needs at least 2 probes"));
    }
    let phi = state.encoder.as_ref().map(|e| &e.phi);
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(draws.len());
    for d in draws {
        let (_, gt, _) = loss_and_gradients(cfg, &state.theta, &state.theta, phi, d, false)?;
        samples.push(gt.iter().flat_map(|t| t.data().iter().copied()).collect());
    }
    // Pairwise form of the unbiased variance: exactly zero for identical draws.
    let m = samples.len();
    let dims = samples[0].len();
    let mut total = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            total += samples[a]
                .iter()
                .zip(&samples[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    Ok(total / (m * (m - 1)) as f64 / dims as f64)
}

/// `probes` independent minibatch gradients at the current parameters.
pub fn grad_variance_probe(
    cfg: &TrainConfig,
    state: &TrainState,
    data: &GaussianMixture,
    probes: usize,
    batch_size: usize,
    rng: &mut DetRng,
) -> Result<f64> {
    let draws = (0..probes)
        .map(|_| {
            let x0 = data.sample(batch_size, rng);
            draw_step(cfg, state.k, x0, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    grad_variance_of_draws(cfg, state, &draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_huber_examples() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(pseudo_huber(&x, &x, 0.06).unwrap(), 0.0);
        let y = Tensor::vector(vec![4.0, 6.0]);
        assert_eq!(pseudo_huber(&x, &y, 0.0).unwrap(), 5.0);
        assert!(pseudo_huber(&x, &Tensor::vector(vec![1.0]), 0.1).is_err());
    }
}
