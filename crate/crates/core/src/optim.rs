//! Adam and RAdam updates, global-norm clipping and learning-rate schedules.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::networks::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Adam,
    #[cfg_attr(feature = "serde", serde(rename = "radam"))]
    RAdam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LrSchedule {
    Constant,
    /// `lr_ref / sqrt(max(i / i_ref, 1))`.
    InvSqrt { i_ref: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_schedule: LrSchedule,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("optimizer betas must lie in [0, 1)"));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::invalid("optimizer eps must be nonnegative"));
        }
        if let LrSchedule::InvSqrt { i_ref: 0 } = self.lr_schedule {
            return Err(Error::invalid("i_ref must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::InvSqrt { i_ref } => lr_schedule_inv_sqrt(self.lr, iteration, i_ref),
        }
    }
}

pub fn lr_schedule_inv_sqrt(lr_ref: f64, i: u64, i_ref: u64) -> f64 {
    let ratio = (i as f64 / i_ref as f64).max(1.0);
    lr_ref / libm::sqrt(ratio)
}

/// First and second moment estimates for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Moments {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let z: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Moments {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }

    fn check(&self, params: &ParamSet, grads: &[Tensor]) -> Result<()> {
        let ok = self.m.len() == params.len()
            && grads.len() == params.len()
            && params
                .tensors
                .iter()
                .zip(&self.m)
                .zip(grads)
                .all(|((p, m), g)| p.shape() == m.shape() && p.shape() == g.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("optimizer moments/gradients vs parameters".into()))
        }
    }
}

/// One optimizer update of `params` in place.
pub fn optimizer_step(
    kind: OptimizerKind,
    params: &mut ParamSet,
    moments: &mut Moments,
    grads: &[Tensor],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    moments.check(params, grads)?;
    moments.step += 1;
    let t = moments.step as f64;
    let bc1 = 1.0 - libm::pow(beta1, t);
    let bc2 = 1.0 - libm::pow(beta2, t);
    // RAdam rectification; `None` means the variance term is not yet defined.
    let rect = match kind {
        OptimizerKind::Adam => Some(1.0),
        OptimizerKind::RAdam => {
            let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
            let rho_t = rho_inf - 2.0 * t * libm::pow(beta2, t) / bc2;
            (rho_t > 5.0).then(|| {
                libm::sqrt(
                    (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t),
                )
            })
        }
    };
    for ((p, g), (m, v)) in params
        .tensors
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            pd[i] -= match (kind, rect) {
                (OptimizerKind::Adam, _) => lr * m_hat / (libm::sqrt(vd[i] / bc2) + eps),
                (OptimizerKind::RAdam, Some(r)) => {
                    lr * m_hat * r * libm::sqrt(bc2) / (libm::sqrt(vd[i]) + eps)
                }
                (OptimizerKind::RAdam, None) => lr * m_hat,
            };
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(groups: &mut [&mut [Tensor]], max_norm: f64) -> f64 {
    let norm = libm::sqrt(
        groups
            .iter()
            .flat_map(|g| g.iter())
            .map(Tensor::sq_norm)
            .sum::<f64>(),
    );
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in groups.iter_mut() {
            for t in g.iter_mut() {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
    }
    norm
}
