//! Transition kernels `x_t = a_t x0 + b_t x1` and the boundary-respecting
//! network scalings.
//!
//! Couplings always hand out unit-scale noise `x1`; the kernel owns the
//! noise scale. For both kernels the effective multiplier on that unit noise
//! is `t` itself, so `x_t = a_t x0 + t x1` with `a_t = 1` (VE) or
//! `a_t = 1 - t / sigma_max` (LI).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelKind {
    /// Variance exploding: `a_t = 1`, `b_t = t`.
    Ve,
    /// Linear interpolation: `a_t = 1 - t/sigma_max`, noise weight `t`.
    Li,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TransitionKernel {
    pub kind: KernelKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_data: f64,
}

/// `(c_in, c_skip, c_out)` at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalings {
    pub c_in: f64,
    pub c_skip: f64,
    pub c_out: f64,
}

impl TransitionKernel {
    pub fn new(kind: KernelKind, sigma_min: f64, sigma_max: f64, sigma_data: f64) -> Result<Self> {
        let k = TransitionKernel {
            kind,
            sigma_min,
            sigma_max,
            sigma_data,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min > 0.0
            && self.sigma_min < self.sigma_max
            && self.sigma_max.is_finite()
            && self.sigma_data > 0.0
            && self.sigma_data.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!(
                "kernel requires 0 < sigma_min < sigma_max and sigma_data > 0, got {self:?}"
            )))
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if t >= self.sigma_min && t <= self.sigma_max {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: "time",
                value: t,
                lo: self.sigma_min,
                hi: self.sigma_max,
            })
        }
    }

    fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            KernelKind::Ve => 1.0,
            KernelKind::Li => 1.0 - t / self.sigma_max,
        }
    }

    /// `(a_t, b_t)` as written for the kernel: VE gives `(1, t)`, LI gives
    /// `(1 - t/sigma_max, t/sigma_max)`. LI noise is additionally scaled by
    /// `sigma_max`; see [`TransitionKernel::noise_weight`].
    pub fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        Ok(match self.kind {
            KernelKind::Ve => (1.0, t),
            KernelKind::Li => (self.alpha(t), t / self.sigma_max),
        })
    }

    /// `(a_t, w_t)` where `w_t` multiplies unit-scale noise. Equals `t` for both kernels.
    pub fn noise_weight(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        Ok((self.alpha(t), t))
    }

    /// `x_t = a_t x0 + t x1`.
    pub fn perturb(&self, x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
        let (a, w) = self.noise_weight(t)?;
        if x0.shape() != x1.shape() {
            return Err(Error::ShapeMismatch {
                op: "perturb",
                lhs: x0.shape().to_vec(),
                rhs: x1.shape().to_vec(),
            });
        }
        x0.zip_with(x1, "perturb", |x0, x1| a * x0 + w * x1)
    }

    pub fn scalings(&self, sigma: f64) -> Result<Scalings> {
        self.check(sigma)?;
        let sd2 = self.sigma_data * self.sigma_data;
        let shifted = sigma - self.sigma_min;
        Ok(match self.kind {
            KernelKind::Ve => Scalings {
                c_in: 1.0 / libm::sqrt(sd2 + sigma * sigma),
                c_skip: sd2 / (shifted * shifted + sd2),
                c_out: shifted * self.sigma_data / libm::sqrt(sigma * sigma + sd2),
            },
            KernelKind::Li => {
                let alpha = self.alpha(sigma);
                let c_in = 1.0 / libm::sqrt(sd2 * alpha * alpha + sigma * sigma);
                let beta = 1.0 - shifted / (self.sigma_max - self.sigma_min);
                Scalings {
                    c_in,
                    c_skip: sd2 * beta / (shifted * shifted + sd2 * beta * beta),
                    c_out: shifted * self.sigma_data * c_in,
                }
            }
        })
    }

    /// `c_skip x + c_out F`.
    pub fn consistency_output(&self, raw: &Tensor, x: &Tensor, sigma: f64) -> Result<Tensor> {
        let s = self.scalings(sigma)?;
        if raw.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "consistency_output",
                lhs: raw.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        if s.c_out == 0.0 {
            return Ok(x.clone());
        }
        x.zip_with(raw, "consistency_output", |x, f| s.c_skip * x + s.c_out * f)
    }
}
