//! One-step and multistep generation with a trained consistency network.
//!
//! Between steps the intermediate sample is re-noised with noise drawn from
//! the encoder posterior `g_phi(x1 | x)`; without an encoder the noise is
//! standard normal, which gives the usual consistency multistep sampler.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::networks::{ConsistencyNet, Encoder, ParamSet};
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Trained networks needed for generation and evaluation.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub kernel: TransitionKernel,
    pub net: ConsistencyNet,
    pub theta: &'a ParamSet,
    pub encoder: Option<(Encoder, &'a ParamSet)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// Standard normal draw `z` the chain starts from, `[B, d]`.
    pub initial_noise: Tensor,
    /// One-step outputs `f(sigma_max z, sigma_max)`.
    pub one_step: Tensor,
    /// Final samples after all re-noising steps.
    pub samples: Tensor,
}

fn check_time_points(kernel: &TransitionKernel, taus: &[f64]) -> Result<()> {
    let mut prev = kernel.sigma_max;
    for &tau in taus {
        if !(tau > kernel.sigma_min && tau < prev) {
            return Err(Error::OutOfRange {
                what: "sampling time point",
                value: tau,
                lo: kernel.sigma_min,
                hi: prev,
            });
        }
        prev = tau;
    }
    Ok(())
}

impl Model<'_> {
    pub fn data_dim(&self) -> usize {
        self.net.data_dim
    }

    /// Noise for re-noising `x`: `g_mu(x) + g_sigma(x) eps`, or `eps` alone.
    pub fn renoise_draw(&self, x: &Tensor, rng: &mut DetRng) -> Result<Tensor> {
        let eps = rng.normal_tensor(x.shape());
        match &self.encoder {
            Some((enc, phi)) => {
                let post = enc.forward(phi, x)?;
                crate::couplings::reparameterize(&post, &eps)
            }
            None => Ok(eps),
        }
    }

    /// Draws `count` samples with intermediate times `taus` (strictly
    /// decreasing, inside `(sigma_min, sigma_max)`).
    pub fn sample(&self, count: usize, taus: &[f64], rng: &mut DetRng) -> Result<SampleOutput> {
        check_time_points(&self.kernel, taus)?;
        let d = self.data_dim();
        let z = rng.normal_tensor(&[count, d]);
        let start = z.scale(self.kernel.sigma_max);
        let one_step = self.net.forward(self.theta, &self.kernel, &start, self.kernel.sigma_max)?;
        let mut x = one_step.clone();
        for &tau in taus {
            let x1 = self.renoise_draw(&x, rng)?;
            let x_hat = self.kernel.perturb(&x, &x1, tau)?;
            x = self.net.forward(self.theta, &self.kernel, &x_hat, tau)?;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("samples"));
        }
        Ok(SampleOutput {
            initial_noise: z,
            one_step,
            samples: x,
        })
    }

    /// Same chain with standard normal re-noising, ignoring any encoder.
    pub fn sample_baseline_multistep(
        &self,
        count: usize,
        taus: &[f64],
        rng: &mut DetRng,
    ) -> Result<SampleOutput> {
        let plain = Model {
            encoder: None,
            ..self.clone()
        };
        plain.sample(count, taus, rng)
    }
}

/// Intermediate times for a `steps`-step sampler: the first `steps - 1`
/// entries of `defaults`, which must be decreasing.
pub fn time_points_for_steps(steps: usize, defaults: &[f64]) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("number of sampling steps must be at least 1"));
    }
    let extra = steps - 1;
    if extra > defaults.len() {
        return Err(Error::invalid(alloc::format!(
            "{steps} steps requested but only {} intermediate times configured",
            defaults.len()
        )));
    }
    Ok(defaults[..extra].to_vec())
}
