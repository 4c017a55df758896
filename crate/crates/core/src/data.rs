//! Isotropic Gaussian mixtures used as toy data.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    /// Two components at `(0, 0.5)` and `(0, -0.5)`, std 0.05, equal weights.
    pub fn two_gaussians_vertical() -> Self {
        GaussianMixture {
            means: alloc::vec![alloc::vec![0.0, 0.5], alloc::vec![0.0, -0.5]],
            std: 0.05,
            weights: alloc::vec![0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::invalid("dataset has no mixture components"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("mixture means must share a positive dimension"));
        }
        if self.weights.len() != self.means.len() {
            return Err(Error::invalid("one weight per mixture component required"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || !(self.weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("mixture weights must be nonnegative with positive sum"));
        }
        if !(self.std > 0.0) {
            return Err(Error::invalid("mixture std must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn component(&self, rng: &mut DetRng) -> usize {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.uniform() * total;
        for (k, w) in self.weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        self.weights.len() - 1
    }

    /// `n` samples as `[n, d]` plus their component labels.
    pub fn sample_labeled(&self, n: usize, rng: &mut DetRng) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = self.component(rng);
            labels.push(k);
            for j in 0..d {
                data.push(self.means[k][j] + self.std * rng.normal());
            }
        }
        (Tensor::new(alloc::vec![n, d], data).expect("sample shape"), labels)
    }

    pub fn sample(&self, n: usize, rng: &mut DetRng) -> Tensor {
        self.sample_labeled(n, rng).0
    }

    /// Per-coordinate standard deviation of the mixture, averaged over coordinates.
    pub fn data_std(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let d = self.dim();
        let mut var = 0.0;
        for j in 0..d {
            let mean: f64 = self
                .means
                .iter()
                .zip(&self.weights)
                .map(|(m, w)| w * m[j])
                .sum::<f64>()
                / total;
            let second: f64 = self
                .means
                .iter()
                .zip(&self.weights)
                .map(|(m, w)| w * (m[j] - mean) * (m[j] - mean))
                .sum::<f64>()
                / total;
            var += second + self.std * self.std;
        }
        libm::sqrt(var / d as f64)
    }
}
