//! Time grids, step-count schedules, time sampling and loss weightings.

use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Ascending noise levels from `sigma_min` to `sigma_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub sigmas: Vec<f64>,
    pub rho: f64,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Gap between the two largest levels.
    pub fn last_gap(&self) -> f64 {
        let n = self.sigmas.len();
        self.sigmas[n - 1] - self.sigmas[n - 2]
    }
}

/// Karras grid `sigma_i = (smin^(1/rho) + i/(N-1) (smax^(1/rho) - smin^(1/rho)))^rho`.
pub fn karras_grid(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<TimeGrid> {
    if n < 2 {
        return Err(Error::invalid(alloc::format!("grid needs at least 2 points, got {n}")));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && rho > 0.0) {
        return Err(Error::invalid("grid requires 0 < sigma_min < sigma_max and rho > 0"));
    }
    let lo = libm::pow(sigma_min, 1.0 / rho);
    let hi = libm::pow(sigma_max, 1.0 / rho);
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| libm::pow(lo + i as f64 / (n - 1) as f64 * (hi - lo), rho))
        .collect();
    sigmas[0] = sigma_min;
    sigmas[n - 1] = sigma_max;
    Ok(TimeGrid { sigmas, rho })
}

/// Doubling schedule for the number of grid points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub s0: usize,
    pub s1: usize,
    pub total_iters: u64,
}

impl StepSchedule {
    pub fn new(s0: usize, s1: usize, total_iters: u64) -> Result<Self> {
        if s0 == 0 || s1 < s0 || total_iters == 0 {
            return Err(Error::invalid("step schedule requires 0 < s0 <= s1 and K > 0"));
        }
        Ok(StepSchedule { s0, s1, total_iters })
    }

    /// `K' = ceil(K / (log2(s1/s0) + 1))`.
    pub fn stage_length(&self) -> u64 {
        let stages = libm::log2(self.s1 as f64 / self.s0 as f64) + 1.0;
        libm::ceil(self.total_iters as f64 / stages) as u64
    }

    /// `N(k) = min(s0 * 2^floor(k/K'), s1) + 1`.
    pub fn step_count(&self, k: u64) -> usize {
        let doublings = (k / self.stage_length()).min(63) as u32;
        let steps = (self.s0 as u128) << doublings;
        steps.min(self.s1 as u128) as usize + 1
    }
}

/// Grid-interval sampler with weights
/// `erf((ln s_{i+1} - Pm)/(sqrt2 Ps)) - erf((ln s_i - Pm)/(sqrt2 Ps))`.
#[derive(Debug, Clone)]
pub struct DiscreteLognormal {
    cumulative: Vec<f64>,
}

pub fn discrete_lognormal_weights(grid: &TimeGrid, p_mean: f64, p_std: f64) -> Vec<f64> {
    let e = |s: f64| libm::erf((libm::log(s) - p_mean) / (SQRT_2 * p_std));
    let raw: Vec<f64> = grid.sigmas.windows(2).map(|w| e(w[1]) - e(w[0])).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        // Entire grid in a numerically flat tail.
        let n = raw.len() as f64;
        raw.iter().map(|_| 1.0 / n).collect()
    }
}

impl DiscreteLognormal {
    pub fn new(grid: &TimeGrid, p_mean: f64, p_std: f64) -> Result<Self> {
        if grid.len() < 2 || !(p_std > 0.0) {
            return Err(Error::invalid("discrete lognormal needs >= 2 grid points and P_std > 0"));
        }
        let mut acc = 0.0;
        let cumulative = discrete_lognormal_weights(grid, p_mean, p_std)
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(DiscreteLognormal { cumulative })
    }

    /// Lower index `i` of the sampled interval `(sigma_i, sigma_{i+1})`, zero-based.
    pub fn sample(&self, rng: &mut DetRng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.uniform() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// `clamp(exp(Pm + Ps z), sigma_min, sigma_max)` for a standard normal `z`.
pub fn continuous_lognormal_from_normal(
    z: f64,
    p_mean: f64,
    p_std: f64,
    sigma_min: f64,
    sigma_max: f64,
) -> f64 {
    libm::exp(p_mean + p_std * z).clamp(sigma_min, sigma_max)
}

pub fn sample_continuous_lognormal(
    p_mean: f64,
    p_std: f64,
    sigma_min: f64,
    sigma_max: f64,
    rng: &mut DetRng,
) -> f64 {
    continuous_lognormal_from_normal(rng.normal(), p_mean, p_std, sigma_min, sigma_max)
}

/// Continuous-time pairing rule producing the earlier time `r` from `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmMapping {
    pub k: f64,
    pub b: f64,
    pub q: f64,
    /// Iterations per halving of the relative gap.
    pub d: u64,
    pub sigma_min: f64,
}

impl EcmMapping {
    /// `n(t) = 1 + k sigmoid(-b t)`.
    pub fn n(&self, t: f64) -> f64 {
        1.0 + self.k / (1.0 + libm::exp(self.b * t))
    }

    /// `(t - r)/t = n(t) / q^ceil(iters/d)` before clamping.
    pub fn relative_gap(&self, t: f64, iters: u64) -> f64 {
        let a = iters.div_ceil(self.d.max(1));
        (self.n(t) / libm::pow(self.q, a as f64)).min(1.0)
    }

    /// `r = t (1 - n(t)/q^a)` clamped into `[sigma_min, t]`; `r == t` only
    /// when `t` itself sits at the floor.
    pub fn r(&self, t: f64, iters: u64) -> f64 {
        let r = t * (1.0 - self.relative_gap(t, iters));
        r.max(self.sigma_min).min(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WeightingKind {
    /// `lambda_ct = 1/(t_{i+1} - t_i)`, `lambda_kl = beta / (last grid gap)`.
    AdaptiveInverseGap,
    /// `lambda_ct = 1/t^2 + 1/sigma_data^2`, `lambda_kl = beta`.
    EdmStyle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingSpec {
    pub kind: WeightingKind,
    pub beta: f64,
    pub sigma_data: f64,
}

impl WeightingSpec {
    pub fn lambda_ct(&self, t_next: f64, t_prev: f64) -> Result<f64> {
        match self.kind {
            WeightingKind::AdaptiveInverseGap => {
                let gap = t_next - t_prev;
                if gap > 0.0 {
                    Ok(1.0 / gap)
                } else {
                    Err(Error::invalid(alloc::format!(
                        "inverse-gap weighting needs t_next > t_prev, got {t_next} <= {t_prev}"
                    )))
                }
            }
            WeightingKind::EdmStyle => {
                Ok(1.0 / (t_next * t_next) + 1.0 / (self.sigma_data * self.sigma_data))
            }
        }
    }

    pub fn lambda_kl(&self, grid: Option<&TimeGrid>) -> Result<f64> {
        match self.kind {
            WeightingKind::AdaptiveInverseGap => {
                let grid = grid.ok_or_else(|| {
                    Error::invalid("adaptive KL weighting needs the current time grid")
                })?;
                if grid.len() < 2 {
                    return Err(Error::invalid("grid needs at least 2 points"));
                }
                Ok(self.beta / grid.last_gap())
            }
            WeightingKind::EdmStyle => Ok(self.beta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_rejections() {
        let g = karras_grid(2, 0.002, 80.0, 1.0).unwrap();
        assert_eq!(g.sigmas, alloc::vec![0.002, 80.0]);
        assert!(karras_grid(1, 0.002, 80.0, 7.0).is_err());
        let g = karras_grid(11, 0.002, 80.0, 7.0).unwrap();
        assert_eq!(g.sigmas[0], 0.002);
        assert_eq!(g.sigmas[10], 80.0);
        // Midpoint re-evaluated by hand: ((0.002^(1/7) + 80^(1/7)) / 2)^7.
        let mid = ((0.002f64.powf(1.0 / 7.0) + 80f64.powf(1.0 / 7.0)) / 2.0).powi(7);
        assert!((g.sigmas[5] - mid).abs() < 1e-12 * mid);
        assert!((g.sigmas[5] - 2.515_218_976_147_159).abs() < 1e-12);
    }

    #[test]
    fn toy_step_schedule() {
        let s = StepSchedule::new(10, 80, 40_000).unwrap();
        assert_eq!(s.stage_length(), 10_000);
        assert_eq!(s.step_count(0), 11);
        assert_eq!(s.step_count(9_999), 11);
        assert_eq!(s.step_count(10_000), 21);
        assert_eq!(s.step_count(20_000), 41);
        assert_eq!(s.step_count(30_000), 81);
        assert_eq!(s.step_count(40_000), 81);
    }

    #[test]
    fn two_point_grid_always_first_interval() {
        let g = karras_grid(2, 0.002, 80.0, 7.0).unwrap();
        let d = DiscreteLognormal::new(&g, -1.1, 2.0).unwrap();
        let mut rng = DetRng::seed_from_u64(0);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 0));
    }

    #[test]
    fn continuous_lognormal_clip() {
        let t = continuous_lognormal_from_normal(0.0, -1.1, 2.0, 0.002, 80.0);
        assert!((t - 0.332_871_083_698_079_5).abs() < 1e-15);
        assert_eq!(continuous_lognormal_from_normal(50.0, -1.1, 2.0, 0.002, 80.0), 80.0);
        assert_eq!(continuous_lognormal_from_normal(-50.0, -1.1, 2.0, 0.002, 80.0), 0.002);
    }

    #[test]
    fn ecm_mapping_examples() {
        let m = EcmMapping {
            k: 8.0,
            b: 1.0,
            q: 2.0,
            d: 1000,
            sigma_min: 0.002,
        };
        assert_eq!(m.n(0.0), 5.0);
        let t = 1.5;
        let iters = 20_000;
        let r = m.r(t, iters);
        let expected = m.n(t) / 2f64.powi(20);
        assert!(((t - r) / t - expected).abs() < 1e-12);
        assert!(r < t);
        // Fresh training: gap saturates, r falls to the floor.
        assert_eq!(m.r(t, 0), 0.002);
    }

    #[test]
    fn weighting_examples() {
        let adaptive = WeightingSpec {
            kind: WeightingKind::AdaptiveInverseGap,
            beta: 30.0,
            sigma_data: 0.5,
        };
        assert_eq!(adaptive.lambda_ct(1.0, 0.5).unwrap(), 2.0);
        assert!(adaptive.lambda_ct(1.0, 1.0).is_err());
        let grid = TimeGrid {
            sigmas: alloc::vec![0.0, 1.0, 4.0],
            rho: 1.0,
        };
        assert_eq!(adaptive.lambda_kl(Some(&grid)).unwrap(), 10.0);
        assert!(adaptive.lambda_kl(None).is_err());
        let edm = WeightingSpec {
            kind: WeightingKind::EdmStyle,
            beta: 10.0,
            sigma_data: 0.5,
        };
        assert_eq!(edm.lambda_ct(1.0, 0.9).unwrap(), 5.0);
        assert_eq!(edm.lambda_ct(1.0, 0.1).unwrap(), 5.0);
        assert_eq!(edm.lambda_kl(None).unwrap(), 10.0);
        assert_eq!(edm.lambda_kl(Some(&grid)).unwrap(), 10.0);
    }

    #[test]
    fn finer_grid_raises_lambda_kl() {
        let w = WeightingSpec {
            kind: WeightingKind::AdaptiveInverseGap,
            beta: 0.001,
            sigma_data: 0.05,
        };
        let mut prev = 0.0;
        for n in [11, 21, 41, 81, 161] {
            let g = karras_grid(n, 0.002, 0.1, 7.0).unwrap();
            let l = w.lambda_kl(Some(&g)).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }
}
