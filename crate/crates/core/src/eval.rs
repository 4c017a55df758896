//! Sample-quality distances, aggregate-posterior diagnostics and the
//! chained consistency bound on the reconstruction error.

use alloc::vec;
use alloc::vec::Vec;

use crate::couplings::{kl_per_point, reparameterize, KlReduction};
use crate::data::GaussianMixture;
use crate::error::{Error, Result};
use crate::kernels::TransitionKernel;
use crate::rng::DetRng;
use crate::sampling::Model;
use crate::tensor::Tensor;

fn check_sets(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 || a.row_len() != b.row_len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::invalid("distance between sample sets needs at least 2 points each"));
    }
    Ok(())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of `k(a_i, b_j)` over all pairs, or over `i != j` when `distinct`.
fn pair_mean(a: &Tensor, b: &Tensor, distinct: bool, k: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let ai = a.row(i);
        let mut row = 0.0;
        for j in 0..b.rows() {
            if distinct && i == j {
                continue;
            }
            row += k(dist2(ai, b.row(j)));
        }
        total += row;
    }
    let pairs = if distinct {
        a.rows() * (a.rows() - 1)
    } else {
        a.rows() * b.rows()
    };
    total / pairs as f64
}

/// `2 E|a - b| - E|a - a'| - E|b - b'|` with the within-set terms averaged
/// over distinct pairs. The estimate is unbiased and may dip below zero
/// when the two distributions agree.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_sets("energy_distance", a, b)?;
    let cross = pair_mean(a, b, false, libm::sqrt);
    let aa = pair_mean(a, a, true, libm::sqrt);
    let bb = pair_mean(b, b, true, libm::sqrt);
    Ok(2.0 * cross - aa - bb)
}

/// Median pairwise distance of the pooled sets, using at most `cap` points of each.
pub fn median_heuristic(a: &Tensor, b: &Tensor, cap: usize) -> f64 {
    let mut pts: Vec<&[f64]> = Vec::new();
    pts.extend((0..a.rows().min(cap)).map(|i| a.row(i)));
    pts.extend((0..b.rows().min(cap)).map(|i| b.row(i)));
    let mut d = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(libm::sqrt(dist2(pts[i], pts[j])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Squared MMD with a Gaussian kernel of bandwidth `h`, V-statistic form
/// (always nonnegative).
pub fn mmd_rbf_with_bandwidth(a: &Tensor, b: &Tensor, h: f64) -> Result<f64> {
    check_sets("mmd_rbf", a, b)?;
    if !(h > 0.0) {
        return Err(Error::invalid("MMD bandwidth must be positive"));
    }
    let k = |d2: f64| libm::exp(-d2 / (2.0 * h * h));
    let v = pair_mean(a, a, false, k) + pair_mean(b, b, false, k) - 2.0 * pair_mean(a, b, false, k);
    Ok(v.max(0.0))
}

/// Squared RBF MMD with the bandwidth chosen by the median heuristic.
pub fn mmd_rbf(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_sets("mmd_rbf", a, b)?;
    mmd_rbf_with_bandwidth(a, b, median_heuristic(a, b, 512))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorDiagnostics {
    /// Norm of the mean of the aggregate noise sample.
    pub mean_norm: f64,
    /// Frobenius distance of its covariance from the identity.
    pub cov_deviation: f64,
    /// Average analytic KL to the prior, summed over coordinates.
    pub kl_mean: f64,
}

fn mean_and_cov(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.row_len());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = x.row(i);
        for p in 0..d {
            for q in 0..d {
                cov[p * d + q] += (r[p] - mean[p]) * (r[q] - mean[q]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for c in &mut cov {
        *c /= denom;
    }
    (mean, cov)
}

/// One noise draw per data point through the model's coupling, compared
/// with the standard normal prior.
pub fn posterior_prior_diagnostics(
    model: &Model,
    x0: &Tensor,
    rng: &mut DetRng,
) -> Result<PosteriorDiagnostics> {
    let eps = rng.normal_tensor(x0.shape());
    let (x1, kl_mean) = match &model.encoder {
        Some((enc, phi)) => {
            let post = enc.forward(phi, x0)?;
            let kl = kl_per_point(&post, KlReduction::SumDims)?;
            let kl_mean = kl.iter().sum::<f64>() / kl.len().max(1) as f64;
            (reparameterize(&post, &eps)?, kl_mean)
        }
        None => (eps, 0.0),
    };
    let (mean, cov) = mean_and_cov(&x1);
    let d = x1.row_len();
    let mean_norm = libm::sqrt(mean.iter().map(|m| m * m).sum());
    let mut dev = 0.0;
    for p in 0..d {
        for q in 0..d {
            let target = if p == q { 1.0 } else { 0.0 };
            dev += (cov[p * d + q] - target) * (cov[p * d + q] - target);
        }
    }
    Ok(PosteriorDiagnostics {
        mean_norm,
        cov_deviation: libm::sqrt(dev),
        kl_mean,
    })
}

/// Bound check for one partition size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainTerm {
    pub n: usize,
    /// Batch mean of `(sum_i |delta_i|)^2`.
    pub triangle: f64,
    /// Batch mean of `N sum_i |delta_i|^2`.
    pub rhs: f64,
    /// Rows where either inequality fails by more than the tolerance.
    pub violations: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ElboChainResult {
    /// Batch mean of `|f(psi_min, sigma_min) - f(psi_max, sigma_max)|^2`, the
    /// quantity the chain bounds exactly.
    pub lhs: f64,
    /// Batch mean of `|x0 - f(psi_max, sigma_max)|^2`.
    pub lhs_data: f64,
    pub decoder_sigma: f64,
    /// Batch-mean KL of the coupling used for `x1`.
    pub kl: f64,
    /// `lhs / (2 sigma^2) + kl`.
    pub nll_bound: f64,
    pub terms: Vec<ChainTerm>,
    /// `rhs` is nondecreasing along the requested partition sizes.
    pub rhs_monotone: bool,
}

impl ElboChainResult {
    pub fn holds(&self) -> bool {
        self.terms.iter().all(|t| t.holds)
    }

    pub fn violations(&self) -> usize {
        self.terms.iter().map(|t| t.violations).sum()
    }
}

/// Absolute slack allowed in the per-row inequalities.
pub const CHAIN_TOLERANCE: f64 = 1e-9;

/// Evaluates the chain for an arbitrary consistency function `f(x, sigma)`
/// on the uniform partition of `[sigma_min, sigma_max]`, with one shared
/// `(x0, x1)` pair per row for every term.
pub fn elbo_chain_for<F>(
    mut f: F,
    kernel: &TransitionKernel,
    x0: &Tensor,
    x1: &Tensor,
    ns: &[usize],
    decoder_sigma: f64,
    kl: f64,
) -> Result<ElboChainResult>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if ns.iter().any(|&n| n < 2) || ns.is_empty() {
        return Err(Error::invalid("chain partitions need N >= 2"));
    }
    if !(decoder_sigma > 0.0) {
        return Err(Error::invalid("decoder sigma must be positive"));
    }
    let rows = x0.rows();
    let eval_at = |f: &mut F, t: f64| -> Result<Tensor> {
        let psi = kernel.perturb(x0, x1, t)?;
        f(&psi, t)
    };
    let start = eval_at(&mut f, kernel.sigma_min)?;
    let end = eval_at(&mut f, kernel.sigma_max)?;
    let per_row_lhs: Vec<f64> = (0..rows).map(|i| dist2(start.row(i), end.row(i))).collect();
    let lhs = per_row_lhs.iter().sum::<f64>() / rows as f64;
    let lhs_data = (0..rows).map(|i| dist2(x0.row(i), end.row(i))).sum::<f64>() / rows as f64;
    let mut terms = Vec::with_capacity(ns.len());
    for &n in ns {
        let span = kernel.sigma_max - kernel.sigma_min;
        let mut sum_norm = vec![0.0; rows];
        let mut sum_sq = vec![0.0; rows];
        let mut prev = start.clone();
        for i in 1..=n {
            let next = if i == n {
                end.clone()
            } else {
                eval_at(&mut f, kernel.sigma_min + span * i as f64 / n as f64)?
            };
            for r in 0..rows {
                let d2 = dist2(next.row(r), prev.row(r));
                sum_norm[r] += libm::sqrt(d2);
                sum_sq[r] += d2;
            }
            prev = next;
        }
        let mut violations = 0;
        let (mut tri_total, mut rhs_total) = (0.0, 0.0);
        for r in 0..rows {
            let tri = sum_norm[r] * sum_norm[r];
            let rhs = n as f64 * sum_sq[r];
            let ok = per_row_lhs[r].is_finite()
                && per_row_lhs[r] <= tri + CHAIN_TOLERANCE
                && tri <= rhs + CHAIN_TOLERANCE;
            if !ok {
                violations += 1;
            }
            tri_total += tri;
            rhs_total += rhs;
        }
        terms.push(ChainTerm {
            n,
            triangle: tri_total / rows as f64,
            rhs: rhs_total / rows as f64,
            violations,
            holds: violations == 0,
        });
    }
    let rhs_monotone = terms.windows(2).all(|w| w[0].rhs <= w[1].rhs + CHAIN_TOLERANCE);
    Ok(ElboChainResult {
        lhs,
        lhs_data,
        decoder_sigma,
        kl,
        nll_bound: lhs / (2.0 * decoder_sigma * decoder_sigma) + kl,
        terms,
        rhs_monotone,
    })
}

/// Chain check for a trained model, drawing `x1` once from its coupling.
pub fn check_elbo_chain(
    model: &Model,
    x0: &Tensor,
    ns: &[usize],
    decoder_sigma: f64,
    rng: &mut DetRng,
) -> Result<ElboChainResult> {
    let eps = rng.normal_tensor(x0.shape());
    let (x1, kl) = match &model.encoder {
        Some((enc, phi)) => {
            let post = enc.forward(phi, x0)?;
            let kl = kl_per_point(&post, KlReduction::SumDims)?;
            (reparameterize(&post, &eps)?, kl.iter().sum::<f64>() / kl.len().max(1) as f64)
        }
        None => (eps, 0.0),
    };
    elbo_chain_for(
        |x, s| model.net.forward(model.theta, &model.kernel, x, s),
        &model.kernel,
        x0,
        &x1,
        ns,
        decoder_sigma,
        kl,
    )
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// One-step samples vs fresh data, clamped at zero.
    pub energy_distance: f64,
    /// Multistep samples vs the same data, clamped at zero.
    pub energy_distance_multistep: f64,
    pub mmd_rbf: f64,
    pub posterior_mean_norm: f64,
    pub posterior_cov_deviation: f64,
    pub kl_mean: f64,
    pub elbo_chain: ElboChainResult,
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub n_samples: usize,
    pub multistep_times: Vec<f64>,
    pub chain_ns: Vec<usize>,
    pub chain_batch: usize,
    pub decoder_sigma: f64,
}

/// Full report from independent random streams derived from `seed`.
pub fn evaluate(
    model: &Model,
    data: &GaussianMixture,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalReport> {
    let n = settings.n_samples;
    let reference = data.sample(n, &mut DetRng::with_stream(seed, 10));
    let one = model.sample(n, &[], &mut DetRng::with_stream(seed, 11))?;
    let multi = model.sample(n, &settings.multistep_times, &mut DetRng::with_stream(seed, 12))?;
    let energy = energy_distance(&one.samples, &reference)?;
    let energy_multi = energy_distance(&multi.samples, &reference)?;
    let mmd = mmd_rbf(&one.samples, &reference)?;
    let post_data = data.sample(n, &mut DetRng::with_stream(seed, 13));
    let diag = posterior_prior_diagnostics(model, &post_data, &mut DetRng::with_stream(seed, 14))?;
    let mut chain_rng = DetRng::with_stream(seed, 15);
    let chain_x0 = data.sample(settings.chain_batch, &mut chain_rng);
    let chain = check_elbo_chain(
        model,
        &chain_x0,
        &settings.chain_ns,
        settings.decoder_sigma,
        &mut chain_rng,
    )?;
    Ok(EvalReport {
        energy_distance: energy.max(0.0),
        energy_distance_multistep: energy_multi.max(0.0),
        mmd_rbf: mmd,
        posterior_mean_norm: diag.mean_norm,
        posterior_cov_deviation: diag.cov_deviation,
        kl_mean: diag.kl_mean,
        elbo_chain: chain,
    })
}
