//! Monte-Carlo checks of closed-form quantities.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use vct_core::couplings::{independent_sample, kl_diag_gaussian_to_standard, KlReduction};
use vct_core::eval::{energy_distance, posterior_prior_diagnostics};
use vct_core::networks::{ConsistencyNet, Encoder, MlpSpec};
use vct_core::sampling::Model;
use vct_core::schedules::{discrete_lognormal_weights, karras_grid, DiscreteLognormal};
use vct_core::{DetRng, KernelKind, Tensor, TransitionKernel};

#[test]
fn li_input_scaling_gives_unit_variance() {
    let mut rng = DetRng::seed_from_u64(31);
    let sigma_data = 0.5;
    let k = TransitionKernel::new(KernelKind::Li, 0.002, 80.0, sigma_data).unwrap();
    let n = 200_000;
    for _ in 0..5 {
        let sigma = 0.002 + rng.uniform() * (80.0 - 0.002);
        let (a, w) = k.noise_weight(sigma).unwrap();
        let c_in = k.scalings(sigma).unwrap().c_in;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = c_in * (a * sigma_data * rng.normal() + w * rng.normal());
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((0.98..=1.02).contains(&var), "sigma {sigma}: variance {var}");
    }
}

fn chi_square_p_value(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    // Merge sparse bins so every expected count is at least 5.
    let (mut stat, mut dof) = (0.0, 0usize);
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        obs += c as f64;
        exp += p * total as f64;
        if exp >= 5.0 {
            stat += (obs - exp) * (obs - exp) / exp;
            dof += 1;
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 {
        stat += (obs - exp) * (obs - exp) / exp;
        dof += 1;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn discrete_lognormal_sampler_passes_chi_square() {
    let grid = karras_grid(41, 0.002, 80.0, 7.0).unwrap();
    let sampler = DiscreteLognormal::new(&grid, -1.1, 2.0).unwrap();
    let probs = discrete_lognormal_weights(&grid, -1.1, 2.0);
    let mut counts = vec![0u64; probs.len()];
    let mut rng = DetRng::seed_from_u64(32);
    for _ in 0..200_000 {
        counts[sampler.sample(&mut rng)] += 1;
    }
    let p = chi_square_p_value(&counts, &probs);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = DetRng::seed_from_u64(33);
    let n = 50_000;
    for _ in 0..10 {
        let mean: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let scale: Vec<f64> = (0..3).map(|_| 0.3 + 1.5 * rng.uniform()).collect();
        let exact = kl_diag_gaussian_to_standard(
            &Tensor::matrix(1, 3, mean.clone()).unwrap(),
            &Tensor::matrix(1, 3, scale.clone()).unwrap(),
            KlReduction::SumDims,
        )
        .unwrap();
        // log q(x) - log p(x) at x ~ q, normalizing constants cancel.
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut v = 0.0;
            for j in 0..3 {
                let z = rng.normal();
                let x = mean[j] + scale[j] * z;
                v += -0.5 * z * z - scale[j].ln() + 0.5 * x * x;
            }
            s += v;
            s2 += v * v;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - exact).abs() < 3.0 * se, "exact {exact}, mc {m} +- {se}");
    }
}

#[test]
fn independent_coupling_is_standard_normal() {
    let mut rng = DetRng::seed_from_u64(34);
    let s = independent_sample(&Tensor::zeros(&[100_000, 2]), &mut rng);
    let n = s.x1.len() as f64;
    let mean = s.x1.sum() / n;
    let var = s.x1.sq_norm() / n - mean * mean;
    assert!(mean.abs() < 0.01);
    assert!((var - 1.0).abs() < 0.01);
}

#[test]
fn energy_distance_separates_distant_gaussians() {
    // Population value for unit Gaussians at distance 10 is close to 20 - 2 * 2/sqrt(pi) ~ 17.7.
    let mut rng = DetRng::seed_from_u64(35);
    let a = rng.normal_tensor(&[500, 2]);
    let b = rng.normal_tensor(&[500, 2]).map(|v| v + 10.0 / 2f64.sqrt());
    let d = energy_distance(&a, &b).unwrap();
    assert!(d > 15.0, "{d}");
    // Common rotation leaves it unchanged up to rounding.
    let rot = |t: &Tensor| {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let mut out = t.clone();
        for r in out.data_mut().chunks_mut(2) {
            let (x, y) = (r[0], r[1]);
            r[0] = c * x - s * y;
            r[1] = s * x + c * y;
        }
        out
    };
    let dr = energy_distance(&rot(&a), &rot(&b)).unwrap();
    assert!((d - dr).abs() < 1e-9);
    let same = energy_distance(&a, &a).unwrap();
    assert!(same < 0.05, "{same}");
}

#[test]
fn fresh_encoder_aggregate_posterior_is_the_prior() {
    let kernel = TransitionKernel::new(KernelKind::Li, 0.002, 0.1, 0.05).unwrap();
    let net = ConsistencyNet::new(MlpSpec { hidden_dim: 8, depth: 2, ..MlpSpec::consistency_default() }, 2).unwrap();
    let enc = Encoder::new(MlpSpec::encoder_default(), 2).unwrap();
    let mut rng = DetRng::seed_from_u64(36);
    let theta = net.init(&mut rng);
    let phi = enc.init(&mut rng);
    let model = Model { kernel, net, theta: &theta, encoder: Some((enc, &phi)) };
    let x0 = rng.normal_tensor(&[20_000, 2]);
    let d = posterior_prior_diagnostics(&model, &x0, &mut rng).unwrap();
    assert!(d.mean_norm < 0.05, "{d:?}");
    assert!(d.cov_deviation < 0.05, "{d:?}");
    assert!(d.kl_mean.abs() < 1e-12, "{d:?}");
}
