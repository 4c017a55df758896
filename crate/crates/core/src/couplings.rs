//! Data-to-noise couplings `pi(x1 | x0)`.
//!
//! Every coupling returns unit-scale noise with the shape of `x0`; only the
//! variational coupling carries a regularization term.

use alloc::vec::Vec;

use crate::assignment;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::networks::{Encoder, GaussianPosterior, ParamSet};
use crate::rng::DetRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CouplingKind {
    Independent,
    MinibatchOt,
    Variational,
}

/// How the per-coordinate KL terms of one data point are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KlReduction {
    #[default]
    SumDims,
    MeanDims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSample {
    pub x1: Tensor,
    /// Batch-averaged KL to the standard normal; zero for fixed couplings.
    pub aux_loss: f64,
    pub kl_per_point: Vec<f64>,
}

pub fn independent_sample(x0: &Tensor, rng: &mut DetRng) -> CouplingSample {
    CouplingSample {
        x1: rng.normal_tensor(x0.shape()),
        aux_loss: 0.0,
        kl_per_point: alloc::vec![0.0; x0.rows()],
    }
}

/// Squared Euclidean cost between flattened rows.
pub fn pairing_cost(x0: &Tensor, x1: &Tensor) -> Result<Vec<f64>> {
    if x0.shape() != x1.shape() {
        return Err(Error::ShapeMismatch {
            op: "minibatch_ot",
            lhs: x0.shape().to_vec(),
            rhs: x1.shape().to_vec(),
        });
    }
    let b = x0.rows();
    let mut cost = Vec::with_capacity(b * b);
    for i in 0..b {
        let a = x0.row(i);
        for j in 0..b {
            cost.push(a.iter().zip(x1.row(j)).map(|(p, q)| (p - q) * (p - q)).sum());
        }
    }
    Ok(cost)
}

/// Exact minimum-cost pairing: row `i` of `x0` is matched with row `perm[i]` of `x1`.
pub fn minibatch_ot_pairing(x0: &Tensor, x1: &Tensor) -> Result<Vec<usize>> {
    let cost = pairing_cost(x0, x1)?;
    assignment::solve(&cost, x0.rows())
}

/// Rows of `x` reordered so that row `i` is `x[perm[i]]`.
pub fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(x.len());
    for &p in perm {
        data.extend_from_slice(x.row(p));
    }
    Tensor::new(x.shape().to_vec(), data).expect("permutation keeps shape")
}

pub fn minibatch_ot_sample(x0: &Tensor, rng: &mut DetRng) -> Result<CouplingSample> {
    let noise = rng.normal_tensor(x0.shape());
    let perm = minibatch_ot_pairing(x0, &noise)?;
    Ok(CouplingSample {
        x1: permute_rows(&noise, &perm),
        aux_loss: 0.0,
        kl_per_point: alloc::vec![0.0; x0.rows()],
    })
}

fn reduce_dims(sum: f64, dims: usize, reduction: KlReduction) -> f64 {
    match reduction {
        KlReduction::SumDims => sum,
        KlReduction::MeanDims => sum / dims as f64,
    }
}

/// Per-row `KL(N(mean, scale^2) || N(0, I))`.
pub fn kl_per_point(post: &GaussianPosterior, reduction: KlReduction) -> Result<Vec<f64>> {
    let (mean, scale) = (&post.mean, &post.scale);
    if mean.shape() != scale.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl",
            lhs: mean.shape().to_vec(),
            rhs: scale.shape().to_vec(),
        });
    }
    if let Some(s) = scale.data().iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain {
            op: "kl",
            detail: alloc::format!("scale must be positive, got {s}"),
        });
    }
    let w = mean.row_len().max(1);
    Ok((0..mean.rows())
        .map(|i| {
            let s: f64 = mean
                .row(i)
                .iter()
                .zip(scale.row(i))
                .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * libm::log(s)))
                .sum();
            reduce_dims(s, w, reduction)
        })
        .collect())
}

/// Batch mean of the per-row KL divergence to the standard normal.
pub fn kl_diag_gaussian_to_standard(
    mean: &Tensor,
    scale: &Tensor,
    reduction: KlReduction,
) -> Result<f64> {
    let post = GaussianPosterior {
        mean: mean.clone(),
        scale: scale.clone(),
    };
    let per = kl_per_point(&post, reduction)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Differentiable batch-mean KL for `[B, d]` mean/scale nodes.
pub fn kl_tape(tape: &mut Tape, mean: Var, scale: Var, reduction: KlReduction) -> Result<Var> {
    let shape = tape.value(mean).shape().to_vec();
    let d = shape.get(1).copied().unwrap_or(1);
    let m2 = tape.square(mean)?;
    let s2 = tape.square(scale)?;
    let ls = tape.log(scale)?;
    let two_ls = tape.scale(ls, 2.0)?;
    let a = tape.add(m2, s2)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0)?;
    let per_coord = tape.scale(c, 0.5)?;
    let total = tape.mean(per_coord)?;
    // mean over all entries = (1/(B d)) sum; rescale to the requested reduction.
    match reduction {
        KlReduction::SumDims => tape.scale(total, d as f64),
        KlReduction::MeanDims => Ok(total),
    }
}

/// Reparameterized draw `x1 = mean + scale * eps` through the encoder.
pub fn variational_sample(
    encoder: &Encoder,
    phi: &ParamSet,
    x0: &Tensor,
    reduction: KlReduction,
    rng: &mut DetRng,
) -> Result<CouplingSample> {
    let post = encoder.forward(phi, x0)?;
    if !post.mean.all_finite() || !post.scale.all_finite() {
        return Err(Error::NonFinite("encoder output"));
    }
    let eps = rng.normal_tensor(x0.shape());
    let x1 = reparameterize(&post, &eps)?;
    let kl = kl_per_point(&post, reduction)?;
    Ok(CouplingSample {
        x1,
        aux_loss: kl.iter().sum::<f64>() / kl.len() as f64,
        kl_per_point: kl,
    })
}

pub fn reparameterize(post: &GaussianPosterior, eps: &Tensor) -> Result<Tensor> {
    let scaled = post.scale.zip_with(eps, "reparameterize", |s, e| s * e)?;
    post.mean.zip_with(&scaled, "reparameterize", |m, v| m + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn kl_closed_forms() {
        let m = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let s = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(kl_diag_gaussian_to_standard(&m, &s, KlReduction::SumDims).unwrap(), 0.5);
        let m = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let s = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let kl = kl_diag_gaussian_to_standard(&m, &s, KlReduction::SumDims).unwrap();
        assert!((kl - 0.5 * (4.0 - 1.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((kl - 0.806_852_819_440_054_7).abs() < 1e-12);
        let z = Tensor::zeros(&[3, 4]);
        let one = Tensor::full(&[3, 4], 1.0);
        assert_eq!(kl_diag_gaussian_to_standard(&z, &one, KlReduction::SumDims).unwrap(), 0.0);
        let bad = Tensor::full(&[3, 4], 0.0);
        assert!(kl_diag_gaussian_to_standard(&z, &bad, KlReduction::SumDims).is_err());
    }

    #[test]
    fn kl_tape_matches_closed_form() {
        let mut rng = DetRng::seed_from_u64(4);
        let m = rng.normal_tensor(&[5, 3]);
        let s = Tensor::from_fn(&[5, 3], |_| 0.2 + rng.uniform());
        for red in [KlReduction::SumDims, KlReduction::MeanDims] {
            let mut tape = Tape::new();
            let mv = tape.constant(m.clone());
            let sv = tape.constant(s.clone());
            let k = kl_tape(&mut tape, mv, sv, red).unwrap();
            let direct = kl_diag_gaussian_to_standard(&m, &s, red).unwrap();
            assert!((tape.value(k).data()[0] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn ot_swaps_crossed_pairs() {
        let x0 = Tensor::matrix(2, 1, vec![0.0, 10.0]).unwrap();
        let x1 = Tensor::matrix(2, 1, vec![9.0, 1.0]).unwrap();
        assert_eq!(minibatch_ot_pairing(&x0, &x1).unwrap(), vec![1, 0]);
        let one = Tensor::matrix(1, 2, vec![0.3, 0.1]).unwrap();
        assert_eq!(minibatch_ot_pairing(&one, &one).unwrap(), vec![0]);
        let empty = Tensor::zeros(&[0, 2]);
        assert!(minibatch_ot_pairing(&empty, &empty).is_err());
    }

    #[test]
    fn independent_has_no_aux() {
        let mut rng = DetRng::seed_from_u64(5);
        let s = independent_sample(&Tensor::zeros(&[4, 2]), &mut rng);
        assert_eq!(s.aux_loss, 0.0);
        assert_eq!(s.x1.shape(), &[4, 2]);
    }
}
