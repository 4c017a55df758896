//! Finite-difference checks of the tape: every primitive on random inputs and
//! the full training loss with respect to both parameter sets.

use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::{finite_difference_gradient, relative_error, Primitive, Tape};
use crate::error::{Error, Result};
use crate::networks::ParamSet;
use crate::rng::DetRng;
use crate::tensor::Tensor;
use crate::training::{loss_and_gradients, loss_value, StepDraw, TrainConfig};

/// Where random inputs for a primitive are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputDomain {
    /// Standard normal.
    Real,
    /// Uniform in `[0.5, 2.5]`.
    Positive,
    /// Standard normal shifted away from `point` by at least `gap`.
    AwayFrom { point: f64, gap: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCase {
    pub prim: Primitive,
    pub shapes: Vec<Vec<usize>>,
    pub domain: InputDomain,
}

fn case(prim: Primitive, shapes: &[&[usize]], domain: InputDomain) -> PrimitiveCase {
    PrimitiveCase {
        prim,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        domain,
    }
}

/// One case per primitive, with broadcasting exercised where it applies.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    use InputDomain::*;
    use Primitive as P;
    vec![
        case(P::Add, &[&[3, 4], &[1, 4]], Real),
        case(P::Sub, &[&[3, 4], &[3, 1]], Real),
        case(P::Mul, &[&[3, 4], &[3, 4]], Real),
        case(P::MatMul, &[&[3, 5], &[5, 2]], Real),
        case(P::Scale(-1.7), &[&[2, 3]], Real),
        case(P::Sum, &[&[2, 3]], Real),
        case(P::SumAxis(1), &[&[4, 3]], Real),
        case(P::SumAxis(0), &[&[4, 3]], Real),
        case(P::Mean, &[&[5, 2]], Real),
        case(P::Square, &[&[3, 3]], Real),
        case(P::Sqrt, &[&[3, 3]], Positive),
        case(P::Exp, &[&[3, 3]], Real),
        case(P::Log, &[&[3, 3]], Positive),
        case(P::Softplus, &[&[3, 3]], Real),
        case(P::Gelu, &[&[3, 3]], Real),
        case(P::Erf, &[&[3, 3]], Real),
        case(P::Concat { axis: 1 }, &[&[3, 2], &[3, 4]], Real),
        case(P::Concat { axis: 0 }, &[&[1, 3], &[2, 3]], Real),
        case(P::Slice { axis: 1, start: 1, len: 2 }, &[&[3, 4]], Real),
        case(P::Broadcast(vec![4, 3]), &[&[1, 3]], Real),
        case(P::ClampMin(0.0), &[&[3, 3]], AwayFrom { point: 0.0, gap: 1e-3 }),
    ]
}

pub fn random_inputs(case: &PrimitiveCase, rng: &mut DetRng) -> Vec<Tensor> {
    case.shapes
        .iter()
        .map(|s| {
            Tensor::from_fn(s, |_| match case.domain {
                InputDomain::Real => rng.normal(),
                InputDomain::Positive => 0.5 + 2.0 * rng.uniform(),
                InputDomain::AwayFrom { point, gap } => {
                    let z = rng.normal();
                    if (z - point).abs() < gap {
                        point + if z >= point { gap } else { -gap }
                    } else {
                        z
                    }
                }
            })
        })
        .collect()
}

fn projected_value(prim: &Primitive, inputs: &[Tensor], weights: &Tensor) -> Result<f64> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let out = crate::diffcore::forward_primitive(prim, &refs)?;
    Ok(out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

/// Largest relative error between the tape gradient and central differences
/// of `sum(weights * prim(inputs))`, over all inputs.
pub fn primitive_gradient_error(
    prim: &Primitive,
    inputs: &[Tensor],
    weights: &Tensor,
    h: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = tape.apply(prim.clone(), &vars)?;
    if tape.value(out).shape() != weights.shape() {
        return Err(Error::ShapeMismatch {
            op: "gradcheck",
            lhs: tape.value(out).shape().to_vec(),
            rhs: weights.shape().to_vec(),
        });
    }
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    let root = tape.sum(prod)?;
    let grads = tape.backward(root)?;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut probe: Vec<Tensor> = inputs.to_vec();
        let numeric = finite_difference_gradient(
            |x| {
                probe[i] = x.clone();
                projected_value(prim, &probe, weights)
            },
            &inputs[i],
            h,
        )?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Output shape of a primitive for given input shapes.
pub fn output_shape(prim: &Primitive, inputs: &[Tensor]) -> Result<Vec<usize>> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    Ok(crate::diffcore::forward_primitive(prim, &refs)?.shape().to_vec())
}

fn flat(params: &ParamSet) -> Tensor {
    Tensor::vector(params.flat())
}

fn unflat(like: &ParamSet, x: &Tensor) -> ParamSet {
    let mut out = like.clone();
    let mut off = 0;
    for t in &mut out.tensors {
        let n = t.len();
        t.data_mut().copy_from_slice(&x.data()[off..off + n]);
        off += n;
    }
    out
}

/// Relative errors of the loss gradient with respect to the online
/// consistency parameters (target copy held fixed) and the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradientErrors {
    pub theta: f64,
    pub phi: Option<f64>,
}

pub fn loss_gradient_errors(
    cfg: &TrainConfig,
    theta: &ParamSet,
    target: &ParamSet,
    phi: Option<&ParamSet>,
    draw: &StepDraw,
    h: f64,
) -> Result<LossGradientErrors> {
    let (_, gt, gp) = loss_and_gradients(cfg, theta, target, phi, draw, true)?;
    let analytic_theta = Tensor::vector(gt.iter().flat_map(|t| t.data().iter().copied()).collect());
    let numeric_theta = finite_difference_gradient(
        |x| Ok(loss_value(cfg, &unflat(theta, x), target, phi, draw)?.total),
        &flat(theta),
        h,
    )?;
    let theta_err = relative_error(&analytic_theta, &numeric_theta);
    let phi_err = match (phi, gp) {
        (Some(phi), Some(gp)) => {
            let analytic = Tensor::vector(gp.iter().flat_map(|t| t.data().iter().copied()).collect());
            let numeric = finite_difference_gradient(
                |x| Ok(loss_value(cfg, theta, target, Some(&unflat(phi, x)), draw)?.total),
                &flat(phi),
                h,
            )?;
            Some(relative_error(&analytic, &numeric))
        }
        _ => None,
    };
    Ok(LossGradientErrors {
        theta: theta_err,
        phi: phi_err,
    })
}
