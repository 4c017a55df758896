//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive application in evaluation order, so
//! parents always precede children and a single reverse sweep visits each
//! node once. Leaves are either parameters (gradients tracked) or constants.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_2_SQRT_PI, SQRT_2};

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, MatRef, Tensor};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Primitive operations understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    /// 2-D matrix product.
    MatMul,
    Scale(f64),
    /// Sum of all entries, producing a scalar.
    Sum,
    /// Sum along one axis, removing it.
    SumAxis(usize),
    Mean,
    Square,
    Sqrt,
    Exp,
    Log,
    Softplus,
    /// Exact GeLU, `x * Phi(x)`.
    Gelu,
    Erf,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Broadcast(Vec<usize>),
    /// `max(x, floor)`; gradient is zero where the floor is active.
    ClampMin(f64),
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Scale(_) => "scale",
            Primitive::Sum => "sum",
            Primitive::SumAxis(_) => "sum_axis",
            Primitive::Mean => "mean",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softplus => "softplus",
            Primitive::Gelu => "gelu",
            Primitive::Erf => "erf",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Broadcast(_) => "broadcast",
            Primitive::ClampMin(_) => "clamp_min",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    prim: Option<Primitive>,
    parents: Vec<Var>,
    /// Per-primitive cache used by the backward rule (GeLU keeps `Phi(x)`).
    aux: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Evaluates a primitive without recording it.
pub fn forward_primitive(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    eval(prim, inputs).map(|(t, _)| t)
}

fn check_arity(prim: &Primitive, n: usize) -> Result<()> {
    match prim.arity() {
        Some(a) if a != n => Err(Error::invalid(alloc::format!(
            "{} expects {a} inputs, got {n}",
            prim.name()
        ))),
        None if n == 0 => Err(Error::invalid("concat of zero tensors")),
        _ => Ok(()),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn eval(prim: &Primitive, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    check_arity(prim, inputs.len())?;
    let x = inputs[0];
    let out = match prim {
        Primitive::Add => x.zip_with(inputs[1], "add", |a, b| a + b)?,
        Primitive::Sub => x.zip_with(inputs[1], "sub", |a, b| a - b)?,
        Primitive::Mul => x.zip_with(inputs[1], "mul", |a, b| a * b)?,
        Primitive::MatMul => x.matmul(inputs[1])?,
        Primitive::Scale(s) => x.scale(*s),
        Primitive::Sum => Tensor::scalar(x.sum()),
        Primitive::Mean => {
            if x.is_empty() {
                return Err(Error::invalid("mean of empty tensor"));
            }
            Tensor::scalar(x.mean())
        }
        Primitive::SumAxis(axis) => {
            let shape = x.shape();
            if *axis >= shape.len() {
                return Err(Error::invalid(alloc::format!(
                    "sum_axis {axis} on rank {}",
                    shape.len()
                )));
            }
            let (outer, mid, inner) = axis_split(shape, *axis);
            let mut data = vec![0.0; outer * inner];
            let src = x.data();
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    for i in 0..inner {
                        data[o * inner + i] += src[base + i];
                    }
                }
            }
            let mut s = shape.to_vec();
            s.remove(*axis);
            Tensor::new(s, data)?
        }
        Primitive::Square => x.map(|v| v * v),
        Primitive::Sqrt => {
            if let Some(v) = x.data().iter().find(|v| **v < 0.0) {
                return Err(Error::Domain {
                    op: "sqrt",
                    detail: alloc::format!("negative input {v}"),
                });
            }
            x.map(libm::sqrt)
        }
        Primitive::Exp => x.map(libm::exp),
        Primitive::Log => {
            if let Some(v) = x.data().iter().find(|v| **v < 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: alloc::format!("negative input {v}"),
                });
            }
            x.map(libm::log)
        }
        Primitive::Softplus => x.map(softplus),
        Primitive::Gelu => {
            let cdf: Vec<f64> = x.data().iter().map(|&v| normal_cdf(v)).collect();
            let data = x.data().iter().zip(&cdf).map(|(v, c)| v * c).collect();
            return Ok((Tensor::new(x.shape().to_vec(), data)?, cdf));
        }
        Primitive::Erf => x.map(libm::erf),
        Primitive::ClampMin(floor) => x.map(|v| v.max(*floor)),
        Primitive::Broadcast(shape) => x.broadcast_to(shape)?,
        Primitive::Slice { axis, start, len } => {
            let shape = x.shape();
            if *axis >= shape.len() || start + len > shape[*axis] {
                return Err(Error::invalid(alloc::format!(
                    "slice axis {axis} [{start}, {}) of shape {shape:?}",
                    start + len
                )));
            }
            let (outer, mid, inner) = axis_split(shape, *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * mid + start) * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut s = shape.to_vec();
            s[*axis] = *len;
            Tensor::new(s, data)?
        }
        Primitive::Concat { axis } => {
            let first = x.shape();
            if *axis >= first.len() {
                return Err(Error::invalid("concat axis out of range"));
            }
            let mut total = 0;
            for t in inputs {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(first)
                        .enumerate()
                        .all(|(i, (a, b))| i == *axis || a == b);
                if !compatible {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: first.to_vec(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[*axis];
            }
            let (outer, _, inner) = axis_split(first, *axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let w = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                }
            }
            let mut s = first.to_vec();
            s[*axis] = total;
            Tensor::new(s, data)?
        }
    };
    Ok((out, Vec::new()))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            prim: None,
            parents: Vec::new(),
            aux: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `prim` applied to `inputs`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let (value, aux) = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            eval(&prim, &vals)?
        };
        if !value.all_finite() {
            return Err(Error::NonFinite(prim.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            prim: Some(prim),
            parents: inputs.to_vec(),
            aux,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Gelu, &[a])
    }
    pub fn erf(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Erf, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Broadcast(shape.to_vec()), &[a])
    }
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.apply(Primitive::ClampMin(floor), &[a])
    }

    /// Adds a constant scalar to every entry.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    /// Gradients of the scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.nodes[root.0].value.shape();
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_shape, 1.0));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(prim) = &node.prim else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(prim, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop(
        &self,
        prim: &Primitive,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let p = &node.parents;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| accumulate(&mut grads[v.0], t);
        match prim {
            Primitive::Add | Primitive::Sub => {
                if wants(p[0]) {
                    acc(p[0], g.reduce_to(val(p[0]).shape()));
                }
                if wants(p[1]) {
                    let gb = g.reduce_to(val(p[1]).shape());
                    acc(p[1], if *prim == Primitive::Sub { gb.scale(-1.0) } else { gb });
                }
            }
            Primitive::Mul => {
                if wants(p[0]) {
                    let t = g.zip_with(val(p[1]), "mul", |a, b| a * b)?;
                    acc(p[0], t.reduce_to(val(p[0]).shape()));
                }
                if wants(p[1]) {
                    let t = g.zip_with(val(p[0]), "mul", |a, b| a * b)?;
                    acc(p[1], t.reduce_to(val(p[1]).shape()));
                }
            }
            Primitive::MatMul => {
                let (a, b) = (val(p[0]), val(p[1]));
                let (m, k) = a.dims2("matmul")?;
                let n = b.shape()[1];
                if wants(p[0]) {
                    let mut out = vec![0.0; m * k];
                    gemm_acc(MatRef::new(g.data(), m, n), MatRef::new(b.data(), k, n).t(), &mut out);
                    acc(p[0], Tensor::new(vec![m, k], out)?);
                }
                if wants(p[1]) {
                    let mut out = vec![0.0; k * n];
                    gemm_acc(MatRef::new(a.data(), m, k).t(), MatRef::new(g.data(), m, n), &mut out);
                    acc(p[1], Tensor::new(vec![k, n], out)?);
                }
            }
            Primitive::Scale(s) => acc(p[0], g.scale(*s)),
            Primitive::Sum => {
                let gv = g.data()[0];
                acc(p[0], Tensor::full(val(p[0]).shape(), gv));
            }
            Primitive::Mean => {
                let x = val(p[0]);
                let gv = g.data()[0] / x.len() as f64;
                acc(p[0], Tensor::full(x.shape(), gv));
            }
            Primitive::SumAxis(axis) => {
                let xs = val(p[0]).shape();
                let mut kept = xs.to_vec();
                kept[*axis] = 1;
                let g1 = g.clone().reshape(&kept)?;
                acc(p[0], g1.broadcast_to(xs)?);
            }
            Primitive::Square => {
                acc(p[0], g.zip_with(val(p[0]), "square", |g, x| 2.0 * x * g)?);
            }
            Primitive::Sqrt => {
                acc(p[0], g.zip_with(&node.value, "sqrt", |g, y| 0.5 * g / y)?);
            }
            Primitive::Exp => {
                acc(p[0], g.zip_with(&node.value, "exp", |g, y| g * y)?);
            }
            Primitive::Log => {
                acc(p[0], g.zip_with(val(p[0]), "log", |g, x| g / x)?);
            }
            Primitive::Softplus => {
                acc(p[0], g.zip_with(val(p[0]), "softplus", |g, x| g * sigmoid(x))?);
            }
            Primitive::Gelu => {
                let x = val(p[0]);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(&node.aux)
                    .map(|((g, &x), cdf)| g * (cdf + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)))
                    .collect();
                acc(p[0], Tensor::new(x.shape().to_vec(), data)?);
            }
            Primitive::Erf => {
                acc(
                    p[0],
                    g.zip_with(val(p[0]), "erf", |g, x| g * FRAC_2_SQRT_PI * libm::exp(-x * x))?,
                );
            }
            Primitive::ClampMin(floor) => {
                let f = *floor;
                acc(
                    p[0],
                    g.zip_with(val(p[0]), "clamp_min", |g, x| if x > f { g } else { 0.0 })?,
                );
            }
            Primitive::Broadcast(_) => acc(p[0], g.reduce_to(val(p[0]).shape())),
            Primitive::Slice { axis, start, len } => {
                let xs = val(p[0]).shape();
                let (outer, mid, inner) = axis_split(xs, *axis);
                let mut out = Tensor::zeros(xs);
                let od = out.data_mut();
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let src = o * len * inner;
                    od[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(p[0], out);
            }
            Primitive::Concat { axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for &part in p {
                    let ps = val(part).shape();
                    let w = ps[*axis];
                    if wants(part) {
                        let mut data = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + w * inner]);
                        }
                        acc(part, Tensor::new(ps.to_vec(), data)?);
                    }
                    offset += w;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        None => *slot = Some(t),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; a zero tensor when `v` was not reached.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(t)) => t.clone(),
            _ => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||)`; zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = libm::sqrt(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum());
    let scale = libm::sqrt(a.sq_norm()).max(libm::sqrt(b.sq_norm()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(prim: Primitive, x: f64) -> f64 {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::scalar(x));
        let y = tape.apply(prim, &[v]).unwrap();
        tape.backward(y).unwrap().get(v).data()[0]
    }

    #[test]
    fn gelu_and_erf_fix_the_origin() {
        let z = Tensor::scalar(0.0);
        assert_eq!(forward_primitive(&Primitive::Gelu, &[&z]).unwrap().data()[0], 0.0);
        assert_eq!(forward_primitive(&Primitive::Erf, &[&z]).unwrap().data()[0], 0.0);
        let six = Tensor::scalar(6.0);
        let e = forward_primitive(&Primitive::Erf, &[&six]).unwrap().data()[0];
        assert!((e - 1.0).abs() < 1e-9);
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).data()[0], 6.0);
    }

    #[test]
    fn softplus_slope_at_zero() {
        assert!((scalar_grad(Primitive::Softplus, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(alloc::vec![1.0, 2.0]));
        let y = tape.square(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn domain_errors() {
        let neg = Tensor::vector(alloc::vec![1.0, -1.0]);
        assert!(matches!(
            forward_primitive(&Primitive::Log, &[&neg]),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            forward_primitive(&Primitive::Sqrt, &[&neg]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        let err = forward_primitive(&Primitive::Add, &[&a, &b]).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "add",
                lhs: alloc::vec![2, 3],
                rhs: alloc::vec![2]
            }
        );
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 2]));
        let b = tape.param(Tensor::scalar(2.0));
        let y = tape.square(b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn fd_of_sum_of_squares() {
        let x = Tensor::vector(alloc::vec![1.0, 2.0]);
        let g = finite_difference_gradient(|t| Ok(t.sq_norm()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
        assert!(finite_difference_gradient(|t| Ok(t.sum()), &x, 0.0).is_err());
    }

    #[test]
    fn concat_slice_roundtrip_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_fn(&[2, 2], |i| i as f64));
        let b = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64 + 10.0));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 5]);
        assert_eq!(tape.value(c).row(1), &[2., 3., 13., 14., 15.]);
        let s = tape.slice(c, 1, 1, 3).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).data(), &[0., 1., 0., 1.]);
        assert_eq!(g.get(b).data(), &[1., 1., 0., 1., 1., 0.]);
    }
}
