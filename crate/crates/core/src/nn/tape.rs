//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse,
//! accumulating adjoints, and returns the gradient of every registered
//! parameter.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::kernels::{self, Conv2d, ConvTranspose3d};
use super::loss;
use super::tensor::{downsample, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Element-wise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(usize),
    Conv2d { x: Var, w: Var, b: Var, dims: Conv2d },
    Linear { x: Var, w: Var, b: Var },
    ConvTranspose3d { x: Var, w: Var, b: Var, dims: ConvTranspose3d },
    Pointwise3d { x: Var, w: Var, b: Var, c_in: usize, c_out: usize },
    Activation { x: Var, kind: Activation },
    Reshape { x: Var },
    Downsample { x: Var, factor: usize },
    LossL2 { pred: Var, truth: Var },
    LossBce { pred: Var, truth: Var },
    SumSquares { x: Var },
    WeightedSum { terms: Vec<(Var, T)> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Gradients of registered parameters, indexed by parameter id.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Option<Vec<T>>>,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    param_count: usize,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient (inputs, targets).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Constant)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Constant)
    }

    /// A leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: usize, t: &'a Tensor<T>) -> Var {
        self.param_count = self.param_count.max(id + 1);
        self.push(Cow::Borrowed(t), Op::Param(id))
    }

    pub fn param_owned(&mut self, id: usize, t: Tensor<T>) -> Var {
        self.param_count = self.param_count.max(id + 1);
        self.push(Cow::Owned(t), Op::Param(id))
    }

    fn expect_shape(&self, v: Var, shape: &[usize], ctx: &str) -> Result<()> {
        if self.shape(v) != shape {
            return Err(Error::shape(ctx, shape, self.shape(v)));
        }
        Ok(())
    }

    /// Strided 2D convolution; `x: [c_in, h, w]`, `w: [c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(Error::shape("conv2d weight", &[0, xs.first().copied().unwrap_or(0), 0, 0], &ws));
        }
        self.expect_shape(b, &[ws[0]], "conv2d bias")?;
        let dims = Conv2d {
            c_in: xs[0],
            c_out: ws[0],
            height: xs[1],
            width: xs[2],
            kernel: ws[2],
            stride,
            pad,
        };
        let (ho, wo) = dims.out_hw();
        if ho == 0 || wo == 0 {
            return Err(Error::shape("conv2d output", &[1, 1], &[ho, wo]));
        }
        let mut y = Tensor::zeros(&[dims.c_out, ho, wo]);
        dims.forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, &mut y.data);
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x, w, b, dims }))
    }

    /// `W · flatten(x) + b`; `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::shape("linear weight", &[ws.first().copied().unwrap_or(0), n], &ws));
        }
        self.expect_shape(b, &[ws[0]], "linear bias")?;
        let mut y = Tensor::zeros(&[ws[0]]);
        kernels::linear_forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, &mut y.data);
        Ok(self.push(Cow::Owned(y), Op::Linear { x, w, b }))
    }

    /// Transposed 3D convolution; `x: [c_in, n, n, n]`, `w: [c_in, c_out, k, k, k]`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || xs[1] != xs[2] || xs[2] != xs[3] {
            return Err(Error::shape("conv_transpose3d input", &[0, 0, 0, 0], &xs));
        }
        if ws.len() != 5 || ws[0] != xs[0] || ws[2] != ws[3] || ws[3] != ws[4] {
            return Err(Error::shape("conv_transpose3d weight", &[xs[0], 0, 0, 0, 0], &ws));
        }
        self.expect_shape(b, &[ws[1]], "conv_transpose3d bias")?;
        let dims = ConvTranspose3d {
            c_in: xs[0],
            c_out: ws[1],
            size: xs[1],
            kernel: ws[2],
            stride,
            pad,
        };
        let m = dims.out_size();
        if m == 0 {
            return Err(Error::shape("conv_transpose3d output", &[1], &[0]));
        }
        let mut y = Tensor::zeros(&[dims.c_out, m, m, m]);
        dims.forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, &mut y.data);
        Ok(self.push(Cow::Owned(y), Op::ConvTranspose3d { x, w, b, dims }))
    }

    /// 1×1×1 convolution; `x: [c_in, ...]`, `w: [c_out, c_in]`.
    pub fn pointwise3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || ws[1] != xs[0] {
            return Err(Error::shape("pointwise weight", &[0, xs.first().copied().unwrap_or(0)], &ws));
        }
        self.expect_shape(b, &[ws[0]], "pointwise bias")?;
        let (c_in, c_out) = (xs[0], ws[0]);
        let voxels: usize = xs[1..].iter().product();
        let mut shape = xs.clone();
        shape[0] = c_out;
        let mut y = Tensor::zeros(&shape);
        kernels::pointwise_forward(
            &self.value(x).data,
            &self.value(w).data,
            &self.value(b).data,
            c_in,
            c_out,
            voxels,
            &mut y.data,
        );
        Ok(self.push(Cow::Owned(y), Op::Pointwise3d { x, w, b, c_in, c_out }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let y = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| kind.apply(v)).collect(),
            grad: None,
        };
        self.push(Cow::Owned(y), Op::Activation { x, kind })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = Tensor::new(shape, self.value(x).data.clone())?;
        Ok(self.push(Cow::Owned(y), Op::Reshape { x }))
    }

    pub fn downsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = downsample(self.value(x), factor)?;
        Ok(self.push(Cow::Owned(y), Op::Downsample { x, factor }))
    }

    pub fn loss_l2(&mut self, pred: Var, truth: Var) -> Result<Var> {
        let v = loss::loss_l2(self.value(pred), self.value(truth))?;
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::LossL2 { pred, truth }))
    }

    pub fn loss_bce(&mut self, pred: Var, truth: Var) -> Result<Var> {
        let v = loss::loss_bce(self.value(pred), self.value(truth))?;
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::LossBce { pred, truth }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().map(|&a| a * a).sum();
        self.push(Cow::Owned(Tensor::scalar(v)), Op::SumSquares { x })
    }

    /// Σ wᵢ · xᵢ over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum term", &[1], self.shape(v)));
            }
            acc += w * self.value(v).data[0];
        }
        Ok(self.push(Cow::Owned(Tensor::scalar(acc)), Op::WeightedSum { terms: terms.to_vec() }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward root", &[1], self.shape(loss)));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            params: vec![None; self.param_count],
        };

        fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
            adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.params[*id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                Op::Conv2d { x, w, b, dims } => {
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    let mut gb = vec![T::zero(); dims.c_out];
                    dims.backward(xv, wv, &g, &mut gx, &mut gw, &mut gb);
                    add_into(slot(&mut adj, *x, xv.len()), &gx);
                    add_into(slot(&mut adj, *w, wv.len()), &gw);
                    add_into(slot(&mut adj, *b, gb.len()), &gb);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    let mut gb = vec![T::zero(); g.len()];
                    kernels::linear_backward(xv, wv, &g, &mut gx, &mut gw, &mut gb);
                    add_into(slot(&mut adj, *x, xv.len()), &gx);
                    add_into(slot(&mut adj, *w, wv.len()), &gw);
                    add_into(slot(&mut adj, *b, gb.len()), &gb);
                }
                Op::ConvTranspose3d { x, w, b, dims } => {
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    let mut gb = vec![T::zero(); dims.c_out];
                    dims.backward(xv, wv, &g, &mut gx, &mut gw, &mut gb);
                    add_into(slot(&mut adj, *x, xv.len()), &gx);
                    add_into(slot(&mut adj, *w, wv.len()), &gw);
                    add_into(slot(&mut adj, *b, gb.len()), &gb);
                }
                Op::Pointwise3d { x, w, b, c_in, c_out } => {
                    let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                    let voxels = xv.len() / c_in;
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    let mut gb = vec![T::zero(); *c_out];
                    kernels::pointwise_backward(xv, wv, &g, *c_in, *c_out, voxels, &mut gx, &mut gw, &mut gb);
                    add_into(slot(&mut adj, *x, xv.len()), &gx);
                    add_into(slot(&mut adj, *w, wv.len()), &gw);
                    add_into(slot(&mut adj, *b, gb.len()), &gb);
                }
                Op::Activation { x, kind } => {
                    let xv = &self.value(*x).data;
                    let yv = &node.value.data;
                    let gx = slot(&mut adj, *x, xv.len());
                    for j in 0..xv.len() {
                        gx[j] += g[j] * kind.derivative(xv[j], yv[j]);
                    }
                }
                Op::Reshape { x } => {
                    add_into(slot(&mut adj, *x, g.len()), &g);
                }
                Op::Downsample { x, factor } => {
                    let xs = self.shape(*x).to_vec();
                    let nd = xs.len();
                    let r = xs[nd - 1];
                    let q = r / factor;
                    let lead: usize = xs[..nd - 3].iter().product();
                    let inv = T::of(1.0 / (factor * factor * factor) as f64);
                    let gx = slot(&mut adj, *x, lead * r * r * r);
                    for c in 0..lead {
                        for z in 0..r {
                            for y in 0..r {
                                for xx in 0..r {
                                    let src = c * q * q * q + (z / factor) * q * q + (y / factor) * q + xx / factor;
                                    gx[c * r * r * r + (z * r + y) * r + xx] += g[src] * inv;
                                }
                            }
                        }
                    }
                }
                Op::LossL2 { pred, truth } => {
                    let gp = loss::loss_l2_grad(self.value(*pred), self.value(*truth));
                    let gp: Vec<T> = gp.iter().map(|&v| v * g[0]).collect();
                    add_into(slot(&mut adj, *pred, gp.len()), &gp);
                }
                Op::LossBce { pred, truth } => {
                    let gp = loss::loss_bce_grad(self.value(*pred), self.value(*truth));
                    let gp: Vec<T> = gp.iter().map(|&v| v * g[0]).collect();
                    add_into(slot(&mut adj, *pred, gp.len()), &gp);
                }
                Op::SumSquares { x } => {
                    let xv = &self.value(*x).data;
                    let two = T::of(2.0);
                    let gx = slot(&mut adj, *x, xv.len());
                    for j in 0..xv.len() {
                        gx[j] += two * xv[j] * g[0];
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        slot(&mut adj, v, 1)[0] += w * g[0];
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_on_empty_tape_fails() {
        let tape: Tape<f64> = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_params() {
        let p = Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(0, &p);
        let l = tape.sum_squares(v);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params[0].as_ref().unwrap(), &vec![2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn l2_gradient_is_twice_residual() {
        let pred = Tensor::new(&[3], vec![0.2f64, 0.9, 0.4]).unwrap();
        let truth = Tensor::new(&[3], vec![0.0, 1.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(0, &pred);
        let t = tape.constant_ref(&truth);
        let l = tape.loss_l2(p, t).unwrap();
        let g = tape.backward(l).unwrap();
        let g = g.params[0].as_ref().unwrap();
        for i in 0..3 {
            assert!((g[i] - 2.0 * (pred.data[i] - truth.data[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn reused_param_accumulates() {
        let p = Tensor::new(&[1], vec![3.0]).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(0, &p);
        let b = tape.param(0, &p);
        let sa = tape.sum_squares(a);
        let sb = tape.sum_squares(b);
        let l = tape.weighted_sum(&[(sa, 1.0), (sb, 0.5)]).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params[0].as_ref().unwrap()[0], 6.0 + 3.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[3, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[3]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant_ref(&x), tape.param(0, &w), tape.param(1, &b));
        assert!(matches!(tape.conv2d(xv, wv, bv, 2, 1), Err(Error::ShapeMismatch { .. })));
    }
}
