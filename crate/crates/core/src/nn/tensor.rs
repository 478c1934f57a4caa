use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of the network (`f32` or `f64`).
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", &[n], &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.data.len()]),
        }
    }

    pub fn accumulate_grad(&mut self, g: &[T]) {
        let n = self.data.len();
        let acc = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (a, &b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Block-mean downsampling of the trailing three (cubic) dimensions.
pub fn downsample<T: Scalar>(volume: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let nd = volume.shape.len();
    if nd < 3 {
        return Err(Error::shape("downsample", &[0, 0, 0], &volume.shape));
    }
    let r = volume.shape[nd - 1];
    if volume.shape[nd - 2] != r || volume.shape[nd - 3] != r {
        return Err(Error::shape("downsample (cubic)", &[r, r, r], &volume.shape[nd - 3..]));
    }
    if factor == 0 || !r.is_multiple_of(factor) {
        return Err(Error::invalid(format!("downsample factor {factor} does not divide {r}")));
    }
    if factor == 1 {
        return Tensor::new(&volume.shape, volume.data.clone());
    }
    let q = r / factor;
    let lead: usize = volume.shape[..nd - 3].iter().product();
    let inv = T::of(1.0 / (factor * factor * factor) as f64);
    let mut out = vec![T::zero(); lead * q * q * q];
    for c in 0..lead {
        let src = &volume.data[c * r * r * r..(c + 1) * r * r * r];
        let dst = &mut out[c * q * q * q..(c + 1) * q * q * q];
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    dst[(z / factor) * q * q + (y / factor) * q + x / factor] += src[(z * r + y) * r + x];
                }
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    let mut shape = volume.shape[..nd - 3].to_vec();
    shape.extend([q, q, q]);
    Tensor::new(&shape, out)
}
