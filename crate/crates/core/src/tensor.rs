//! Dense row-major `f64` tensors and the few differentiable primitives the
//! attacks need.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Tensor extents. Image tensors are `channels x height x width`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidShape(Shape(dims)));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &Shape) -> Self {
        Tensor {
            shape: shape.clone(),
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: &Shape, value: f64) -> Self {
        Tensor {
            shape: shape.clone(),
            data: vec![value; shape.numel()],
        }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Same data under new extents with the same element count.
    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_i |self_i - other_i|`.
    pub fn linf_distance(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Population standard deviation, computed in two passes.
    pub fn std(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.sum() / n;
        let var = self
            .data
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        libm::sqrt(var)
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub(crate) fn expect_shape(&self, expected: &Shape) -> Result<()> {
        if &self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.clone(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Per-channel 2-D cross-correlation (no kernel flip) with zero padding, so
/// the output has the input's shape.
///
/// `input` is `[C, H, W]`, `kernel` is `[kh, kw]` with both extents odd.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let &[kh, kw] = kernel.dims() else {
        return Err(Error::ShapeMismatch {
            expected: Shape(vec![1, 1]),
            found: kernel.shape().clone(),
        });
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidKernel {
            height: kh,
            width: kw,
        });
    }
    let &[channels, height, width] = input.dims() else {
        return Err(Error::ShapeMismatch {
            expected: Shape(vec![1, 1, 1]),
            found: input.shape().clone(),
        });
    };
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let src = input.as_slice();
    let k = kernel.as_slice();
    let mut out = vec![0.0; src.len()];
    for c in 0..channels {
        let plane = &src[c * height * width..(c + 1) * height * width];
        let dst = &mut out[c * height * width..(c + 1) * height * width];
        for i in 0..height as isize {
            for j in 0..width as isize {
                let mut acc = 0.0;
                for di in -rh..=rh {
                    let si = i + di;
                    if si < 0 || si >= height as isize {
                        continue;
                    }
                    let krow = ((di + rh) as usize) * kw;
                    let srow = si as usize * width;
                    for dj in -rw..=rw {
                        let sj = j + dj;
                        if sj < 0 || sj >= width as isize {
                            continue;
                        }
                        acc += k[krow + (dj + rw) as usize] * plane[srow + sj as usize];
                    }
                }
                dst[i as usize * width + j as usize] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().clone(), out))
}

/// Softmax cross-entropy of `logits` against `label`, with the gradient with
/// respect to the logits (`softmax - one_hot`).
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::InvalidLabel {
            label,
            num_classes: k,
        });
    }
    let z = logits.as_slice();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    let loss = libm::log(total) - (z[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::from_parts(logits.shape().clone(), grad)))
}

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// element of `x`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = f(&probe);
        probe.data[i] = orig - h;
        let down = f(&probe);
        probe.data[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::from_parts(x.shape().clone(), grad)
}
