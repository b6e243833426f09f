//! Dense row-major tensors of `f64` and the handful of pure operations the
//! model is built from.

use serde::{Deserialize, Serialize};

use crate::error::{EnrollError, Result};

/// Dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(EnrollError::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(EnrollError::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(rows, cols)` of a 2-d tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `W·x + b` for `W: [m×n]`, `x: [n]`, `b: [m]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = w.dims2().ok_or_else(|| EnrollError::Dimension {
        op: "affine",
        left: w.shape.clone(),
        right: x.shape.clone(),
    })?;
    if x.shape != [n] {
        return Err(EnrollError::Dimension {
            op: "affine",
            left: w.shape.clone(),
            right: x.shape.clone(),
        });
    }
    if b.shape != [m] {
        return Err(EnrollError::Dimension {
            op: "affine",
            left: w.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = b.data.clone();
    matvec_acc(&w.data, m, n, &x.data, &mut out);
    Ok(Tensor::vector(out))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Numerically stable softmax over all entries.
pub fn softmax(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: softmax_slice(&x.data),
    }
}

/// `-ln(pred[gold])`, with `pred[gold]` floored at `1e-12`.
pub fn cross_entropy(pred: &[f64], gold: usize) -> Result<f64> {
    let p = pred.get(gold).ok_or(EnrollError::ClassOutOfRange {
        index: gold,
        classes: pred.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

pub const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W·x` for row-major `W: [m×n]`.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], m: usize, n: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), m * n);
    for (row, o) in w.chunks_exact(n).zip(out.iter_mut()) {
        *o += dot(row, x);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
