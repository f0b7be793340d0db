//! Dense row-major `f64` tensors.
//!
//! Element `[i0, i1, .., ik]` of a tensor with shape `[d0, d1, .., dk]` lives at
//! offset `((i0 * d1 + i1) * d2 + ..) * dk + ik`. The model file format writes
//! `data()` in exactly this order.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Pointwise binary operation used by [`Tensor::map_zip`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZipOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ZipOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ZipOp::Add => a + b,
            ZipOp::Sub => a - b,
            ZipOp::Mul => a * b,
            ZipOp::Div => a / b,
        }
    }
}

/// Right-hand operand of [`Tensor::map_zip`]: a same-shape tensor or a scalar.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(s: f64) -> Self {
        Operand::Scalar(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceAxis {
    All,
    Index(usize),
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero-sized dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive: {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Dimension(format!(
                "index {index:?} has rank {}, tensor has shape {:?}",
                index.len(),
                self.shape
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Dimension(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Consuming reshape; no copy of the buffer.
    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn ensure_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Dimension(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            1.0,
            MatRef::row_major(&self.data, k),
            MatRef::row_major(&other.data, n),
            0.0,
            &mut out.data,
        );
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// Swap the two axes of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose needs rank 2, got shape {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Elementwise `op(self, rhs)`; `rhs` must have the same shape or be a scalar.
    pub fn map_zip<'a>(&self, rhs: impl Into<Operand<'a>>, op: ZipOp) -> Result<Tensor> {
        let data = match rhs.into() {
            Operand::Scalar(s) => self.data.iter().map(|&a| op.apply(a, s)).collect(),
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return Err(Error::Dimension(format!(
                        "elementwise {op:?} of {:?} and {:?}",
                        self.shape, t.shape
                    )));
                }
                self.data
                    .iter()
                    .zip(&t.data)
                    .map(|(&a, &b)| op.apply(a, b))
                    .collect()
            }
        };
        let out = Tensor {
            shape: self.shape.clone(),
            data,
        };
        out.ensure_finite("elementwise op")?;
        Ok(out)
    }

    pub fn add<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.map_zip(rhs, ZipOp::Add)
    }

    pub fn sub<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.map_zip(rhs, ZipOp::Sub)
    }

    pub fn mul<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        self.map_zip(rhs, ZipOp::Mul)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reduce over one axis (removing it) or over everything (yielding shape `[1]`).
    pub fn reduce(&self, axis: ReduceAxis, kind: ReduceKind) -> Result<Tensor> {
        let fold = |vals: &mut dyn Iterator<Item = f64>, count: usize| -> f64 {
            match kind {
                ReduceKind::Sum => vals.sum(),
                ReduceKind::Mean => vals.sum::<f64>() / count as f64,
                ReduceKind::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            }
        };
        match axis {
            ReduceAxis::All => Ok(Tensor::scalar(fold(
                &mut self.data.iter().copied(),
                self.data.len(),
            ))),
            ReduceAxis::Index(ax) => {
                if ax >= self.rank() {
                    return Err(Error::Dimension(format!(
                        "reduce axis {ax} invalid for shape {:?}",
                        self.shape
                    )));
                }
                let outer: usize = self.shape[..ax].iter().product();
                let n = self.shape[ax];
                let inner: usize = self.shape[ax + 1..].iter().product();
                let mut data = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut it = (0..n).map(|j| self.data[base + j * inner]);
                        data.push(fold(&mut it, n));
                    }
                }
                let mut shape: Vec<usize> = self.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                Ok(Tensor { shape, data })
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `self += alpha * other`, in place.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "axpy of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        if self.data.len() > SHOWN {
            write!(f, " {head:?}..")
        } else {
            write!(f, " {head:?}")
        }
    }
}

/// Strided read-only view of a matrix stored in a flat slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// View a row-major `[rows, cols]` buffer as its `[cols, rows]` transpose.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride as usize + (cols - 1) * self.col_stride as usize
    }
}

/// `c = alpha * a * b + beta * c` with `a: [m,k]`, `b: [k,n]`, `c: [m,n]` row-major.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset(k, n) < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above bound every offset matrixmultiply will read
    // or write for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
