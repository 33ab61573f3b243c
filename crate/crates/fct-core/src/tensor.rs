//! Dense real/complex tensors with row-major contiguous storage.
//!
//! No strided views and no general broadcasting: only scalar-vs-tensor and
//! equal-shape elementwise operations are supported. Summation orders are
//! fixed so repeated runs are bit-identical.

use crate::error::{FctError, Result};

/// Dense n-dimensional real array, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FctError::Size(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(FctError::Size(format!("zero dimension in shape {:?}", shape)));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    /// 2-D identity matrix.
    pub fn eye(n: usize) -> Self {
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

    /// Number of rows of a 2-D tensor (1-D tensors count as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns of a 1-D or 2-D tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[self.shape.len() - 1],
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(FctError::Size(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Matrix product of 2-D tensors. Summation order over the inner axis is
    /// fixed (k-major), so results are bit-reproducible.
    pub fn matmul(&self, other: &RealTensor) -> Result<RealTensor> {
        if self.shape.len() > 2 || other.shape.len() > 2 {
            return Err(FctError::DimMismatch {
                ctx: "matmul rank",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(FctError::DimMismatch {
                ctx: "matmul inner",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        RealTensor::new(vec![m, n], out)
    }

    /// `self · otherᵀ` without materializing the transpose: rows of both
    /// operands are read contiguously, which matters for the large square
    /// attention maps on the benchmark path.
    pub fn matmul_nt(&self, other: &RealTensor) -> Result<RealTensor> {
        if self.shape.len() > 2 || other.shape.len() > 2 {
            return Err(FctError::DimMismatch {
                ctx: "matmul_nt rank",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(FctError::DimMismatch {
                ctx: "matmul_nt inner",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, j) in orow.iter_mut().zip(0..n) {
                let brow = &other.data[j * k..(j + 1) * k];
                // four independent accumulators so the reduction vectorizes
                let mut acc = [0.0f64; 4];
                let chunks = k / 4;
                for c in 0..chunks {
                    let p = c * 4;
                    acc[0] += arow[p] * brow[p];
                    acc[1] += arow[p + 1] * brow[p + 1];
                    acc[2] += arow[p + 2] * brow[p + 2];
                    acc[3] += arow[p + 3] * brow[p + 3];
                }
                let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                for p in chunks * 4..k {
                    s += arow[p] * brow[p];
                }
                *o = s;
            }
        }
        RealTensor::new(vec![m, n], out)
    }

    /// Explicit 2-D transpose (no strided views).
    pub fn transpose(&self) -> RealTensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        RealTensor {
            shape: vec![n, m],
            data: out,
        }
    }

    fn zip_same_shape(
        &self,
        other: &RealTensor,
        ctx: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<RealTensor> {
        if self.shape != other.shape {
            // scalar-vs-tensor is the only broadcast allowed
            if other.data.len() == 1 {
                let s = other.data[0];
                return Ok(self.map(|x| f(x, s)));
            }
            if self.data.len() == 1 {
                let s = self.data[0];
                return Ok(other.map(|x| f(s, x)));
            }
            return Err(FctError::DimMismatch {
                ctx,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(RealTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &RealTensor) -> Result<RealTensor> {
        self.zip_same_shape(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &RealTensor) -> Result<RealTensor> {
        self.zip_same_shape(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &RealTensor) -> Result<RealTensor> {
        self.zip_same_shape(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealTensor {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> RealTensor {
        self.map(|x| x * s)
    }

    pub fn abs(&self) -> RealTensor {
        self.map(f64::abs)
    }

    /// Natural logarithm. Nonpositive entries are a domain error at this
    /// layer; the Logmax epsilon policy lives in the attention module.
    pub fn ln(&self) -> Result<RealTensor> {
        if let Some(&bad) = self.data.iter().find(|&&x| x <= 0.0) {
            return Err(FctError::Domain(format!("log of nonpositive value {bad}")));
        }
        Ok(self.map(f64::ln))
    }

    pub fn exp(&self) -> RealTensor {
        self.map(f64::exp)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Max-norm relative distance, with an absolute floor for near-zero pairs.
    pub fn rel_dist(&self, other: &RealTensor) -> f64 {
        let denom = self.max_abs().max(other.max_abs()).max(1e-300);
        let diff = self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        diff / denom
    }
}

/// Paired real/imaginary planes of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub re: RealTensor,
    pub im: RealTensor,
}

impl ComplexTensor {
    pub fn new(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(FctError::DimMismatch {
                ctx: "complex planes",
                left: re.shape().to_vec(),
                right: im.shape().to_vec(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: RealTensor::zeros(shape),
            im: RealTensor::zeros(shape),
        }
    }

    pub fn from_real(re: RealTensor) -> Self {
        let im = RealTensor::zeros(re.shape());
        Self { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn conj(&self) -> ComplexTensor {
        ComplexTensor {
            re: self.re.clone(),
            im: self.im.scale(-1.0),
        }
    }

    /// Complex matrix product:
    /// (a.re·b.re − a.im·b.im) + j(a.re·b.im + a.im·b.re).
    pub fn matmul(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        let rr = self.re.matmul(&other.re)?;
        let ii = self.im.matmul(&other.im)?;
        let ri = self.re.matmul(&other.im)?;
        let ir = self.im.matmul(&other.re)?;
        Ok(ComplexTensor {
            re: rr.sub(&ii)?,
            im: ri.add(&ir)?,
        })
    }

    pub fn add(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        Ok(ComplexTensor {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        Ok(ComplexTensor {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.re.max_abs().max(self.im.max_abs())
    }

    pub fn rel_dist(&self, other: &ComplexTensor) -> f64 {
        let denom = self.max_abs().max(other.max_abs()).max(1e-300);
        let d_re = self
            .re
            .data()
            .iter()
            .zip(other.re.data())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        let d_im = self
            .im
            .data()
            .iter()
            .zip(other.im.data())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        d_re.max(d_im) / denom
    }
}
