//! Dense row-major f64 tensors and the handful of linear-algebra kernels the
//! estimators are built on.
//!
//! Everything here is single-threaded with a fixed summation order, so any
//! two runs on the same inputs produce bitwise-identical results. The matmul
//! kernels are written so the innermost loop runs over a contiguous slice of
//! the output row, which is what the optimizer needs to vectorize them.

use crate::error::{Error, Result};

/// Row-major tensor of f64 values. Shape `[d0, d1, ...]`, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::contract(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        self.require_2d("transpose2")?;
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "dot shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Largest absolute entry; 0 for an empty tensor.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_2d(&self, op: &str) -> Result<()> {
        if self.ndim() != 2 {
            return Err(Error::contract(format!(
                "{} expects a 2-D tensor, got shape {:?}",
                op, self.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "{} shape mismatch: {:?} vs {:?}",
                op, self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }
}

fn check_2d_pair(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::contract(format!(
            "{} expects 2-D tensors, got {:?} and {:?}",
            op, a.shape, b.shape
        )));
    }
    Ok(())
}

/// `C = A * B` for `A: [p, q]`, `B: [q, r]`.
///
/// Accumulation runs in ascending k order per output element, so results
/// are bitwise reproducible; the 4-step k unroll keeps that order while
/// cutting output-row memory round trips.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_2d_pair(a, b, "matmul")?;
    let (p, q) = (a.rows(), a.cols());
    let (q2, r) = (b.rows(), b.cols());
    if q != q2 {
        return Err(Error::contract(format!(
            "matmul inner dimension mismatch: [{}x{}] * [{}x{}]",
            p, q, q2, r
        )));
    }
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let a_row = &a.data[i * q..(i + 1) * q];
        let out_row = &mut out[i * r..(i + 1) * r];
        let mut k = 0;
        while k + 4 <= q {
            let (a0, a1, a2, a3) = (a_row[k], a_row[k + 1], a_row[k + 2], a_row[k + 3]);
            let b0 = &b.data[k * r..(k + 1) * r];
            let b1 = &b.data[(k + 1) * r..(k + 2) * r];
            let b2 = &b.data[(k + 2) * r..(k + 3) * r];
            let b3 = &b.data[(k + 3) * r..(k + 4) * r];
            for j in 0..r {
                out_row[j] = out_row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            k += 4;
        }
        while k < q {
            let aik = a_row[k];
            let b_row = &b.data[k * r..(k + 1) * r];
            for j in 0..r {
                out_row[j] += aik * b_row[j];
            }
            k += 1;
        }
    }
    Tensor::from_vec(&[p, r], out)
}

/// `C = A * B^T` for `A: [p, q]`, `B: [r, q]`. Avoids materializing `B^T`.
/// Four output columns run on independent accumulators; each element still
/// sums in ascending k order.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_2d_pair(a, b, "matmul_nt")?;
    let (p, q) = (a.rows(), a.cols());
    let (r, q2) = (b.rows(), b.cols());
    if q != q2 {
        return Err(Error::contract(format!(
            "matmul_nt inner dimension mismatch: [{}x{}] * [{}x{}]^T",
            p, q, r, q2
        )));
    }
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let a_row = &a.data[i * q..(i + 1) * q];
        let out_row = &mut out[i * r..(i + 1) * r];
        let mut j = 0;
        while j + 4 <= r {
            let b0 = &b.data[j * q..(j + 1) * q];
            let b1 = &b.data[(j + 1) * q..(j + 2) * q];
            let b2 = &b.data[(j + 2) * q..(j + 3) * q];
            let b3 = &b.data[(j + 3) * q..(j + 4) * q];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..q {
                let av = a_row[k];
                s0 += av * b0[k];
                s1 += av * b1[k];
                s2 += av * b2[k];
                s3 += av * b3[k];
            }
            out_row[j] = s0;
            out_row[j + 1] = s1;
            out_row[j + 2] = s2;
            out_row[j + 3] = s3;
            j += 4;
        }
        while j < r {
            let b_row = &b.data[j * q..(j + 1) * q];
            let mut acc = 0.0;
            for k in 0..q {
                acc += a_row[k] * b_row[k];
            }
            out_row[j] = acc;
            j += 1;
        }
    }
    Tensor::from_vec(&[p, r], out)
}

/// `C = A^T * B` for `A: [q, p]`, `B: [q, r]`. Avoids materializing `A^T`.
/// Same ascending-k accumulation per element as `matmul`; the strided
/// `A` reads trade for register-resident output rows.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_2d_pair(a, b, "matmul_tn")?;
    let (q, p) = (a.rows(), a.cols());
    let (q2, r) = (b.rows(), b.cols());
    if q != q2 {
        return Err(Error::contract(format!(
            "matmul_tn inner dimension mismatch: [{}x{}]^T * [{}x{}]",
            q, p, q2, r
        )));
    }
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        let mut k = 0;
        while k + 4 <= q {
            let a0 = a.data[k * p + i];
            let a1 = a.data[(k + 1) * p + i];
            let a2 = a.data[(k + 2) * p + i];
            let a3 = a.data[(k + 3) * p + i];
            let b0 = &b.data[k * r..(k + 1) * r];
            let b1 = &b.data[(k + 1) * r..(k + 2) * r];
            let b2 = &b.data[(k + 2) * r..(k + 3) * r];
            let b3 = &b.data[(k + 3) * r..(k + 4) * r];
            for j in 0..r {
                out_row[j] = out_row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            k += 4;
        }
        while k < q {
            let aki = a.data[k * p + i];
            let b_row = &b.data[k * r..(k + 1) * r];
            for j in 0..r {
                out_row[j] += aki * b_row[j];
            }
            k += 1;
        }
    }
    Tensor::from_vec(&[p, r], out)
}
