//! Symmetric eigenvalue decomposition via the cyclic Jacobi method.
//!
//! The estimators only ever need eigenvalues of small symmetric matrices
//! (covariances and Gram matrices up to a few hundred rows), so eigenvectors
//! are never accumulated. Rotations run in a fixed sweep order, which keeps
//! the output deterministic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sweeps before giving up. Jacobi converges quadratically; well-formed
/// inputs finish in well under half of this.
const MAX_SWEEPS: usize = 50;

/// Relative asymmetry tolerated in the input before it is rejected.
const SYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues of a symmetric matrix, sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl EigenSpectrum {
    pub fn total_mass(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Minimal r such that the top-r eigenvalues reach `tau` of the total
    /// mass. Callers must rule out non-positive total mass first.
    pub fn count_for_mass(&self, tau: f64) -> usize {
        let total = self.total_mass();
        let target = tau * total;
        let mut acc = 0.0;
        for (i, ev) in self.eigenvalues.iter().enumerate() {
            acc += ev;
            if acc >= target {
                return i + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// Extend with zero eigenvalues up to dimension `n`. Used when the
    /// spectrum was computed from the smaller Gram form of a product.
    pub fn padded_to(mut self, n: usize) -> EigenSpectrum {
        while self.eigenvalues.len() < n {
            self.eigenvalues.push(0.0);
        }
        self
    }

    /// Count of eigenvalues strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.eigenvalues.iter().filter(|v| **v > threshold).count()
    }
}

/// Eigenvalues of a symmetric matrix.
///
/// The input must be square, finite, and symmetric within a relative
/// tolerance of its largest entry. Eigenvalues of nominally PSD inputs can
/// come out as tiny negatives; negatives within `1e-9` of the largest
/// eigenvalue's magnitude are clamped to zero so downstream mass ratios stay
/// well-defined.
pub fn eig_symmetric(m: &Tensor) -> Result<EigenSpectrum> {
    if m.ndim() != 2 || m.rows() != m.cols() {
        return Err(Error::contract(format!(
            "eig_symmetric expects a square matrix, got shape {:?}",
            m.shape
        )));
    }
    let n = m.rows();
    if n == 0 {
        return Err(Error::contract("eig_symmetric expects n >= 1".to_string()));
    }
    if !m.all_finite() {
        return Err(Error::contract(
            "eig_symmetric input contains non-finite values".to_string(),
        ));
    }
    let scale = m.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m.at2(i, j) - m.at2(j, i)).abs();
            if diff > SYMMETRY_TOL * scale.max(1.0) {
                return Err(Error::contract(format!(
                    "eig_symmetric input asymmetric at ({}, {}): {} vs {}",
                    i,
                    j,
                    m.at2(i, j),
                    m.at2(j, i)
                )));
            }
        }
    }

    let mut a = m.data.clone();
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                off += a[p * n + q].abs();
            }
        }
        if off == 0.0 {
            return Ok(finish_spectrum(d));
        }

        let thresh = if sweep < 3 {
            0.2 * off / ((n * n) as f64)
        } else {
            0.0
        };

        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let g = 100.0 * apq.abs();
                // Rotation is skipped once the off-diagonal entry is
                // negligible against both diagonal entries.
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    a[p * n + q] = 0.0;
                } else if apq.abs() > thresh {
                    let mut h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        apq / h
                    } else {
                        let theta = 0.5 * h / apq;
                        let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            t = -t;
                        }
                        t
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    h = t * apq;
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    a[p * n + q] = 0.0;
                    for j in 0..p {
                        let g = a[j * n + p];
                        let h = a[j * n + q];
                        a[j * n + p] = g - s * (h + g * tau);
                        a[j * n + q] = h + s * (g - h * tau);
                    }
                    for j in (p + 1)..q {
                        let g = a[p * n + j];
                        let h = a[j * n + q];
                        a[p * n + j] = g - s * (h + g * tau);
                        a[j * n + q] = h + s * (g - h * tau);
                    }
                    for j in (q + 1)..n {
                        let g = a[p * n + j];
                        let h = a[q * n + j];
                        a[p * n + j] = g - s * (h + g * tau);
                        a[q * n + j] = h + s * (g - h * tau);
                    }
                }
            }
        }

        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }

    Err(Error::numerical(format!(
        "eig_symmetric did not converge within {} sweeps on a {}x{} matrix",
        MAX_SWEEPS, n, n
    )))
}

fn finish_spectrum(mut d: Vec<f64>) -> EigenSpectrum {
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lead = d.first().copied().unwrap_or(0.0).abs();
    let clamp = 1e-9 * lead;
    for v in d.iter_mut() {
        if *v < 0.0 && *v >= -clamp {
            *v = 0.0;
        }
    }
    EigenSpectrum { eigenvalues: d }
}
