//! Degrees-of-freedom estimation for layer activations.
//!
//! Given activations `H` of one layer over a probe batch (one column per
//! sample), the estimator centers the rows, compresses feature space with a
//! seeded Gaussian projection, and counts how many principal components of
//! the projected covariance are needed to reach a fraction `tau` of the
//! total eigenvalue mass. That count is the layer's degrees of freedom for
//! the epoch.
//!
//! The covariance eigenvalues are computed from whichever Gram form is
//! smaller (`Z Z^T` or `Z^T Z`); both have the same nonzero spectrum, and
//! the missing dimensions are exact zeros.

use crate::autodiff::{Graph, VarId};
use crate::eig::{eig_symmetric, EigenSpectrum};
use crate::error::{Error, Result};
use crate::model::{ForwardPass, Model};
use crate::rng::SeededRng;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Cumulative eigenvalue mass threshold used throughout unless overridden.
pub const DEFAULT_TAU: f64 = 0.95;

/// Total-variance floor below which an activation matrix is treated as
/// having no variation at all and the estimate degenerates to zero.
pub const VAR_EPSILON: f64 = 1e-12;

/// Width of the random projection (and of the probe set for rank
/// estimation) for a layer of flattened dimension `k_l`.
pub fn projection_dim(k_l: usize, factor: f64) -> Result<usize> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::contract(format!(
            "projection factor must be positive and finite, got {}",
            factor
        )));
    }
    if k_l == 0 {
        return Err(Error::contract("layer dimension must be positive".to_string()));
    }
    Ok(((k_l as f64 * factor).ceil() as usize).max(2))
}

/// Subtract the per-row (per-feature) mean from `h` of shape `[k_l, m]`.
/// Needs at least two columns; with one column the result is trivially zero
/// and the caller almost certainly made a batching mistake.
pub fn centralize(h: &Tensor) -> Result<Tensor> {
    if h.ndim() != 2 {
        return Err(Error::contract(format!(
            "centralize expects [k_l, m], got {:?}",
            h.shape
        )));
    }
    let (k, m) = (h.rows(), h.cols());
    if m < 2 {
        return Err(Error::contract(format!(
            "centralize needs m >= 2 samples, got {}",
            m
        )));
    }
    let mut out = h.clone();
    for i in 0..k {
        let row = &mut out.data[i * m..(i + 1) * m];
        let mean: f64 = row.iter().sum::<f64>() / m as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    Ok(out)
}

/// Eigenvalues of `(1/m) Z Z^T` for centered `z: [d, m]`, padded with zeros
/// to length `d` when the smaller `Z^T Z` form was decomposed instead.
fn covariance_spectrum(z: &Tensor) -> Result<EigenSpectrum> {
    let (d, m) = (z.rows(), z.cols());
    let inv_m = 1.0 / m as f64;
    if m < d {
        let gram = matmul_tn(z, z)?.scale(inv_m);
        Ok(eig_symmetric(&gram)?.padded_to(d))
    } else {
        let cov = matmul_nt(z, z)?.scale(inv_m);
        eig_symmetric(&cov)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::contract(format!(
            "tau must lie strictly between 0 and 1, got {}",
            tau
        )));
    }
    Ok(())
}

/// One layer's degrees-of-freedom estimate for one epoch.
#[derive(Debug, Clone)]
pub struct DofEstimate {
    pub layer: String,
    pub epoch: usize,
    pub dof: usize,
    pub tau: f64,
    /// Projection width used.
    pub r_l: usize,
    /// True when total variance fell below `VAR_EPSILON`; `dof` is 0.
    pub degenerate: bool,
    pub spectrum: EigenSpectrum,
}

/// Degrees of freedom of raw activations `h: [k_l, m]` under an explicit
/// projection `[k_l, r_l]`.
pub fn estimate_dof(
    h: &Tensor,
    tau: f64,
    projection: &Tensor,
) -> Result<(usize, EigenSpectrum, bool)> {
    check_tau(tau)?;
    if projection.ndim() != 2 || projection.rows() != h.rows() {
        return Err(Error::contract(format!(
            "projection {:?} incompatible with activations {:?}",
            projection.shape, h.shape
        )));
    }
    let centered = centralize(h)?;
    let z = matmul_tn(projection, &centered)?;
    let spectrum = covariance_spectrum(&z)?;
    if spectrum.total_mass() <= VAR_EPSILON {
        return Ok((0, spectrum, true));
    }
    let dof = spectrum.count_for_mass(tau);
    Ok((dof, spectrum, false))
}

/// Degrees of freedom from the full (unprojected) covariance spectrum.
/// Reference implementation for fidelity checks; cost grows with `k_l`.
pub fn estimate_dof_full(h: &Tensor, tau: f64) -> Result<(usize, EigenSpectrum, bool)> {
    check_tau(tau)?;
    let centered = centralize(h)?;
    let spectrum = covariance_spectrum(&centered)?;
    if spectrum.total_mass() <= VAR_EPSILON {
        return Ok((0, spectrum, true));
    }
    let dof = spectrum.count_for_mass(tau);
    Ok((dof, spectrum, false))
}

/// Settings shared by both estimators across a whole run.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub tau: f64,
    /// Per-layer overrides of `tau`, checked against known probe points.
    pub tau_overrides: Vec<(String, f64)>,
    pub projection_factor: f64,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            tau: DEFAULT_TAU,
            tau_overrides: Vec::new(),
            projection_factor: 0.1,
            seed,
        }
    }

    pub fn tau_for(&self, layer: &str) -> f64 {
        self.tau_overrides
            .iter()
            .find(|(name, _)| name == layer)
            .map(|(_, t)| *t)
            .unwrap_or(self.tau)
    }
}

/// Flatten the probe activation at `probe` (shape `[m, c, h, w]` or
/// `[m, k]`) into the `[k_l, m]` column-per-sample layout.
pub fn activations_matrix(graph: &Graph, probe: VarId) -> Result<Tensor> {
    let v = graph.value(probe);
    if v.ndim() < 2 {
        return Err(Error::contract(format!(
            "probe activations need a batch axis, got shape {:?}",
            v.shape
        )));
    }
    let m = v.shape[0];
    let k: usize = v.shape[1..].iter().product();
    let mut out = Tensor::zeros(&[k, m]);
    for s in 0..m {
        for f in 0..k {
            out.data[f * m + s] = v.data[s * k + f];
        }
    }
    Ok(out)
}

/// Estimate degrees of freedom for the named probe layers of one taped
/// forward pass. A fresh projection is drawn per (layer, epoch). Unknown
/// layer names are configuration errors; an empty layer list yields an
/// empty result.
pub fn run_dof_schedule(
    graph: &Graph,
    pass: &ForwardPass,
    model: &Model,
    layers: &[String],
    epoch: usize,
    cfg: &EstimatorConfig,
) -> Result<Vec<DofEstimate>> {
    let mut out = Vec::with_capacity(layers.len());
    for name in layers {
        let (idx, point) = model.probe_point(name).ok_or_else(|| {
            Error::config(format!(
                "unknown probe layer '{}' for model {}",
                name,
                model.kind.name()
            ))
        })?;
        let h = activations_matrix(graph, pass.probes[idx])?;
        let r_l = projection_dim(point.dim, cfg.projection_factor)?;
        let mut rng = SeededRng::new(cfg.seed, &format!("dof-proj-{}", name), epoch as u64);
        let projection = rng.sample_gaussian(point.dim, r_l);
        let tau = cfg.tau_for(name);
        let (dof, spectrum, degenerate) = estimate_dof(&h, tau, &projection)?;
        out.push(DofEstimate {
            layer: name.clone(),
            epoch,
            dof,
            tau,
            r_l,
            degenerate,
            spectrum,
        });
    }
    Ok(out)
}
