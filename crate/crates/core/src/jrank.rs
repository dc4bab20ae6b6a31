//! Jacobian rank estimation for the input-to-layer map.
//!
//! Direct computation of the Jacobian of a layer's activations with respect
//! to the input is far too large, so the estimator probes it: for `k`
//! Gaussian vectors `v_j` in activation space, one reverse-mode sweep per
//! probe yields `u_j = sum over the batch of grad_x <h, v_j>`, a column of
//! `U = J^T V` (batch-summed). The eigenvalue mass of the Gram matrix
//! `U^T U` then gives the rank estimate with the same `tau` threshold the
//! degrees-of-freedom estimator uses.
//!
//! Probing a taped forward with a batch of one sample gives the per-sample
//! Jacobian; larger batches give the batch-summed form used during runs.

use crate::autodiff::{Graph, VarId};
use crate::dof::{projection_dim, EstimatorConfig, VAR_EPSILON};
use crate::eig::{eig_symmetric, EigenSpectrum};
use crate::error::{Error, Result};
use crate::model::{ForwardPass, Model};
use crate::rng::SeededRng;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Gaussian probe vectors for one layer: `[k_l, k]`, one column per probe.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub vectors: Tensor,
}

impl ProbeSet {
    /// Draw `k` probes for a layer of flattened dimension `k_l`. The stream
    /// is keyed by layer name and epoch, so probes are fresh per epoch and
    /// reproducible per run.
    pub fn draw(k_l: usize, k: usize, seed: u64, layer: &str, epoch: usize) -> Result<ProbeSet> {
        if k == 0 || k_l == 0 {
            return Err(Error::contract(format!(
                "probe set needs k_l, k >= 1, got k_l={} k={}",
                k_l, k
            )));
        }
        let mut rng = SeededRng::new(seed, &format!("rank-probe-{}", layer), epoch as u64);
        Ok(ProbeSet {
            vectors: rng.sample_gaussian(k_l, k),
        })
    }

    pub fn k_l(&self) -> usize {
        self.vectors.rows()
    }

    pub fn k(&self) -> usize {
        self.vectors.cols()
    }
}

/// Probe the Jacobian of `probe` (activations, `[m, ...]`) with respect to
/// `input` (`[m, ...]`), both nodes of one taped forward. Returns
/// `U: [D, k]` where `D` is the flattened per-sample input dimension and
/// column `j` is the batch-summed input gradient of `<h, v_j>`.
pub fn probe_gradients(
    graph: &Graph,
    input: VarId,
    probe: VarId,
    probes: &ProbeSet,
) -> Result<Tensor> {
    let hv = graph.value(probe);
    let xv = graph.value(input);
    if hv.ndim() < 2 || xv.ndim() < 2 {
        return Err(Error::contract(format!(
            "probe and input need batch axes, got {:?} and {:?}",
            hv.shape, xv.shape
        )));
    }
    let m = hv.shape[0];
    if xv.shape[0] != m {
        return Err(Error::contract(format!(
            "probe batch {} does not match input batch {}",
            m, xv.shape[0]
        )));
    }
    let k_l: usize = hv.shape[1..].iter().product();
    if k_l != probes.k_l() {
        return Err(Error::contract(format!(
            "probe vectors have dimension {}, layer has {}",
            probes.k_l(),
            k_l
        )));
    }
    let d: usize = xv.shape[1..].iter().product();
    let k = probes.k();

    let mut u = Tensor::zeros(&[d, k]);
    let mut seed = Tensor::zeros(&hv.shape);
    for j in 0..k {
        // Same cotangent v_j for every sample: <h, v_j> summed over the
        // batch differentiates to per-sample contributions that the input
        // gradient already holds separately.
        for s in 0..m {
            for f in 0..k_l {
                seed.data[s * k_l + f] = probes.vectors.data[f * k + j];
            }
        }
        let grads = graph.backward_seeded_toward(probe, &seed, input)?;
        let gx = grads.get(input).ok_or_else(|| {
            Error::contract(
                "probe layer has no gradient path to the input".to_string(),
            )
        })?;
        for s in 0..m {
            for di in 0..d {
                u.data[di * k + j] += gx.data[s * d + di];
            }
        }
    }
    Ok(u)
}

/// Rank estimate from probe gradients `U: [D, k]`: eigenvalue mass count of
/// the Gram matrix `U^T U` at threshold `tau`. Degenerates to 0 when the
/// total mass is below `VAR_EPSILON`.
pub fn estimate_rank(u: &Tensor, tau: f64) -> Result<(usize, EigenSpectrum, bool)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::contract(format!(
            "tau must lie strictly between 0 and 1, got {}",
            tau
        )));
    }
    if u.ndim() != 2 {
        return Err(Error::contract(format!(
            "estimate_rank expects U as [D, k], got {:?}",
            u.shape
        )));
    }
    let (d, k) = (u.rows(), u.cols());
    // Both Gram forms share the nonzero spectrum; decompose the smaller.
    let spectrum = if d < k {
        eig_symmetric(&matmul_nt(u, u)?)?.padded_to(k)
    } else {
        eig_symmetric(&matmul_tn(u, u)?)?
    };
    if spectrum.total_mass() <= VAR_EPSILON {
        return Ok((0, spectrum, true));
    }
    let rank = spectrum.count_for_mass(tau);
    Ok((rank, spectrum, false))
}

/// One layer's Jacobian rank estimate for one epoch.
#[derive(Debug, Clone)]
pub struct RankEstimate {
    pub layer: String,
    pub epoch: usize,
    pub rank: usize,
    pub tau: f64,
    /// Number of probes used.
    pub k: usize,
    /// True when all probe gradients vanished; `rank` is 0.
    pub degenerate: bool,
    pub spectrum: EigenSpectrum,
}

/// Estimate Jacobian rank for the named probe layers of one taped forward
/// pass. Probes are fresh per (layer, epoch). Unknown layer names are
/// configuration errors; an empty layer list yields an empty result.
pub fn run_rank_schedule(
    graph: &Graph,
    pass: &ForwardPass,
    model: &Model,
    layers: &[String],
    epoch: usize,
    cfg: &EstimatorConfig,
) -> Result<Vec<RankEstimate>> {
    let mut out = Vec::with_capacity(layers.len());
    for name in layers {
        let (idx, point) = model.probe_point(name).ok_or_else(|| {
            Error::config(format!(
                "unknown probe layer '{}' for model {}",
                name,
                model.kind.name()
            ))
        })?;
        let k = projection_dim(point.dim, cfg.projection_factor)?;
        let probes = ProbeSet::draw(point.dim, k, cfg.seed, name, epoch)?;
        let u = probe_gradients(graph, pass.input, pass.probes[idx], &probes)?;
        let tau = cfg.tau_for(name);
        let (rank, spectrum, degenerate) = estimate_rank(&u, tau)?;
        out.push(RankEstimate {
            layer: name.clone(),
            epoch,
            rank,
            tau,
            k,
            degenerate,
            spectrum,
        });
    }
    Ok(out)
}
