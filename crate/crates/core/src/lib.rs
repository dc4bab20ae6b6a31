//! Core library for layer-level privacy risk assessment of small CNNs.
//!
//! The crate trains compact convolutional models, watches how the effective
//! dimensionality of their intermediate representations evolves across
//! epochs, and relates those dynamics to empirical membership inference
//! risk. Two estimators drive everything:
//!
//! - degrees of freedom of a layer's activations: eigenvalue mass of the
//!   covariance of randomly projected activations, and
//! - Jacobian rank of the input-to-layer map: eigenvalue mass of the Gram
//!   matrix of probe gradients.
//!
//! Supporting modules provide a deterministic tensor/autodiff stack, dataset
//! loaders, metric summaries, an attack harness for validation, and an
//! experiment runner that the CLI drives.

pub mod error;
pub mod tensor;
pub mod rng;
pub mod eig;
pub mod autodiff;
pub mod model;
pub mod optim;
pub mod data;
pub mod synth;
pub mod dof;
pub mod jrank;
pub mod experiment;
pub mod metrics;
pub mod mia;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use rng::SeededRng;
pub use eig::{eig_symmetric, EigenSpectrum};

use std::io::Write;
use std::path::Path;

/// Write `bytes` to `path` atomically: write a sibling temp file, then
/// rename over the destination. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
