//! Files, dataset assembly, the batch pipeline and the command line for
//! single-image x-ray tomography. The algorithms live in `xray2vol-core`.

pub mod cli;
pub mod dataset;
mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;

pub use error::{Error, Result};
pub use xray2vol_core as core;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "XRAY2VOL_THREADS";

/// Sizes the global worker pool from `XRAY2VOL_THREADS` when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(format!("cannot size the worker pool: {e}")))
}
