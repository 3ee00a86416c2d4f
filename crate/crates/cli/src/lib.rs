//! Experiment runner: configuration, deterministic replicate streams,
//! experiments over every simulator, reports and plot data, and the
//! acceptance checks.

pub mod config;
pub mod experiments;
pub mod report;
pub mod verify;

use hierarchia::rng::{derive_seed, Stream};
use rand::SeedableRng;
use rayon::prelude::*;

/// Environment variable that overrides the master seed of a config file.
pub const SEED_ENV: &str = "HIERARCHIA_SEED";
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<hierarchia::Error> for CliError {
    fn from(e: hierarchia::Error) -> Self {
        match e {
            hierarchia::Error::Resource(m) => CliError::Resource(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl<T> From<Box<hierarchia::Partial<T>>> for CliError {
    fn from(p: Box<hierarchia::Partial<T>>) -> Self {
        let mut e = CliError::from(p.error.clone());
        if let CliError::Resource(m) = &mut e {
            m.push_str(" (partial output discarded)");
        }
        e
    }
}

/// Runs `f(k, stream_k)` for k in 0..count, each on the stream derived from
/// `(master, name, k)`. Results come back in replicate order whatever the
/// thread count.
pub fn replicates<T, F>(master: u64, name: &str, count: usize, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> Result<T, CliError> + Sync + Send,
{
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = Stream::seed_from_u64(derive_seed(master, name, k as u64));
            f(k, &mut rng)
        })
        .collect()
}

/// `total` draws split into chunks of at most `chunk`, one stream per chunk.
pub fn chunked_draws<F>(master: u64, name: &str, total: usize, chunk: usize, draw: F) -> Result<Vec<f64>, CliError>
where
    F: Fn(&mut Stream) -> Result<f64, CliError> + Sync + Send,
{
    let chunks = total.div_ceil(chunk);
    let parts = replicates(master, name, chunks, |k, rng| {
        let n = chunk.min(total - k * chunk);
        (0..n).map(|_| draw(rng)).collect::<Result<Vec<f64>, CliError>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}
