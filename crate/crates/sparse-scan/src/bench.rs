//! Timing of the sparse forward path over independent generated scenes.

use std::time::Instant;

use rayon::prelude::*;
use sparse_scan_core::backbone::BackboneParams;
use sparse_scan_core::stca::StcaConfig;
use sparse_scan_core::synth::{generate_synthetic_scene, SceneSpec};

use crate::error::{Error, Result};
use crate::pipeline::run_windows;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SPARSE_SCAN_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTiming {
    pub seed: u64,
    pub seconds: f64,
    pub spatial_ratio: f64,
    pub kept_ratio: f64,
    pub reduction: f64,
}

/// Worker count: the available parallelism, capped by [`THREADS_ENV`].
pub fn worker_count() -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
            if cap == 0 {
                return Err(Error::Format(format!("{THREADS_ENV} must be at least 1")));
            }
            Ok(cap.min(available))
        }
        Err(_) => Ok(available),
    }
}

/// Runs `scenes` scenes with seeds `seed, seed + 1, …`; results come back in
/// seed order whatever the worker count.
pub fn run_bench(
    params: &BackboneParams,
    spec: &SceneSpec,
    stca: &StcaConfig,
    seed: u64,
    scenes: usize,
    timesteps: usize,
) -> Result<Vec<SceneTiming>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Format(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..scenes as u64)
            .into_par_iter()
            .map(|i| {
                let seed = seed + i;
                let scene = generate_synthetic_scene(spec, seed)?;
                let start = Instant::now();
                let (windows, _) = run_windows(params, &scene.stream, stca, timesteps)?;
                let seconds = start.elapsed().as_secs_f64();
                let reports: Vec<_> = windows.iter().map(|w| &w.report).collect();
                let combined = crate::pipeline::combine_reports(&reports);
                let kept = windows.iter().map(|w| w.stca.map.kept_ratio()).sum::<f64>() / windows.len() as f64;
                Ok(SceneTiming {
                    seed,
                    seconds,
                    spatial_ratio: scene.stream.spatial_ratio(),
                    kept_ratio: kept,
                    reduction: combined.reduction(),
                })
            })
            .collect::<std::result::Result<Vec<_>, sparse_scan_core::Error>>()
            .map_err(Error::from)
    })
}
