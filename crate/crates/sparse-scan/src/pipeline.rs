//! Event stream → STCA → backbone, window by window.

use sparse_scan_core::backbone::{backbone_forward, BackboneOutput, BackboneParams, BackboneState, STAGES};
use sparse_scan_core::event::{build_voxel_grid, EventStream};
use sparse_scan_core::flops::{FlopMeter, FlopsReport};
use sparse_scan_core::stca::{run_stca, SparsificationMap, StcaConfig, StcaOutput};
use sparse_scan_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct WindowResult {
    pub stca: StcaOutput,
    pub spatial_ratio: f64,
    pub output: BackboneOutput,
    /// Sparse run against the same window with every token kept.
    pub report: FlopsReport,
}

/// Splits `stream` into `timesteps` windows and runs each through the
/// backbone, carrying the recurrent state forward.
pub fn run_windows(
    params: &BackboneParams,
    stream: &EventStream,
    stca: &StcaConfig,
    timesteps: usize,
) -> Result<(Vec<WindowResult>, BackboneState)> {
    let cfg = &params.config;
    if stca.patch != cfg.patch {
        return Err(Error::Config(format!(
            "STCA patch {} differs from the backbone patch {}",
            stca.patch, cfg.patch
        )));
    }
    if (stream.height(), stream.width()) != cfg.input {
        return Err(Error::Config(format!(
            "stream is {}×{}, backbone expects {}×{}",
            stream.height(),
            stream.width(),
            cfg.input.0,
            cfg.input.1
        )));
    }
    let mut state = params.initial_state();
    let mut results = Vec::with_capacity(timesteps);
    for window in stream.split(timesteps)? {
        let voxels = build_voxel_grid(&window, cfg.bins)?;
        let st = run_stca(&window, stca)?;
        let output = backbone_forward(params, &voxels, &st.map, &st.scores, &state)?;
        let (r, c) = st.map.dims();
        let dense = backbone_forward(params, &voxels, &SparsificationMap::all(r, c, true), &st.scores, &state)?;
        let stages = sparse_scan_core::backbone::stage_maps(cfg, &st.map, &st.scores)?;
        let ratios: [f64; STAGES] = std::array::from_fn(|s| stages[s].0.kept_ratio());
        let report = FlopsReport::compare(&output.meter, &dense.meter, ratios);
        state = output.state.clone();
        results.push(WindowResult {
            spatial_ratio: window.spatial_ratio(),
            stca: st,
            output,
            report,
        });
    }
    Ok((results, state))
}

/// Sums the meters of several windows; kept ratios are averaged.
pub fn combine_reports(reports: &[&FlopsReport]) -> FlopsReport {
    let (mut sparse, mut dense) = (FlopMeter::default(), FlopMeter::default());
    let mut ratios = [0.0; STAGES];
    for r in reports {
        for b in &r.blocks {
            sparse.add(b.key, b.sparse);
            dense.add(b.key, b.dense);
        }
        for (acc, k) in ratios.iter_mut().zip(r.kept_ratios) {
            *acc += k;
        }
    }
    let n = reports.len().max(1) as f64;
    FlopsReport::compare(&sparse, &dense, ratios.map(|r| r / n))
}
