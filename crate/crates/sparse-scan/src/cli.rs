//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_scan_core::backbone::{BackboneConfig, BackboneParams};
use sparse_scan_core::event::EventStream;
use sparse_scan_core::s6::ScanMode;
use sparse_scan_core::scan_order::{IplConfig, ScanPath};
use sparse_scan_core::sparsify::{gather_tokens, FeatureMap};
use sparse_scan_core::stca::{run_stca, GaussianConfig, StcaConfig};
use sparse_scan_core::synth::{generate_synthetic_scene, SceneSpec};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::io::{self, EventFormat};
use crate::pipeline::{combine_reports, run_windows};
use crate::report::{report_json, report_table};

#[derive(Debug, Parser)]
#[command(name = "sparse-scan", version, about = "Sparse event-driven selective-scan backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event scene.
    Gen(GenArgs),
    /// Score tokens and write the keep mask.
    Stca(StcaArgs),
    /// Write the scan order over kept tokens.
    ScanViz(ScanVizArgs),
    /// Run the backbone over an event file and report operation counts.
    Forward(ForwardArgs),
    /// Time the forward path over generated scenes.
    Bench(BenchArgs),
    /// Run the oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "edge-noise", value_parser = clap::builder::PossibleValuesParser::new(SceneSpec::PRESETS))]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` writes CSV, anything else the binary format.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StcaFlags {
    /// Sparsity factor; the threshold is the mean token score divided by it.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Token side in pixels.
    #[arg(long, default_value_t = 4)]
    pub patch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
}

impl StcaFlags {
    fn config(&self) -> StcaConfig {
        StcaConfig {
            patch: self.patch,
            gaussian: GaussianConfig {
                radius: self.radius,
                sigma: self.sigma,
            },
            beta: self.beta,
        }
    }
}

#[derive(Debug, Args)]
pub struct StcaArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub stca: StcaFlags,
    /// Keep mask as an 8-bit PGM.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Smoothed token scores as CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanVizArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub stca: StcaFlags,
    #[arg(long, default_value = "ipl", value_parser = clap::builder::PossibleValuesParser::new(ScanPath::ALL.map(ScanPath::name)))]
    pub pattern: String,
    /// IPL window side in tokens.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Output CSV with `position,row,col`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Parallel,
}

impl From<ModeArg> for ScanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sequential => ScanMode::Sequential,
            ModeArg::Parallel => ScanMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// Temporal bins per polarity.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Sequential)]
    pub scan_mode: ModeArg,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Windows the input is split into; the recurrent state carries across.
    #[arg(long, default_value_t = 1)]
    pub timesteps: usize,
}

impl ModelFlags {
    fn params(&self, input: (usize, usize), patch: usize, checkpoint: Option<&Path>) -> Result<BackboneParams> {
        let cfg = BackboneConfig {
            input,
            patch,
            bins: self.bins,
            scan_mode: self.scan_mode.into(),
            ..BackboneConfig::default()
        };
        let mut params = BackboneParams::init(cfg, self.seed)?;
        if let Some(path) = checkpoint {
            load_checkpoint(&mut params, path)?;
        }
        Ok(params)
    }
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub stca: StcaFlags,
    /// Write the FLOP report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Load parameters instead of using the random initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Save the parameters used for this run.
    #[arg(long)]
    pub save_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "edge-noise", value_parser = clap::builder::PossibleValuesParser::new(SceneSpec::PRESETS))]
    pub preset: String,
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    /// Seed of the first scene.
    #[arg(long, default_value_t = 0)]
    pub scene_seed: u64,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub stca: StcaFlags,
}

fn load(path: &Path) -> Result<EventStream> {
    io::load_events(path, EventFormat::from_path(path))
}

fn preset(name: &str) -> Result<SceneSpec> {
    SceneSpec::preset(name).ok_or_else(|| Error::Format(format!("unknown preset {name:?}")))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let scene = generate_synthetic_scene(&preset(&a.preset)?, a.seed)?;
    io::save_events(&scene.stream, &a.output, EventFormat::from_path(&a.output))?;
    println!(
        "wrote {} events ({} noise) to {}; spatial ratio {:.4}",
        scene.stream.len(),
        scene.noise_events,
        a.output.display(),
        scene.stream.spatial_ratio()
    );
    Ok(())
}

fn cmd_stca(a: &StcaArgs) -> Result<()> {
    let stream = load(&a.input)?;
    let out = run_stca(&stream, &a.stca.config())?;
    io::write_file(&a.output, io::encode_mask_pgm(&out.map))?;
    if let Some(path) = &a.scores {
        io::write_file(path, io::format_scores_csv(&out.scores))?;
    }
    let (rows, cols) = out.map.dims();
    println!(
        "{rows}×{cols} tokens, kept {} ({:.4}), threshold {:.6}",
        out.map.kept_count(),
        out.map.kept_ratio(),
        out.threshold()
    );
    Ok(())
}

fn cmd_scan_viz(a: &ScanVizArgs) -> Result<()> {
    let stream = load(&a.input)?;
    let out = run_stca(&stream, &a.stca.config())?;
    let (rows, cols) = out.map.dims();
    let ts = gather_tokens(&FeatureMap::zeros(1, rows, cols), &out.map)?;
    let path = ScanPath::parse(&a.pattern).ok_or_else(|| Error::Format(format!("unknown pattern {:?}", a.pattern)))?;
    let order = path.order(&ts, &out.scores, &IplConfig { window: a.k })?;
    let grid_order: Vec<usize> = order
        .as_slice()
        .iter()
        .map(|&i| {
            let (r, c) = ts.coords()[i];
            r * cols + c
        })
        .collect();
    io::write_file(&a.output, io::format_order_csv(&grid_order, cols))?;
    println!("{} kept tokens in {} order", ts.len(), path.name());
    Ok(())
}

fn cmd_forward(a: &ForwardArgs) -> Result<()> {
    let stream = load(&a.input)?;
    let params = a.model.params((stream.height(), stream.width()), a.stca.patch, a.checkpoint.as_deref())?;
    let (windows, _) = run_windows(&params, &stream, &a.stca.config(), a.model.timesteps)?;
    let reports: Vec<_> = windows.iter().map(|w| &w.report).collect();
    let report = combine_reports(&reports);
    print!("{}", report_table(&report));
    if let Some(path) = &a.report {
        io::write_file(path, serde_json::to_string_pretty(&report_json(&report))?)?;
    }
    if let Some(path) = &a.save_checkpoint {
        save_checkpoint(&params, path)?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let spec = preset(&a.preset)?;
    let (h, w) = (spec.geometry.height as usize, spec.geometry.width as usize);
    let params = a.model.params((h, w), a.stca.patch, None)?;
    let rows = crate::bench::run_bench(&params, &spec, &a.stca.config(), a.scene_seed, a.scenes, a.model.timesteps)?;
    println!("{:>6} {:>10} {:>8} {:>8} {:>10}", "seed", "ms", "spatial", "kept", "reduction");
    for r in &rows {
        println!(
            "{:>6} {:>10.2} {:>8.4} {:>8.4} {:>9.2}%",
            r.seed,
            1e3 * r.seconds,
            r.spatial_ratio,
            r.kept_ratio,
            100.0 * r.reduction
        );
    }
    let n = rows.len().max(1) as f64;
    println!(
        "mean {:.2} ms per scene, mean reduction {:.2}% ({} workers)",
        1e3 * rows.iter().map(|r| r.seconds).sum::<f64>() / n,
        100.0 * rows.iter().map(|r| r.reduction).sum::<f64>() / n,
        crate::bench::worker_count()?
    );
    Ok(())
}

fn cmd_selftest() -> bool {
    let outcomes = crate::selftest::run_all(|o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    failed == 0
}

/// Runs one command; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Stca(a) => cmd_stca(a),
        Command::ScanViz(a) => cmd_scan_viz(a),
        Command::Forward(a) => cmd_forward(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Selftest => return if cmd_selftest() { 0 } else { 1 },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
