//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 output could not be written, 2 malformed or missing
//! input, 3 network validation failure, 4 timing crosscheck mismatch,
//! 5 golden mismatch.

pub mod golden;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dse::{
    intermediate_reduction, network_access_report, rank_configs, sweep_points, Convention,
};
use crate::engine::{
    random_input, random_network_params, run_layer_fused, run_network, EngineConfig, LayerParams,
    Mode,
};
use crate::error::Error;
use crate::tensor::{DType, QuantTensor};
use crate::timing::{crosscheck_trace, network_timing};
use crate::workload::{
    builtin_mobilenet_v1_cifar10, validate_network, Network, DEFAULT_SPATIAL_CAP,
};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Parser)]
#[command(
    name = "dsc-accel",
    version,
    about = "Dual-engine DSC accelerator simulator and performance model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a network through the bit-exact engine model.
    Simulate(SimulateArgs),
    /// Sweep loop orders and tile sizes; report access counts.
    Explore(ExploreArgs),
    /// Analytic latency and throughput report.
    Timing(TimingArgs),
    /// Compare fused, sequential and oracle outputs on random data.
    Golden(GoldenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Network JSON file; the built-in MobileNetV1/CIFAR10 network if omitted.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long = "spatial-cap", default_value_t = DEFAULT_SPATIAL_CAP)]
    pub spatial_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fused,
    Sequential,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fused => Mode::Fused,
            ModeArg::Sequential => Mode::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Raw,
    #[value(name = "tableII")]
    TableII,
}

impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Raw => Convention::Raw,
            ConventionArg::TableII => Convention::TableII,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "fused")]
    pub mode: ModeArg,
    /// Directory holding `L{i}.dwc.w`, `L{i}.pwc.w`, `L{i}.dwc.ncv`,
    /// `L{i}.pwc.ncv`; generated from the seed if omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Input tensor file for layer 0; generated from the seed if omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Restrict the reduction report to one convention.
    #[arg(long, value_enum)]
    pub convention: Option<ConventionArg>,
}

#[derive(Debug, Clone, Args)]
pub struct TimingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Clock frequency in Hz.
    #[arg(long, default_value_t = 1e9)]
    pub freq: f64,
    /// Also run the engine model and compare its cycle traces.
    #[arg(long)]
    pub crosscheck: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GoldenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated layer indices; all layers if omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Random draws per layer.
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Everything that determines a run's artifacts; written to
/// `manifest.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub network: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub spatial_cap: usize,
    pub t_period_ns: Option<f64>,
    pub convention: Option<Convention>,
    pub mode: Option<Mode>,
    pub layers: Option<Vec<usize>>,
}

impl RunManifest {
    fn base(command: &str, c: &CommonArgs) -> Self {
        RunManifest {
            command: command.to_string(),
            network: c.network.clone(),
            weights: None,
            input: None,
            out: c.out.clone(),
            seed: c.seed,
            spatial_cap: c.spatial_cap,
            t_period_ns: None,
            convention: None,
            mode: None,
            layers: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug)]
pub enum Failure {
    Output(String),
    Input(String),
    Validation(Vec<String>),
    Crosscheck(String),
    Golden(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Output(_) => 1,
            Failure::Input(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Crosscheck(_) => 4,
            Failure::Golden(_) => 5,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Output(m)
            | Failure::Input(m)
            | Failure::Crosscheck(m)
            | Failure::Golden(m) => m.clone(),
            Failure::Validation(v) => v.join("\n"),
        }
    }
}

fn input_err(e: Error) -> Failure {
    Failure::Input(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Output(format!("{}: {e}", dir.display())))
}

fn engine_config(c: &CommonArgs) -> Result<EngineConfig, Failure> {
    if c.spatial_cap < 2 || !c.spatial_cap.is_multiple_of(2) {
        return Err(Failure::Input(format!(
            "--spatial-cap {} must be a positive multiple of 2",
            c.spatial_cap
        )));
    }
    Ok(EngineConfig::with_spatial_cap(c.spatial_cap))
}

/// Loads (or builds) the network and rejects it if any invariant fails.
fn load_network(c: &CommonArgs) -> Result<Network, Failure> {
    let net = match &c.network {
        Some(p) => Network::load(p).map_err(input_err)?,
        None => builtin_mobilenet_v1_cifar10(),
    };
    let violations = validate_network(&net);
    if !violations.is_empty() {
        return Err(Failure::Validation(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }
    Ok(net)
}

/// Parses and runs one invocation, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Explore(a) => cmd_explore(&a),
        Command::Timing(a) => cmd_timing(&a),
        Command::Golden(a) => cmd_golden(&a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = engine_config(&a.common)?;
    let net = load_network(&a.common)?;
    let mode: Mode = a.mode.into();

    let (mut input, mut params) = random_network_params(&net, a.common.seed);
    if let Some(dir) = &a.weights {
        params = net
            .layers
            .iter()
            .map(|l| {
                let p = LayerParams::read_bundle(dir, l.index)?;
                p.check(l)?;
                Ok(p)
            })
            .collect::<crate::Result<_>>()
            .map_err(input_err)?;
        if a.input.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
            input = random_input(&net.layers[0], &mut rng);
        }
    }
    if let Some(path) = &a.input {
        input = QuantTensor::read(path).map_err(input_err)?;
        if input.dtype() != DType::Act8 {
            return Err(Failure::Input(format!(
                "{}: input must be act8",
                path.display()
            )));
        }
    }

    let run = run_network(&net, &input, &params, &cfg, mode).map_err(input_err)?;

    let out = &a.common.out;
    prepare_out(out)?;
    for (i, l) in run.layers.iter().enumerate() {
        l.ofmap
            .write(&out.join(format!("L{i}.ofmap")))
            .map_err(|e| Failure::Output(e.to_string()))?;
    }
    let runs = &run.layers;
    write_file(&out.join("counters.csv"), &report::counters_csv(mode, runs))?;
    write_file(
        &out.join("zero_stats.csv"),
        &report::zero_stats_csv(&run.zero_stats),
    )?;
    let manifest = RunManifest {
        weights: a.weights.clone(),
        input: a.input.clone(),
        mode: Some(mode),
        ..RunManifest::base("simulate", &a.common)
    };
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;

    println!(
        "simulated {} layers ({mode}), outputs in {}",
        net.layers.len(),
        out.display()
    );
    for z in &run.zero_stats {
        println!(
            "  layer {:>2}: dwc zeros {:6.2}%  pwc zeros {:6.2}%",
            z.layer,
            100.0 * z.dwc_zero_fraction,
            100.0 * z.pwc_zero_fraction
        );
    }
    Ok(())
}

pub fn cmd_explore(a: &ExploreArgs) -> Result<(), Failure> {
    let net = load_network(&a.common)?;
    let reports: Vec<_> = sweep_points()
        .iter()
        .map(|p| network_access_report(&net, p))
        .collect();
    let conventions: Vec<Convention> = match a.convention {
        Some(c) => vec![c.into()],
        None => Convention::ALL.to_vec(),
    };
    let reductions: Vec<_> = conventions
        .iter()
        .map(|&c| intermediate_reduction(&net, c))
        .collect();
    let ranked = rank_configs(&net);

    let out = &a.common.out;
    prepare_out(out)?;
    write_file(&out.join("dse.csv"), &report::dse_csv(&reports))?;
    write_file(
        &out.join("reduction.csv"),
        &report::reduction_csv(&reductions),
    )?;
    let manifest = RunManifest {
        convention: a.convention.map(Into::into),
        ..RunManifest::base("explore", &a.common)
    };
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;

    let best = &ranked[0];
    println!(
        "best: {} (activation {}, weight {}, psum {}, total without psum {})",
        best.point,
        best.activation - best.psum,
        best.weight,
        best.psum,
        best.table_total()
    );
    for r in &reductions {
        println!(
            "intermediate elimination ({}): {:.1}% total reduction",
            r.convention,
            100.0 * r.total.reduction()
        );
    }
    Ok(())
}

pub fn cmd_timing(a: &TimingArgs) -> Result<(), Failure> {
    let cfg = engine_config(&a.common)?;
    let net = load_network(&a.common)?;
    if !(a.freq.is_finite() && a.freq > 0.0) {
        return Err(Failure::Input(format!(
            "--freq {} must be positive",
            a.freq
        )));
    }
    let t_period_ns = 1e9 / a.freq;
    let report = network_timing(&net, &cfg, t_period_ns);

    let out = &a.common.out;
    prepare_out(out)?;
    write_file(&out.join("timing.json"), &report::timing_json(&report))?;
    let manifest = RunManifest {
        t_period_ns: Some(t_period_ns),
        ..RunManifest::base("timing", &a.common)
    };
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;

    for l in &report.layers {
        println!(
            "layer {:>2}: {:>6} cycles  {:>10.1} ns  {:>9.2} GOPS  dwc {:5.1}%  pwc {:5.1}%",
            l.index,
            l.total_cycles,
            l.total_ns,
            l.throughput_gops,
            100.0 * l.dwc_utilization,
            100.0 * l.pwc_utilization
        );
    }
    println!(
        "mean {:.2} GOPS (ops-weighted {:.2}), total {:.1} ns",
        report.mean_gops, report.weighted_gops, report.total_ns
    );

    if a.crosscheck {
        let failures: Vec<String> = net
            .layers
            .par_iter()
            .map(|l| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(golden::trial_seed(a.common.seed, l.index, 0));
                let params = crate::engine::random_layer_params(l, &mut rng);
                let input = random_input(l, &mut rng);
                let run = run_layer_fused(l, &input, &params, &cfg).map_err(|e| e.to_string())?;
                match crosscheck_trace(l, &cfg, &run.trace) {
                    Ok(true) => Ok(()),
                    Ok(false) => Err(format!(
                        "layer {}: trace {} cycles (first PWC at {:?}), model {}",
                        l.index,
                        run.trace.total_cycles(),
                        run.trace.first_pwc_cycle,
                        report.layers[l.index].total_cycles
                    )),
                    Err(e) => Err(e.to_string()),
                }
            })
            .filter_map(|r: Result<(), String>| r.err())
            .collect();
        if !failures.is_empty() {
            return Err(Failure::Crosscheck(failures.join("\n")));
        }
        println!(
            "crosscheck: engine traces match the model on all {} layers",
            net.layers.len()
        );
    }
    Ok(())
}

pub fn cmd_golden(a: &GoldenArgs) -> Result<(), Failure> {
    let cfg = engine_config(&a.common)?;
    let net = load_network(&a.common)?;
    let layers = match &a.layers {
        None => net.layers.clone(),
        Some(idx) => idx
            .iter()
            .map(|&i| {
                net.layers.get(i).copied().ok_or_else(|| {
                    Failure::Input(format!("--layers: no layer {i} in {}", net.name))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let outcomes = golden::run_golden(&layers, &cfg, a.common.seed, a.trials, a.inject_fault)
        .map_err(input_err)?;

    let mut text = String::new();
    for o in &outcomes {
        text.push_str(&o.to_string());
        text.push('\n');
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| o.mismatch.is_some()).collect();
    text.push_str(&format!(
        "{}: {} of {} checks bit-exact\n",
        if failed.is_empty() { "PASS" } else { "FAIL" },
        outcomes.len() - failed.len(),
        outcomes.len()
    ));

    let out = &a.common.out;
    prepare_out(out)?;
    write_file(&out.join("golden.txt"), text.as_bytes())?;
    let manifest = RunManifest {
        layers: a.layers.clone(),
        ..RunManifest::base("golden", &a.common)
    };
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;
    print!("{text}");

    if let Some(first) = failed.first() {
        return Err(Failure::Golden(first.to_string()));
    }
    Ok(())
}
