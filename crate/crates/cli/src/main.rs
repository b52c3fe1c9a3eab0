//! `gnmqsim`: build elastic network models, prepare and evolve amplitude
//! encoded states, and read out spectra, fluctuations and control figures.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 usage or input error,
//! 3 numerical failure. Failures write `error.json` to the output directory.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::*;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Numerical(_) => "numerical",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<gnmqsim::Error> for CliError {
    fn from(e: gnmqsim::Error) -> Self {
        use gnmqsim::Error as E;
        let message = e.to_string();
        match e {
            E::ZeroEnergy
            | E::CorruptedEncoding { .. }
            | E::RejectionLimit { .. }
            | E::RouteDisagreement(_)
            | E::Unstabilizable { .. }
            | E::Numerical(_) => CliError::Numerical(message),
            _ => CliError::Usage(message),
        }
    }
}

#[derive(Parser)]
#[command(name = "gnmqsim", version, about = "Elastic-network read-in, evolution and read-out pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a PDB or JSON structure into C-alpha atoms.
    Structure(StructureArgs),
    /// Build a GNM or ANM and write its matrices, modes and fluctuations.
    Model(ModelArgs),
    /// Prepare the random Gaussian state or the maximally mixed ensemble.
    Stateprep(StatePrepArgs),
    /// Evolve an encoded initial condition (harmonic or Langevin).
    Evolve(EvolveArgs),
    /// Chebyshev moments and the KPM density of states.
    Dos(DosArgs),
    /// LQR feedback that drives a displaced network back to rest.
    Control(ControlArgs),
    /// QROM depth and gate counts versus table size, with fitted scaling.
    Resources(ResourcesArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config, JSON config, or a previous run's manifest.json. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Structure (.pdb, .json) or stiffness matrix (.mtx).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Contact cutoff in Å (default 7 for GNM, 13 for ANM).
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    spring: Option<f64>,
    /// Hexadecimal seed, with or without 0x.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StructureArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    /// Thermal energy for the fluctuation profile.
    #[arg(long)]
    kbt: Option<f64>,
}

#[derive(Args, Clone)]
struct StatePrepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    qubits: Option<u32>,
    #[arg(long, value_enum)]
    state: Option<StateChoice>,
}

#[derive(Args, Clone)]
struct EvolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsChoice>,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    initial: Option<InitialChoice>,
    /// Which nonzero mode to excite, counting from 1.
    #[arg(long)]
    mode: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kbt: Option<f64>,
    #[arg(long, value_enum)]
    damping: Option<DampingChoice>,
    #[arg(long, value_enum)]
    noise: Option<NoiseChoice>,
    /// Euler–Maruyama paths for the Langevin cross-check.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Args, Clone)]
struct DosArgs {
    #[command(flatten)]
    common: Common,
    /// Highest Chebyshev order K; K + 1 moments are written.
    #[arg(long)]
    moments: Option<usize>,
    /// Hutchinson probe count; 0 computes exact moments.
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long, value_enum)]
    operator: Option<OperatorChoice>,
    #[arg(long, value_enum)]
    kernel: Option<KernelChoice>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args, Clone)]
struct ControlArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    control_weight: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    velocity_weight: Option<f64>,
    /// Finite horizon length; omit for the infinite-horizon law.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    time_constants: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    initial: Option<InitialChoice>,
    #[arg(long)]
    mode: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Args, Clone)]
struct ResourcesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    min_entries: Option<usize>,
    #[arg(long)]
    max_entries: Option<usize>,
    /// Word width in bits.
    #[arg(long)]
    width: Option<usize>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value.clone() {
            $target = v;
        }
    };
}

impl Common {
    fn apply(&self, c: &mut RunConfig) {
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        if self.cutoff.is_some() {
            c.cutoff = self.cutoff;
        }
        set!(c.spring, self.spring);
        set!(c.seed, self.seed);
        set!(c.model, self.model);
        set!(c.out, self.out);
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Structure(_) => "structure",
            Command::Model(_) => "model",
            Command::Stateprep(_) => "stateprep",
            Command::Evolve(_) => "evolve",
            Command::Dos(_) => "dos",
            Command::Control(_) => "control",
            Command::Resources(_) => "resources",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Structure(a) => &a.common,
            Command::Model(a) => &a.common,
            Command::Stateprep(a) => &a.common,
            Command::Evolve(a) => &a.common,
            Command::Dos(a) => &a.common,
            Command::Control(a) => &a.common,
            Command::Resources(a) => &a.common,
        }
    }

    fn needs_input(&self) -> bool {
        !matches!(self, Command::Stateprep(_) | Command::Resources(_))
    }

    fn apply(&self, c: &mut RunConfig) {
        self.common().apply(c);
        match self {
            Command::Structure(_) => {}
            Command::Model(a) => set!(c.kbt, a.kbt),
            Command::Stateprep(a) => {
                set!(c.stateprep.qubits, a.qubits);
                set!(c.stateprep.state, a.state);
            }
            Command::Evolve(a) => {
                let e = &mut c.evolve;
                set!(e.dynamics, a.dynamics);
                set!(e.time, a.time);
                set!(e.steps, a.steps);
                set!(e.initial, a.initial);
                set!(e.mode, a.mode);
                set!(e.amplitude, a.amplitude);
                set!(e.gamma, a.gamma);
                set!(e.kbt, a.kbt);
                set!(e.damping, a.damping);
                set!(e.noise, a.noise);
                set!(e.paths, a.paths);
            }
            Command::Dos(a) => {
                set!(c.moments, a.moments);
                set!(c.probes, a.probes);
                set!(c.dos.operator, a.operator);
                set!(c.dos.kernel, a.kernel);
                set!(c.dos.bins, a.bins);
                set!(c.dos.grid_points, a.grid_points);
            }
            Command::Control(a) => {
                let k = &mut c.control;
                set!(k.gamma, a.gamma);
                set!(k.control_weight, a.control_weight);
                set!(k.ridge, a.ridge);
                set!(k.velocity_weight, a.velocity_weight);
                if a.horizon.is_some() {
                    k.horizon = a.horizon;
                }
                set!(k.time_constants, a.time_constants);
                set!(k.steps, a.steps);
                set!(k.initial, a.initial);
                set!(k.mode, a.mode);
                set!(k.amplitude, a.amplitude);
            }
            Command::Resources(a) => {
                let r = &mut c.resources;
                set!(r.min_entries, a.min_entries);
                set!(r.max_entries, a.max_entries);
                set!(r.width, a.width);
            }
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GNMQSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("GNMQSIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn resolve(command: &Command) -> Result<RunConfig, CliError> {
    let mut config = match &command.common().config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    command.apply(&mut config);
    config.validate(command.needs_input())?;
    Ok(config)
}

/// Where `error.json` goes: the flag, else the config file's `out`, else the default.
fn error_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| common.config.as_deref().and_then(|p| RunConfig::load(p).ok()).map(|c| c.out))
        .unwrap_or_else(|| RunConfig::default().out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = configure_threads().and_then(|()| resolve(&cli.command)).and_then(|config| {
        commands::run(name, &config)?;
        Ok(config.out)
    });
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let dir = error_dir(cli.command.common());
            eprintln!("gnmqsim {name}: {} error: {e}", e.kind());
            artifacts::write_error_record(&dir, name, &e);
            ExitCode::from(e.exit_code())
        }
    }
}
