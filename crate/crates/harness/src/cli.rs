//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msfuse_core::{DType, Variant};

#[derive(Debug, Parser)]
#[command(name = "msfuse", version, about = "Verification harness for the msfuse kernels")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// PRNG seed for inputs and weights.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Element type; defaults to f32 for `bench` and f64 otherwise.
    #[arg(long, global = true, value_enum)]
    pub dtype: Option<DTypeArg>,
    /// Write the JSON run report here.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Omit wall-clock timings from the report.
    #[arg(long, global = true)]
    pub redact_timings: bool,
    /// JSON config document; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run every invariant suite.
    Check {
        /// Perturb one optimized convolution kernel.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Finite-difference gradient checks (f64 only).
    Gradcheck {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Time kernels and modules.
    Bench {
        /// Module input shape `B,C,H,W`.
        #[arg(long, value_parser = parse_shape)]
        shape: Option<[usize; 4]>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Parameter and per-stage FLOP counts.
    Count {
        #[arg(long, value_enum, default_value = "agmf")]
        module: ModuleArg,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        /// Input shape `B,C,H,W`; `C` sets the module width.
        #[arg(long, value_parser = parse_shape, default_value = "1,16,32,32")]
        shape: [usize; 4],
        /// FMDS output channels; defaults to `C`.
        #[arg(long)]
        out_channels: Option<usize>,
    },
    /// Write channel-mean heatmaps of each stage as P5 images.
    Dump {
        /// NTSR1 input tensor.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "agmf")]
        module: ModuleArg,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Bench { .. } => "bench",
            Command::Count { .. } => "count",
            Command::Dump { .. } => "dump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModuleArg {
    Fmds,
    Agmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    NoFmds,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoFmds => Variant::NoFmds,
        }
    }
}

pub fn parse_shape(s: &str) -> Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let shape: [usize; 4] = parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected 4 extents B,C,H,W, got {}", v.len()))?;
    if shape.contains(&0) {
        return Err("extents must be positive".into());
    }
    Ok(shape)
}
