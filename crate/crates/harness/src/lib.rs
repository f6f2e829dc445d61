//! Verification harness for `msfuse-core`: invariant suites, gradient
//! checks, benchmarks, parameter/FLOP accounting and heatmap dumps, plus the
//! NTSR1, PGM and JSON report formats they use.

pub mod cli;
pub mod config;
pub mod ntsr;
pub mod pgm;
pub mod report;
pub mod suite;

use anyhow::{bail, Context};
use msfuse_core::{AgmfConfig, DType, FmdsConfig};
use serde_json::json;

use crate::cli::{Cli, Command, ModuleArg};
use crate::config::{hex_sha256, ConfigDocument};
use crate::report::{ReportBuilder, RunReport};
use crate::suite::count::CountTarget;
use crate::suite::dump::DumpModule;

/// Exit status for a completed run.
pub fn exit_code(report: &RunReport) -> i32 {
    if report.passed {
        0
    } else {
        1
    }
}

/// Runs one command. Errors are precondition or IO failures, not failed checks.
pub fn execute(cli: &Cli) -> anyhow::Result<RunReport> {
    let mut doc = match &cli.common.config {
        Some(path) => ConfigDocument::load(path)?,
        None => ConfigDocument::default(),
    };
    if let Some(seed) = cli.common.seed {
        doc.seed = seed;
    }
    let default_dtype = match cli.command {
        Command::Bench { .. } => DType::F32,
        _ => DType::F64,
    };
    let dtype: DType = cli.common.dtype.map(Into::into).unwrap_or(default_dtype);
    let seed = doc.seed;

    let options = match &cli.command {
        Command::Check { inject_fault } => json!({ "inject_fault": inject_fault }),
        Command::Gradcheck { eps, tol } => {
            if dtype != DType::F64 {
                bail!("gradcheck requires --dtype f64: central differences at eps 1e-5 are below f32 resolution");
            }
            if let Some(e) = eps {
                doc.gradcheck.eps = *e;
            }
            if let Some(t) = tol {
                doc.gradcheck.tol = *t;
            }
            if !(doc.gradcheck.eps > 0.0 && doc.gradcheck.tol > 0.0) {
                bail!("eps and tol must be positive");
            }
            json!({})
        }
        Command::Bench { shape, iters } => {
            if let Some(s) = shape {
                doc.bench.shape = *s;
            }
            if let Some(i) = iters {
                doc.bench.iters = *i;
            }
            if doc.bench.iters == 0 {
                bail!("iters must be at least 1");
            }
            json!({})
        }
        Command::Count {
            module,
            variant,
            shape,
            out_channels,
        } => json!({
            "module": format!("{module:?}"),
            "variant": format!("{variant:?}"),
            "shape": shape,
            "out_channels": out_channels,
        }),
        Command::Dump {
            input,
            module,
            variant,
            ..
        } => {
            let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            json!({
                "input_sha256": hex_sha256(&bytes),
                "module": format!("{module:?}"),
                "variant": format!("{variant:?}"),
            })
        }
    };
    let digest = doc.digest(&json!({
        "command": cli.command.name(),
        "dtype": dtype,
        "options": options,
    }));
    let mut report = ReportBuilder::new(cli.command.name(), seed, dtype, digest);

    match &cli.command {
        Command::Check { inject_fault } => {
            let opts = suite::check::CheckOptions {
                inject_fault: *inject_fault,
            };
            suite::check::run(&doc, dtype, opts, &mut report);
        }
        Command::Gradcheck { .. } => suite::gradcheck::run(seed, &doc.gradcheck, &mut report),
        Command::Bench { .. } => suite::bench::run(seed, dtype, &doc.bench, &mut report)?,
        Command::Count {
            module,
            variant,
            shape,
            out_channels,
        } => {
            let c = shape[1];
            let target = match module {
                ModuleArg::Fmds => CountTarget::Fmds(FmdsConfig {
                    in_channels: c,
                    out_channels: out_channels.unwrap_or(c),
                    ..doc.fmds.clone()
                }),
                ModuleArg::Agmf => CountTarget::Agmf(AgmfConfig {
                    channels: c,
                    variant: (*variant).into(),
                    ..doc.agmf.clone()
                }),
            };
            suite::count::run(&target, *shape, &mut report)?;
        }
        Command::Dump {
            input,
            module,
            variant,
            out,
        } => {
            let x = ntsr::read(input).with_context(|| format!("loading {}", input.display()))?;
            let module = match module {
                ModuleArg::Fmds => DumpModule::Fmds,
                ModuleArg::Agmf => DumpModule::Agmf,
            };
            suite::dump::run(&x, module, (*variant).into(), seed, out, &mut report)?;
        }
    }
    Ok(report.finish(cli.common.redact_timings))
}
