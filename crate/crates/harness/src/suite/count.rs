//! Parameter and FLOP accounting.

use msfuse_core::agmf::agmf_param_count;
use msfuse_core::fmds::fmds_param_count;
use msfuse_core::{Agmf, AgmfConfig, Fmds, FmdsConfig, Result};
use serde::Serialize;

use crate::report::{CheckResult, ReportBuilder};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CountTarget {
    Fmds(FmdsConfig),
    Agmf(AgmfConfig),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CountSummary {
    /// Closed-form parameter count.
    pub params: usize,
    /// Parameter scalars enumerated from an instantiated module.
    pub enumerated: usize,
    pub stages: Vec<(String, u64)>,
    pub total_flops: u64,
}

pub fn count(target: &CountTarget, shape: [usize; 4]) -> Result<CountSummary> {
    let (params, enumerated, stages) = match target {
        CountTarget::Fmds(cfg) => {
            let m = Fmds::<f64>::zeros(cfg)?;
            (fmds_param_count(cfg), m.num_scalars(), m.flops(&shape)?)
        }
        CountTarget::Agmf(cfg) => {
            let m = Agmf::<f64>::zeros(cfg)?;
            (agmf_param_count(cfg)?, m.num_scalars(), m.flops(&shape)?)
        }
    };
    let total_flops = stages.iter().map(|(_, f)| f).sum();
    Ok(CountSummary {
        params,
        enumerated,
        stages,
        total_flops,
    })
}

pub fn run(target: &CountTarget, shape: [usize; 4], report: &mut ReportBuilder) -> Result<()> {
    let s = count(target, shape)?;
    report.measure("params", s.params as f64, "scalars");
    for (name, f) in &s.stages {
        report.measure(format!("flops.{name}"), *f as f64, "FLOP");
    }
    report.measure("flops.total", s.total_flops as f64, "FLOP");
    report.check(CheckResult::exact(
        "count.params_enumeration",
        s.params.abs_diff(s.enumerated),
    ));
    let summed: u64 = s.stages.iter().map(|(_, f)| f).sum();
    report.check(CheckResult::exact(
        "count.flop_total",
        summed.abs_diff(s.total_flops) as usize,
    ));
    Ok(())
}
