//! Feature-map heatmaps for the input and each module stage.

use std::path::Path;

use anyhow::Context;
use msfuse_core::{Agmf, AgmfConfig, Eager, Error, Fmds, FmdsConfig, Real, Tensor, Variant};

use super::task_rng;
use crate::ntsr::AnyTensor;
use crate::pgm::{self, Heatmap};
use crate::report::{CheckResult, ReportBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpModule {
    Fmds,
    Agmf,
}

/// Writes one P5 file per stage into `out` and returns the heatmaps.
pub fn run(
    input: &AnyTensor,
    module: DumpModule,
    variant: Variant,
    seed: u64,
    out: &Path,
    report: &mut ReportBuilder,
) -> anyhow::Result<Vec<Heatmap>> {
    let stages = match input {
        AnyTensor::F32(t) => stages(t, module, variant, seed)?,
        AnyTensor::F64(t) => stages(t, module, variant, seed)?,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut maps = Vec::new();
    for (stage, map) in stages {
        let path = out.join(format!("{stage}.pgm"));
        pgm::write(&path, &map).with_context(|| format!("writing {}", path.display()))?;
        let spans = map.pixels.contains(&0) && map.pixels.contains(&255);
        let constant = map.pixels.iter().all(|&p| p == 128);
        report.check(CheckResult::flag(format!("dump.{stage}.range"), spans || constant));
        report.heatmap(map.clone());
        maps.push(map);
    }
    Ok(maps)
}

fn stages<T: Real>(
    x: &Tensor<T>,
    module: DumpModule,
    variant: Variant,
    seed: u64,
) -> msfuse_core::Result<Vec<(&'static str, Heatmap)>> {
    let [_, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial { height: h, width: w });
    }
    let mut rng = task_rng(seed, "dump");
    let mut out = vec![("input", pgm::heatmap("input", x)?)];
    match module {
        DumpModule::Fmds => {
            let m = Fmds::<T>::init(&FmdsConfig::new(c, c), &mut rng)?;
            out.push(("fmds", pgm::heatmap("fmds", &m.forward(x)?)?));
        }
        DumpModule::Agmf => {
            let m = Agmf::<T>::init(&AgmfConfig::new(c, variant), &mut rng)?;
            if let Some(f) = &m.fmds {
                out.push(("fmds", pgm::heatmap("fmds", &f.forward_in(&mut Eager, "agmf.fmds", x)?)?));
            }
            out.push(("agmf", pgm::heatmap("agmf", &m.forward(x)?)?));
        }
    }
    Ok(out)
}
