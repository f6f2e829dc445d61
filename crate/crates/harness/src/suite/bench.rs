//! Wall-clock micro-benchmarks with analytic GFLOP/s.

use std::time::{Duration, Instant};

use msfuse_core::{
    conv2d, conv2d_naive, init, Agmf, AgmfConfig, ConvGeometry, DType, Fmds, FmdsConfig, GatedUnit,
    Real, Result, Tensor, TripletAttention, Variant,
};

use super::{task_rng, uniform};
use crate::config::BenchSettings;
use crate::report::{CheckResult, ReportBuilder};

/// Iterations discarded as warm-up: the first 10%.
pub fn warmup(iters: usize) -> usize {
    iters / 10
}

/// Mean time of the post-warm-up iterations.
pub fn time_iters(iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<Duration> {
    let skip = warmup(iters);
    let mut total = Duration::ZERO;
    for i in 0..iters {
        let start = Instant::now();
        f()?;
        if i >= skip {
            total += start.elapsed();
        }
    }
    Ok(total / (iters - skip) as u32)
}

pub fn run(seed: u64, dtype: DType, settings: &BenchSettings, report: &mut ReportBuilder) -> Result<()> {
    match dtype {
        DType::F32 => run_typed::<f32>(seed, settings, report),
        DType::F64 => run_typed::<f64>(seed, settings, report),
    }
}

fn row(report: &mut ReportBuilder, name: &str, flops: u64, mean: Duration) {
    let secs = mean.as_secs_f64();
    let gflops = if secs > 0.0 { flops as f64 / secs / 1e9 } else { 0.0 };
    report.measure(format!("flops.{name}"), flops as f64, "FLOP");
    report.time(name, mean, Some(gflops));
}

fn run_typed<T: Real>(seed: u64, s: &BenchSettings, report: &mut ReportBuilder) -> Result<()> {
    let iters = s.iters.max(1);
    let mut rng = task_rng(seed, "bench");
    report.measure("iters", iters as f64, "");
    report.measure("warmup", warmup(iters) as f64, "");

    // dense 3×3 against the reference loops
    let cs = s.conv_shape;
    let xc: Tensor<T> = uniform(&mut rng, &cs, -1.0, 1.0);
    let dense = init::conv::<T, _>(&mut rng, ConvGeometry::same(3, 1), cs[1], cs[1], (3, 3), true)?;
    let flops = msfuse_core::flop_count(&dense, &cs)?;
    let naive_iters = iters.min(5);
    row(report, "conv2d_naive", flops, time_iters(naive_iters, || conv2d_naive(&xc, &dense).map(drop))?);
    row(report, "conv2d", flops, time_iters(iters, || conv2d(&xc, &dense).map(drop))?);
    let diff = conv2d(&xc, &dense)?.max_abs_diff(&conv2d_naive(&xc, &dense)?)?;
    report.check(CheckResult::within(
        "bench.conv2d_matches_naive",
        diff.as_f64(),
        super::check::oracle_tol(T::DTYPE),
    ));

    let shape = s.shape;
    let c = shape[1];
    let x: Tensor<T> = uniform(&mut rng, &shape, -1.0, 1.0);
    let dw = init::depthwise::<T, _>(&mut rng, c, 3, false)?;
    row(report, "conv2d_depthwise3x3", msfuse_core::flop_count(&dw, &shape)?, time_iters(iters, || {
        conv2d(&x, &dw).map(drop)
    })?);
    let pw = init::pointwise::<T, _>(&mut rng, c, c, false)?;
    row(report, "conv2d_pointwise", msfuse_core::flop_count(&pw, &shape)?, time_iters(iters, || {
        conv2d(&x, &pw).map(drop)
    })?);

    let fmds = Fmds::<T>::init(&FmdsConfig::new(c, c), &mut rng)?;
    let flops = fmds.flops(&shape)?.iter().map(|(_, f)| f).sum();
    row(report, "fmds_forward", flops, time_iters(iters, || fmds.forward(&x).map(drop))?);

    let gu = GatedUnit::<T>::init(&mut rng, c)?;
    let flops = msfuse_core::flop_count(&gu.conv, &shape)?;
    row(report, "gated_unit_forward", flops, time_iters(iters, || gu.forward(&x).map(drop))?);

    let ta = TripletAttention::<T>::init(&mut rng)?;
    let [b, _, h, w] = shape;
    let flops = [[b, 2, h, w], [b, 2, c, w], [b, 2, h, c]]
        .iter()
        .zip(&ta.gates)
        .map(|(s, g)| msfuse_core::flop_count(&g.conv, s))
        .sum::<Result<u64>>()?;
    row(report, "triplet_attention_forward", flops, time_iters(iters, || ta.forward(&x).map(drop))?);

    for (name, variant) in [("agmf_forward.full", Variant::Full), ("agmf_forward.no-fmds", Variant::NoFmds)] {
        let m = Agmf::<T>::init(&AgmfConfig::new(c, variant), &mut rng)?;
        let flops = m.flops(&shape)?.iter().map(|(_, f)| f).sum();
        row(report, name, flops, time_iters(iters, || m.forward(&x).map(drop))?);
    }
    Ok(())
}
