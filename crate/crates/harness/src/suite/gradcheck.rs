//! Finite-difference gradient checks for every primitive and module.

use msfuse_core::graph::apply_conv;
use msfuse_core::{
    grad_check, init, Agmf, AgmfConfig, BatchNormSpec, ConvGeometry, Error, Fmds, FmdsConfig,
    GatedUnit, GradCheckOptions, GradReport, Graph, NodeId, Tape, Tensor, TripletAttention, Variant,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{randomize_bn, task_rng, uniform};
use crate::config::GradcheckSettings;
use crate::report::{CheckResult, ReportBuilder};

type Forward = Box<dyn Fn(&mut Tape<f64>) -> msfuse_core::Result<NodeId>>;
type Build = fn(&mut ChaCha8Rng) -> msfuse_core::Result<Forward>;

/// Target name and a builder drawing fresh inputs and parameters.
pub const TARGETS: &[(&str, Build)] = &[
    ("sigmoid", sigmoid),
    ("silu", silu),
    ("add", add),
    ("mul", mul),
    ("mul_channel_broadcast", mul_channel_broadcast),
    ("scale", scale),
    ("reshape", reshape),
    ("permute", permute),
    ("concat", concat),
    ("zpool", zpool),
    ("batch_norm", batch_norm),
    ("conv2d", conv2d),
    ("conv2d_depthwise", conv2d_depthwise),
    ("fmds_forward", fmds_forward),
    ("gated_unit_forward", gated_unit_forward),
    ("triplet_attention_forward", triplet_attention_forward),
    ("agmf_forward.full", agmf_full),
    ("agmf_forward.no-fmds", agmf_no_fmds),
];

pub fn run(seed: u64, settings: &GradcheckSettings, report: &mut ReportBuilder) {
    let opts = GradCheckOptions {
        eps: settings.eps,
        tol: settings.tol,
        tie_margin: settings.tie_margin,
        seed: Some(seed),
    };
    for &(target, build) in TARGETS {
        let name = format!("grad.{target}");
        let start = std::time::Instant::now();
        let mut rng = task_rng(seed, &name);
        let result = check_target(&name, build, &mut rng, &opts, settings.max_resamples);
        report.time(&name, start.elapsed(), None);
        report.check(result);
    }
}

fn check_target(
    name: &str,
    build: Build,
    rng: &mut ChaCha8Rng,
    opts: &GradCheckOptions,
    max_resamples: usize,
) -> CheckResult {
    for attempt in 0..=max_resamples {
        let forward = match build(rng) {
            Ok(f) => f,
            Err(e) => return CheckResult::failed(name, e.to_string()),
        };
        match grad_check(forward, opts) {
            Ok(report) => return summarize(name, &report, attempt),
            Err(Error::TieBoundary { .. }) => continue,
            Err(Error::NonFiniteLoss) => return CheckResult::failed(name, "non-finite loss"),
            Err(e) => return CheckResult::failed(name, e.to_string()),
        }
    }
    CheckResult::failed(name, format!("no tie-free sample in {} draws", max_resamples + 1))
}

fn summarize(name: &str, report: &GradReport, resamples: usize) -> CheckResult {
    let worst = report.worst().map(|p| p.name.as_str()).unwrap_or("-");
    let scalars: usize = report.params.iter().map(|p| p.analytic.len()).sum();
    let mut note = format!("{scalars} scalars, worst {worst}");
    if resamples > 0 {
        note.push_str(&format!(", {resamples} resamples"));
    }
    let mut r = CheckResult::within(name, report.max_rel_err, report.tol).with_note(note);
    r.passed = report.passed;
    r
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -2.0, 2.0)
}

fn sigmoid(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    Ok(Box::new(move |t| {
        let v = t.leaf("x", &x);
        Ok(t.sigmoid(&v))
    }))
}

fn silu(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    Ok(Box::new(move |t| {
        let v = t.leaf("x", &x);
        Ok(t.silu(&v))
    }))
}

fn add(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let (x, y) = (input(rng, &[2, 3, 4, 5]), input(rng, &[2, 3, 4, 5]));
    Ok(Box::new(move |t| {
        let a = t.leaf("a", &x);
        let b = t.leaf("b", &y);
        let s = t.add(&a, &b)?;
        Ok(t.sigmoid(&s))
    }))
}

fn mul(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let (x, y) = (input(rng, &[2, 3, 4, 5]), input(rng, &[2, 3, 4, 5]));
    Ok(Box::new(move |t| {
        let a = t.leaf("a", &x);
        let b = t.leaf("b", &y);
        t.mul(&a, &b)
    }))
}

fn mul_channel_broadcast(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let (x, g) = (input(rng, &[2, 3, 4, 5]), input(rng, &[2, 1, 4, 5]));
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let b = t.leaf("gate", &g);
        let y = t.mul_channel_broadcast(&a, &b)?;
        Ok(t.sigmoid(&y))
    }))
}

fn scale(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    let k = rng.gen_range(-2.0..2.0);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let y = t.scale(&a, k);
        Ok(t.sigmoid(&y))
    }))
}

/// Weights the output by a fixed non-uniform map so index errors show up.
fn weighted(t: &mut Tape<f64>, y: NodeId) -> msfuse_core::Result<NodeId> {
    let shape = t.node_value(y).shape().to_vec();
    let w = Tensor::from_fn(&shape, |i| (i as f64 * 0.37).cos())?;
    let wv = t.leaf("weights", &w);
    let s = t.sigmoid(&y);
    t.mul(&s, &wv)
}

fn reshape(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let y = t.reshape(&a, &[6, 2, 10])?;
        weighted(t, y)
    }))
}

fn permute(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let y = t.permute(&a, &[3, 1, 0, 2])?;
        weighted(t, y)
    }))
}

fn concat(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let (x, y) = (input(rng, &[2, 3, 4, 5]), input(rng, &[2, 1, 4, 5]));
    Ok(Box::new(move |t| {
        let a = t.leaf("a", &x);
        let b = t.leaf("b", &y);
        let c = t.concat_channels(&[a, b])?;
        weighted(t, c)
    }))
}

fn zpool(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 5, 3, 4]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let z = t.zpool(&a)?;
        weighted(t, z)
    }))
}

fn batch_norm(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 4, 5]);
    let mut bn = BatchNormSpec::identity(3);
    randomize_bn(&mut bn, rng);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let g = t.leaf("gamma", &bn.gamma);
        let b = t.leaf("beta", &bn.beta);
        let y = t.batch_norm(&a, &g, &b, &bn.mean, &bn.var, bn.epsilon)?;
        Ok(t.sigmoid(&y))
    }))
}

fn conv2d(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[2, 3, 6, 5]);
    let w = uniform(rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = uniform(rng, &[4], -0.5, 0.5);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        let wv = t.leaf("weight", &w);
        let bv = t.leaf("bias", &b);
        let y = t.conv2d(&a, &wv, Some(&bv), ConvGeometry::new((2, 1), (1, 1), 1))?;
        Ok(t.sigmoid(&y))
    }))
}

fn conv2d_depthwise(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let x = input(rng, &[1, 4, 6, 6]);
    let spec = init::depthwise::<f64, _>(rng, 4, 3, false)?;
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        apply_conv(t, "dw", &spec, &a)
    }))
}

fn fmds_forward(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let m = Fmds::<f64>::init(&FmdsConfig::new(4, 4), rng)?;
    let x = input(rng, &[1, 4, 4, 4]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        m.forward_in(t, "fmds", &a)
    }))
}

fn gated_unit_forward(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let mut gu = GatedUnit::<f64>::init(rng, 4)?;
    randomize_bn(&mut gu.bn, rng);
    let x = input(rng, &[1, 4, 6, 6]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        gu.forward_in(t, "gu", &a)
    }))
}

fn triplet_attention_forward(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    let mut ta = TripletAttention::<f64>::init(rng)?;
    for g in &mut ta.gates {
        randomize_bn(&mut g.bn, rng);
    }
    let x = input(rng, &[1, 4, 6, 6]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        ta.forward_in(t, "ta", &a)
    }))
}

fn agmf(rng: &mut ChaCha8Rng, variant: Variant) -> msfuse_core::Result<Forward> {
    let mut m = Agmf::<f64>::init(&AgmfConfig::new(4, variant), rng)?;
    for bn in m.batch_norms_mut() {
        randomize_bn(bn, rng);
    }
    let x = input(rng, &[1, 4, 8, 8]);
    Ok(Box::new(move |t| {
        let a = t.leaf("x", &x);
        m.forward_in(t, "agmf", &a)
    }))
}

fn agmf_full(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    agmf(rng, Variant::Full)
}

fn agmf_no_fmds(rng: &mut ChaCha8Rng) -> msfuse_core::Result<Forward> {
    agmf(rng, Variant::NoFmds)
}
