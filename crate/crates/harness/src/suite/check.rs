//! Invariant suites for every module.

use msfuse_core::agmf::agmf_param_count;
use msfuse_core::fmds::{concat_original, fmds_param_count, partition, reassemble};
use msfuse_core::tensor::inverse_permutation;
use msfuse_core::{
    batch_norm, concat_channels, conv2d, conv2d_naive, flop_count, sigmoid, zpool, Agmf, AgmfConfig,
    AttentionBranch, BatchNormSpec, ConvGeometry, ConvSpec, DType, Eager, Error, Fmds, FmdsConfig,
    GatedUnit, Real, Result, Tensor, TripletAttention, Variant,
};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{oracle, randomize_bn, run_timed, task_rng, uniform};
use crate::config::ConfigDocument;
use crate::report::{CheckResult, ReportBuilder};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Perturb one weight of the optimized convolution in the oracle check.
    pub inject_fault: bool,
}

/// Oracle tolerance per dtype.
pub fn oracle_tol(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1e-6,
        DType::F32 => 1e-3,
    }
}

pub fn run(doc: &ConfigDocument, dtype: DType, opts: CheckOptions, report: &mut ReportBuilder) {
    match dtype {
        DType::F64 => run_typed::<f64>(doc, opts, report),
        DType::F32 => run_typed::<f32>(doc, opts, report),
    }
}

type CheckFn<T> = fn(&Ctx<T>, &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult>;

struct Ctx<'a, T> {
    doc: &'a ConfigDocument,
    opts: CheckOptions,
    tol: f64,
    _t: core::marker::PhantomData<T>,
}

fn run_typed<T: Real>(doc: &ConfigDocument, opts: CheckOptions, report: &mut ReportBuilder) {
    let ctx = Ctx::<T> {
        doc,
        opts,
        tol: oracle_tol(T::DTYPE),
        _t: core::marker::PhantomData,
    };
    let checks: &[(&str, CheckFn<T>)] = &[
        ("tensor.permute_round_trip", permute_round_trip),
        ("tensor.reshape_contract", reshape_contract),
        ("tensor.concat_slabs", concat_slabs),
        ("conv.oracle_equivalence", conv_oracle),
        ("conv.linearity", conv_linearity),
        ("conv.flop_linearity", flop_linearity),
        ("conv.flop_examples", flop_examples),
        ("activation.sigmoid_bounds_monotone", sigmoid_bounds),
        ("activation.zpool_reduction", zpool_reduction),
        ("norm.closed_form", norm_closed_form),
        ("fmds.round_trip_grid", round_trip_grid),
        ("fmds.partition_index_map", partition_index_map),
        ("fmds.batch_equivariance", batch_equivariance),
        ("fmds.branch_sum_oracle", branch_sum_oracle),
        ("fmds.pipeline_oracle", fmds_pipeline_oracle),
        ("fmds.shape_contract", fmds_shape_contract),
        ("fmds.odd_extent_error", fmds_odd_extent),
        ("fmds.zero_weights", fmds_zero_weights),
        ("fmds.param_count", fmds_param_counts),
        ("gate.gated_unit_bounds", gated_unit_bounds),
        ("gate.triplet_bounds", triplet_bounds),
        ("gate.shape_preservation", gate_shapes),
        ("gate.rotation_consistency", rotation_consistency),
        ("gate.gated_unit_oracle", gated_unit_oracle),
        ("gate.triplet_oracle", triplet_oracle),
        ("agmf.shape_preservation", agmf_shapes),
        ("agmf.ablation_consistency", ablation_consistency),
        ("agmf.determinism", agmf_determinism),
        ("agmf.branch_independence", branch_independence),
        ("agmf.zero_parameters", agmf_zero_parameters),
        ("agmf.param_count", agmf_param_counts),
    ];
    for &(name, f) in checks {
        let mut rng = task_rng(doc.seed, name);
        run_timed(report, name, || f(&ctx, &mut rng).map(|mut r| {
            r.name = name.to_string();
            r
        }));
    }
}

fn unnamed() -> String {
    String::new()
}

fn count_mismatch<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> usize {
    if a.shape() != b.shape() {
        return a.len().max(b.len()).max(1);
    }
    a.data().iter().zip(b.data()).filter(|(x, y)| x.bits() != y.bits()).count()
}

fn max_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.as_f64())
}

fn permute_round_trip<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..100 {
        let rank = rng.gen_range(1..=6);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.shuffle(rng);
        let x: Tensor<T> = uniform(rng, &shape, -1.0, 1.0);
        let back = x.permute(&perm)?.permute(&inverse_permutation(&perm))?;
        bad += count_mismatch(&x, &back);
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn reshape_contract<T: Real>(_: &Ctx<T>, _: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let x = Tensor::<T>::from_fn(&[2, 3, 4, 4], |i| T::real(i as f64))?;
    let inferred = x.reshape(&[-1, 3, 4, 4])?;
    let flat = x.reshape(&[4, 1, 6, 4])?;
    let bad_count = Tensor::<T>::zeros(&[1, 2, 2, 2])?.reshape(&[1, 3, 2, 2]).is_err();
    let ok = inferred.shape() == [2, 3, 4, 4] && flat.data() == x.data() && bad_count;
    Ok(CheckResult::flag(unnamed(), ok))
}

fn concat_slabs<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let parts: Vec<Tensor<T>> = (0..3).map(|_| uniform(rng, &[2, 4, 3, 5], -1.0, 1.0)).collect();
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    let cat = concat_channels(&refs)?;
    let mut bad = count_mismatch(&cat, &oracle::concat(&refs));
    let single = concat_channels(&[&parts[0]])?;
    bad += count_mismatch(&single, &parts[0]);
    Ok(CheckResult::exact(unnamed(), bad))
}

/// Random input and spec over `K ∈ {1,3,5,7}`, stride 1 or 2, groups `1` or `C`.
pub fn random_conv_case<T: Real>(rng: &mut impl Rng) -> (Tensor<T>, ConvSpec<T>) {
    let k: usize = [1, 3, 5, 7][rng.gen_range(0..4)];
    let s = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let p = (rng.gen_range(0..=k / 2), rng.gen_range(0..=k / 2));
    let c = rng.gen_range(1..=4);
    let depthwise = rng.gen_bool(0.5);
    let (groups, out, cg) = if depthwise {
        (c, c * rng.gen_range(1..=2), 1)
    } else {
        (1, rng.gen_range(1..=4), c)
    };
    let b = rng.gen_range(1..=2);
    let h = rng.gen_range(k.saturating_sub(2 * p.0).max(1)..k + 8);
    let w = rng.gen_range(k.saturating_sub(2 * p.1).max(1)..k + 8);
    let x = uniform(rng, &[b, c, h, w], -1.0, 1.0);
    let weight = uniform(rng, &[out, cg, k, k], -1.0, 1.0);
    let bias = rng.gen_bool(0.5).then(|| uniform(rng, &[out], -1.0, 1.0));
    let spec = ConvSpec::new(ConvGeometry::new(s, p, groups), weight, bias).expect("valid spec");
    (x, spec)
}

pub const CONV_ORACLE_CASES: usize = 250;

fn conv_oracle<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for i in 0..CONV_ORACLE_CASES {
        let (x, spec) = random_conv_case::<T>(rng);
        let mut fast = spec.clone();
        if ctx.opts.inject_fault && i == 0 {
            let w = fast.weight.data_mut();
            w[0] = w[0] + T::real(0.5);
        }
        worst = worst.max(max_diff(&conv2d(&x, &fast)?, &conv2d_naive(&x, &spec)?)?);
    }
    let r = CheckResult::within(unnamed(), worst, ctx.tol);
    Ok(if ctx.opts.inject_fault {
        r.with_note("fault injected")
    } else {
        r
    })
}

fn conv_linearity<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (x, mut spec) = random_conv_case::<T>(rng);
        spec.bias = None;
        let y = uniform(rng, x.shape(), -1.0, 1.0);
        let (a, b) = (T::real(rng.gen_range(-2.0..2.0)), T::real(rng.gen_range(-2.0..2.0)));
        let mix = x.zip_map(&y, "mix", |p, q| a * p + b * q)?;
        let lhs = conv2d(&mix, &spec)?;
        let rhs = conv2d(&x, &spec)?.zip_map(&conv2d(&y, &spec)?, "mix", |p, q| a * p + b * q)?;
        worst = worst.max(max_diff(&lhs, &rhs)?);
    }
    Ok(CheckResult::within(unnamed(), worst, ctx.tol))
}

fn flop_linearity<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..100 {
        let (x, spec) = random_conv_case::<T>(rng);
        let mut shape = x.shape().to_vec();
        let base = flop_count(&spec, &shape)?;
        shape[0] *= 3;
        bad += usize::from(flop_count(&spec, &shape)? != 3 * base);
        let [o, cg, kh, kw] = spec.weight.dims4()?;
        let doubled = ConvSpec::<T>::zeros(spec.geometry, 2 * o, cg, (kh, kw), false)?;
        bad += usize::from(flop_count(&doubled, x.shape())? != 2 * base);
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn flop_examples<T: Real>(_: &Ctx<T>, _: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let pw = ConvSpec::<T>::zeros(ConvGeometry::same(1, 1), 32, 64, (1, 1), false)?;
    let dw = ConvSpec::<T>::zeros(ConvGeometry::new((1, 1), (0, 0), 1), 1, 1, (3, 3), false)?;
    let a = flop_count(&pw, &[1, 64, 8, 8])?;
    let b = flop_count(&dw, &[1, 1, 3, 3])?;
    let ok = a == 262_144 && b == 18;
    Ok(CheckResult::flag(unnamed(), ok).with_note(format!("{a} and {b}")))
}

fn sigmoid_bounds<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut v: Vec<f64> = (0..2000).map(|_| rng.gen_range(-60.0..60.0)).collect();
    v.extend([-1e6, -745.0, -100.0, 0.0, 100.0, 745.0, 1e6]);
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let t = Tensor::<T>::from_vec(&[v.len()], v.into_iter().map(T::real).collect())?;
    let y = sigmoid(&t);
    let out_of_range = y.data().iter().filter(|&&s| !(s > T::zero() && s < T::one())).count();
    let non_monotone = y.data().windows(2).filter(|w| w[0] > w[1]).count();
    Ok(CheckResult::exact(unnamed(), out_of_range + non_monotone))
}

fn zpool_reduction<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..20 {
        let c = rng.gen_range(1..=8);
        let x: Tensor<T> = uniform(rng, &[2, c, 5, 6], -3.0, 3.0);
        let z = zpool(&x)?;
        bad += count_mismatch(&z, &oracle::zpool(&x));
        let plane = 30;
        for b in 0..2 {
            for p in 0..plane {
                bad += usize::from(z.data()[2 * b * plane + p] < z.data()[(2 * b + 1) * plane + p]);
            }
        }
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn norm_closed_form<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let spec = BatchNormSpec {
        gamma: Tensor::full(&[1], T::real(2.0))?,
        beta: Tensor::full(&[1], T::one())?,
        mean: vec![T::real(3.0)],
        var: vec![T::real(4.0)],
        epsilon: T::zero(),
    };
    let five = batch_norm(&Tensor::full(&[1, 1, 1, 1], T::real(5.0))?, &spec)?;
    let mut err = (five.data()[0].as_f64() - 3.0).abs();
    let mut id = BatchNormSpec::<T>::identity(3);
    id.epsilon = T::real(1e-12);
    let x: Tensor<T> = uniform(rng, &[2, 3, 4, 4], -2.0, 2.0);
    err = err.max(max_diff(&batch_norm(&x, &id)?, &x)?);
    Ok(CheckResult::within(unnamed(), err, ctx.tol))
}

fn round_trip_grid<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let shapes = ctx.doc.grid.shapes();
    let mut bad = 0;
    for s in &shapes {
        let x: Tensor<T> = uniform(rng, s, -1e3, 1e3);
        bad += count_mismatch(&reassemble(&partition(&x)?, s[0])?, &x);
    }
    Ok(CheckResult::exact(unnamed(), bad).with_note(format!("{} shapes", shapes.len())))
}

fn partition_index_map<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    let x = Tensor::<T>::from_fn(&[1, 1, 4, 4], |i| T::real(i as f64))?;
    let blocks = partition(&x)?;
    let expect = [0., 1., 4., 5., 2., 3., 6., 7., 8., 9., 12., 13., 10., 11., 14., 15.];
    bad += blocks.data().iter().zip(expect).filter(|(a, b)| a.as_f64() != *b).count();
    for s in [[1, 3, 6, 8], [2, 2, 2, 2], [3, 1, 10, 4]] {
        let x: Tensor<T> = uniform(rng, &s, -1.0, 1.0);
        bad += count_mismatch(&partition(&x)?, &oracle::partition(&x));
        let b: Tensor<T> = uniform(rng, &[4 * s[0], s[1], s[2] / 2, s[3] / 2], -1.0, 1.0);
        bad += count_mismatch(&reassemble(&b, s[0])?, &oracle::reassemble(&b));
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn batch_equivariance<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..20 {
        let b = rng.gen_range(2..5);
        let s = [b, rng.gen_range(1..4), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4)];
        let x: Tensor<T> = uniform(rng, &s, -1.0, 1.0);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(rng);
        let img = x.len() / b;
        let mut data = Vec::with_capacity(x.len());
        for &src in &perm {
            data.extend_from_slice(&x.data()[src * img..(src + 1) * img]);
        }
        let xp = Tensor::from_vec(&s, data)?;
        let (p, pp) = (partition(&x)?, partition(&xp)?);
        let blk = img / 4;
        for (dst, &src) in perm.iter().enumerate() {
            let a = &pp.data()[4 * dst * blk..4 * (dst + 1) * blk];
            let e = &p.data()[4 * src * blk..4 * (src + 1) * blk];
            bad += a.iter().zip(e).filter(|(u, v)| u.bits() != v.bits()).count();
        }
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn random_fmds<T: Real>(rng: &mut impl Rng, cfg: &FmdsConfig) -> Result<Fmds<T>> {
    let mut m = Fmds::init(cfg, rng)?;
    for (name, t) in m.params_mut() {
        if name.ends_with("bias") {
            *t = uniform(rng, t.shape(), -0.5, 0.5);
        }
    }
    Ok(m)
}

fn branch_sum_oracle<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let m = random_fmds::<T>(rng, &FmdsConfig::new(4, 4))?;
    let blocks: Tensor<T> = uniform(rng, &[4, 4, 4, 4], -1.0, 1.0);
    let got = m.branch_sum_in(&mut Eager, "fmds", &blocks)?;
    Ok(CheckResult::within(unnamed(), max_diff(&got, &oracle::branch_sum(&m, &blocks)?)?, ctx.tol))
}

fn fmds_pipeline_oracle<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let cfg = FmdsConfig {
        bias: true,
        ..ctx.doc.fmds.clone()
    };
    let m = random_fmds::<T>(rng, &cfg)?;
    let x: Tensor<T> = uniform(rng, &[1, cfg.in_channels, 4, 4], -1.0, 1.0);
    let stages = m.stages_in(&mut Eager, "fmds", &x)?;
    let blocks = oracle::partition(&x);
    let sum = oracle::branch_sum(&m, &blocks)?;
    let re = oracle::reassemble(&sum);
    let cat = oracle::concat(&[&x, &re]);
    let mut err = 0.0f64;
    for (got, want) in [
        (&stages.blocks, &blocks),
        (&stages.branch_sum, &sum),
        (&stages.reassembled, &re),
        (&stages.concat, &cat),
    ] {
        err = err.max(max_diff(got, want)?);
    }
    err = err.max(max_diff(&stages.output, &oracle::fmds(&m, &x)?)?);
    let dup = concat_original(&mut Eager, &x, &x)?;
    if count_mismatch(&dup, &oracle::concat(&[&x, &x])) != 0 {
        err = f64::INFINITY;
    }
    Ok(CheckResult::within(unnamed(), err, ctx.tol))
}

fn fmds_shape_contract<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    let mut cases = 0;
    for &c in &ctx.doc.grid.channels {
        for out in [c, 2 * c + 1] {
            let m = Fmds::<T>::init(&FmdsConfig::new(c, out), rng)?;
            for s in ctx.doc.grid.shapes().into_iter().filter(|s| s[1] == c) {
                let x: Tensor<T> = uniform(rng, &s, -1.0, 1.0);
                bad += usize::from(m.forward(&x)?.shape() != [s[0], out, s[2], s[3]]);
                cases += 1;
            }
        }
    }
    Ok(CheckResult::exact(unnamed(), bad).with_note(format!("{cases} cases")))
}

fn fmds_odd_extent<T: Real>(_: &Ctx<T>, _: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let m = Fmds::<T>::zeros(&FmdsConfig::new(2, 2))?;
    let mut bad = 0;
    for (h, w) in [(7, 4), (4, 5), (3, 3), (1, 2)] {
        let x = Tensor::<T>::zeros(&[1, 2, h, w])?;
        bad += usize::from(!matches!(m.forward(&x), Err(Error::OddSpatial { .. })));
        bad += usize::from(!matches!(partition(&x), Err(Error::OddSpatial { .. })));
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn fmds_zero_weights<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut nonzero = 0;
    for bias in [false, true] {
        let cfg = FmdsConfig {
            bias,
            ..ctx.doc.fmds.clone()
        };
        let m = Fmds::<T>::zeros(&cfg)?;
        let x: Tensor<T> = uniform(rng, &[2, cfg.in_channels, 6, 8], -5.0, 5.0);
        nonzero += m.forward(&x)?.data().iter().filter(|v| v.bits() != T::zero().bits()).count();
    }
    Ok(CheckResult::exact(unnamed(), nonzero))
}

fn fmds_param_counts<T: Real>(_: &Ctx<T>, _: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    bad += usize::from(fmds_param_count(&FmdsConfig::new(4, 4)) != 484);
    bad += usize::from(fmds_param_count(&FmdsConfig::new(1, 1)) != 106);
    for c in [1, 2, 3, 4, 8] {
        for bias in [false, true] {
            let cfg = FmdsConfig {
                bias,
                ..FmdsConfig::new(c, c + 1)
            };
            bad += usize::from(Fmds::<T>::zeros(&cfg)?.num_scalars() != fmds_param_count(&cfg));
        }
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn random_gu<T: Real>(rng: &mut impl Rng, c: usize, logit_scale: f64) -> Result<GatedUnit<T>> {
    let mut gu = GatedUnit::init(rng, c)?;
    gu.conv.weight = gu.conv.weight.scale(T::real(logit_scale));
    gu.conv.bias = Some(uniform(rng, &[c], -0.5, 0.5));
    randomize_bn(&mut gu.bn, rng);
    Ok(gu)
}

fn random_ta<T: Real>(rng: &mut impl Rng, logit_scale: f64) -> Result<TripletAttention<T>> {
    let mut ta = TripletAttention::init(rng)?;
    for g in &mut ta.gates {
        g.conv.weight = g.conv.weight.scale(T::real(logit_scale));
        randomize_bn(&mut g.bn, rng);
    }
    Ok(ta)
}

pub const GATE_DRAWS: usize = 1000;

fn random_gate_input<T: Real>(rng: &mut impl Rng) -> (Tensor<T>, f64) {
    let s = [rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..7), rng.gen_range(1..7)];
    let scale = [1e-3, 1.0, 30.0][rng.gen_range(0..3)];
    (uniform(rng, &s, -scale, scale), scale)
}

fn bounded<T: Real>(out: &Tensor<T>, x: &Tensor<T>) -> usize {
    out.data().iter().zip(x.data()).filter(|(o, i)| o.abs() > i.abs()).count()
}

fn in_open_unit<T: Real>(g: &Tensor<T>) -> usize {
    g.data().iter().filter(|&&v| !(v > T::zero() && v < T::one())).count()
}

fn gated_unit_bounds<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..GATE_DRAWS {
        let (x, scale) = random_gate_input::<T>(rng);
        let gu = random_gu::<T>(rng, x.shape()[1], scale)?;
        bad += in_open_unit(&gu.gate_in(&mut Eager, "gu", &x)?);
        bad += bounded(&gu.forward(&x)?, &x);
    }
    Ok(CheckResult::exact(unnamed(), bad).with_note(format!("{GATE_DRAWS} draws")))
}

fn triplet_bounds<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..GATE_DRAWS {
        let (x, scale) = random_gate_input::<T>(rng);
        let ta = random_ta::<T>(rng, scale)?;
        for g in ta.gates_in(&mut Eager, "ta", &x)? {
            bad += in_open_unit(&g);
        }
        for branch in AttentionBranch::ALL {
            bad += bounded(&ta.branch_in(&mut Eager, "ta", &x, branch)?, &x);
        }
        bad += bounded(&ta.forward(&x)?, &x);
    }
    Ok(CheckResult::exact(unnamed(), bad).with_note(format!("{GATE_DRAWS} draws")))
}

fn gate_shapes<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    let ta = random_ta::<T>(rng, 1.0)?;
    let mut shapes = ctx.doc.grid.shapes();
    shapes.extend([[1, 3, 1, 1], [2, 1, 1, 5], [1, 2, 3, 1]]);
    for s in shapes {
        let x: Tensor<T> = uniform(rng, &s, -1.0, 1.0);
        let gu = random_gu::<T>(rng, s[1], 1.0)?;
        bad += usize::from(gu.forward(&x)?.shape() != s);
        bad += usize::from(ta.forward(&x)?.shape() != s);
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn rotation_consistency<T: Real>(_: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let ta = random_ta::<T>(rng, 1.0)?;
    let x: Tensor<T> = uniform(rng, &[2, 3, 5, 4], -2.0, 2.0);
    let mut bad = 0;
    for (i, branch) in AttentionBranch::ALL.into_iter().enumerate() {
        let axes = branch.rotation().unwrap_or([0, 1, 2, 3]);
        let plain = TripletAttention {
            gates: [ta.gates[i].clone(), ta.gates[i].clone(), ta.gates[i].clone()],
        };
        let via_hw = plain
            .branch_in(&mut Eager, "ta", &x.permute(&axes)?, AttentionBranch::HeightWidth)?
            .permute(&axes)?;
        bad += count_mismatch(&via_hw, &ta.branch_in(&mut Eager, "ta", &x, branch)?);
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn gated_unit_oracle<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut err = 0.0f64;
    for _ in 0..10 {
        let gu = random_gu::<T>(rng, 4, 1.0)?;
        let y: Tensor<T> = uniform(rng, &[1, 4, 5, 5], -2.0, 2.0);
        err = err.max(max_diff(&gu.forward(&y)?, &oracle::gated_unit(&gu, &y)?)?);
    }
    let zero = GatedUnit::<T>::zeros(3)?;
    let y: Tensor<T> = uniform(rng, &[2, 3, 4, 4], -2.0, 2.0);
    err = err.max(max_diff(&zero.forward(&y)?, &y.scale(T::real(0.5)))?);
    Ok(CheckResult::within(unnamed(), err, ctx.tol))
}

fn triplet_oracle<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut err = 0.0f64;
    for _ in 0..10 {
        let ta = random_ta::<T>(rng, 1.0)?;
        let x: Tensor<T> = uniform(rng, &[1, 4, 6, 6], -2.0, 2.0);
        err = err.max(max_diff(&ta.forward(&x)?, &oracle::triplet(&ta, &x)?)?);
    }
    let zero = TripletAttention::<T>::zeros()?;
    let x: Tensor<T> = uniform(rng, &[2, 3, 4, 4], -2.0, 2.0);
    err = err.max(max_diff(&zero.forward(&x)?, &x.scale(T::real(0.5)))?);
    Ok(CheckResult::within(unnamed(), err, ctx.tol))
}

fn random_agmf<T: Real>(rng: &mut impl Rng, cfg: &AgmfConfig) -> Result<Agmf<T>> {
    let mut m = Agmf::init(cfg, rng)?;
    for bn in m.batch_norms_mut() {
        randomize_bn(bn, rng);
    }
    Ok(m)
}

fn variants(base: &AgmfConfig) -> [AgmfConfig; 2] {
    [
        AgmfConfig {
            variant: Variant::Full,
            ..base.clone()
        },
        AgmfConfig {
            variant: Variant::NoFmds,
            ..base.clone()
        },
    ]
}

fn agmf_shapes<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    let mut cases = 0;
    for &c in &ctx.doc.grid.channels {
        let base = AgmfConfig {
            channels: c,
            ..ctx.doc.agmf.clone()
        };
        let models = variants(&base).map(|cfg| random_agmf::<T>(rng, &cfg));
        let [full, no] = models;
        let (full, no) = (full?, no?);
        for s in ctx.doc.grid.shapes().into_iter().filter(|s| s[1] == c) {
            let x: Tensor<T> = uniform(rng, &s, -1.0, 1.0);
            bad += usize::from(full.forward(&x)?.shape() != s);
            bad += usize::from(no.forward(&x)?.shape() != s);
            cases += 2;
        }
        let odd = Tensor::<T>::zeros(&[1, c, 3, 4])?;
        bad += usize::from(!matches!(full.forward(&odd), Err(Error::OddSpatial { .. })));
    }
    Ok(CheckResult::exact(unnamed(), bad).with_note(format!("{cases} cases")))
}

fn ablation_consistency<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for c in [1, 2, 4, 8] {
        let base = AgmfConfig {
            channels: c,
            ..ctx.doc.agmf.clone()
        };
        let [full_cfg, no_cfg] = variants(&base);
        let full = random_agmf::<T>(rng, &full_cfg)?;
        let no = random_agmf::<T>(rng, &no_cfg)?;
        let fmds = fmds_param_count(&full_cfg.fmds_config());
        bad += usize::from(no.num_scalars() + fmds + c * c != full.num_scalars());
        let x: Tensor<T> = uniform(rng, &[2, c, 4, 6], -1.0, 1.0);
        bad += usize::from(full.forward(&x)?.shape() != no.forward(&x)?.shape());
    }
    Ok(CheckResult::exact(unnamed(), bad))
}

fn agmf_determinism<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let seed: u64 = rng.gen();
    let x: Tensor<T> = uniform(rng, &[1, ctx.doc.agmf.channels, 8, 8], -1.0, 1.0);
    let run = || -> Result<Tensor<T>> {
        let mut r = super::task_rng(seed, "agmf");
        random_agmf::<T>(&mut r, &ctx.doc.agmf)?.forward(&x)
    };
    Ok(CheckResult::exact(unnamed(), count_mismatch(&run()?, &run()?)))
}

fn branch_independence<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let [full_cfg, no_cfg] = variants(&ctx.doc.agmf);
    let full = random_agmf::<T>(rng, &full_cfg)?;
    let mut no = Agmf::<T>::zeros(&no_cfg)?;
    no.gated_unit = full.gated_unit.clone();
    no.triplet = full.triplet.clone();
    let x: Tensor<T> = uniform(rng, &[2, full_cfg.channels, 6, 6], -2.0, 2.0);
    let a = full.branch_outputs_in(&mut Eager, "agmf", &x)?;
    let b = no.branch_outputs_in(&mut Eager, "agmf", &x)?;
    let bad = count_mismatch(&a[0], &b[0]) + count_mismatch(&a[2], &b[1]);
    Ok(CheckResult::exact(unnamed(), bad))
}

fn agmf_zero_parameters<T: Real>(ctx: &Ctx<T>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut nonzero = 0;
    for cfg in variants(&ctx.doc.agmf) {
        let m = Agmf::<T>::zeros(&cfg)?;
        let x: Tensor<T> = uniform(rng, &[2, cfg.channels, 6, 8], -3.0, 3.0);
        nonzero += m.forward(&x)?.data().iter().filter(|v| v.bits() != T::zero().bits()).count();
    }
    Ok(CheckResult::exact(unnamed(), nonzero))
}

fn agmf_param_counts<T: Real>(_: &Ctx<T>, _: &mut rand_chacha::ChaCha8Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for c in [1, 2, 4, 8, 16] {
        for v in [Variant::Full, Variant::NoFmds] {
            let cfg = AgmfConfig::new(c, v);
            bad += usize::from(Agmf::<T>::zeros(&cfg)?.num_scalars() != agmf_param_count(&cfg)?);
        }
    }
    let c1 = agmf_param_count(&AgmfConfig::new(1, Variant::Full))?;
    bad += usize::from(c1 != 4 + 106 + 300 + 5);
    Ok(CheckResult::exact(unnamed(), bad))
}
