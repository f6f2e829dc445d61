//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use msfuse::ntsr::{self, AnyTensor};
use msfuse_core::fmds::{partition, reassemble};
use msfuse_core::{
    conv2d, conv2d_naive, Agmf, AgmfConfig, AttentionBranch, ConvGeometry, ConvSpec, Eager, Error,
    Fmds, FmdsConfig, GatedUnit, Graph, Tensor, TripletAttention, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{checks, load_report, measurement, msfuse};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const BATCHES: [usize; 3] = [1, 2, 3];
const CHANNELS: [usize; 3] = [1, 3, 8];
const SPATIAL: [usize; 5] = [2, 4, 6, 8, 10];

fn grid() -> impl Iterator<Item = [usize; 4]> {
    BATCHES.into_iter().flat_map(|b| {
        CHANNELS.into_iter().flat_map(move |c| {
            SPATIAL
                .into_iter()
                .flat_map(move |h| SPATIAL.into_iter().map(move |w| [b, c, h, w]))
        })
    })
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xACCE_0000 + tag)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale)).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn round_trip() -> Outcome {
    let mut r = rng(1);
    let mut cases = 0;
    for shape in grid() {
        let x = random(&mut r, &shape, 10.0);
        let blocks = partition(&x).map_err(|e| format!("{shape:?}: {e}"))?;
        let [b, c, h, w] = shape;
        let (h2, w2) = (h / 2, w / 2);
        ensure(blocks.shape() == [4 * b, c, h2, w2], || format!("{shape:?}: block shape"))?;
        for n in 0..4 * b {
            let (img, q) = (n / 4, n % 4);
            for ch in 0..c {
                for i in 0..h2 {
                    for j in 0..w2 {
                        let src = x.at(img, ch, (q / 2) * h2 + i, (q % 2) * w2 + j);
                        ensure(blocks.at(n, ch, i, j).to_bits() == src.to_bits(), || {
                            format!("{shape:?}: block {n} index map")
                        })?;
                    }
                }
            }
        }
        let back = reassemble(&blocks, b).map_err(|e| format!("{shape:?}: {e}"))?;
        ensure(back.bitwise_eq(&x), || format!("{shape:?}: round trip not bitwise"))?;
        cases += 1;
    }
    ensure(cases == 225, || format!("{cases} cases"))?;
    Ok(format!("{cases} shapes bitwise"))
}

fn conv_oracle() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in [1, 3, 5, 7] {
        for stride in [1, 2] {
            for depthwise in [false, true] {
                for _ in 0..16 {
                    let c = r.gen_range(1..=6);
                    let groups = if depthwise { c } else { 1 };
                    let out = if depthwise { c * r.gen_range(1..=2) } else { r.gen_range(1..=6) };
                    let shape = [r.gen_range(1..=2), c, r.gen_range(k..=k + 6), r.gen_range(k..=k + 6)];
                    let pad = r.gen_range(0..=k / 2);
                    let geometry = ConvGeometry::new((stride, stride), (pad, pad), groups);
                    let weight = random(&mut r, &[out, c / groups, k, k], 1.0);
                    let bias = r.gen_bool(0.5).then(|| random(&mut r, &[out], 1.0));
                    let spec = ConvSpec::new(geometry, weight, bias).map_err(|e| e.to_string())?;
                    let x = random(&mut r, &shape, 1.0);
                    let fast = conv2d(&x, &spec).map_err(|e| e.to_string())?;
                    let slow = conv2d_naive(&x, &spec).map_err(|e| e.to_string())?;
                    worst = worst.max(fast.max_abs_diff(&slow).map_err(|e| e.to_string())?);
                    cases += 1;
                }
            }
        }
    }
    ensure(cases >= 200 && worst < 1e-6, || format!("{cases} cases, max |diff| {worst:e}"))?;
    Ok(format!("{cases} cases, max |diff| {worst:.3e} < 1e-6"))
}

const GRAD_TARGETS: [&str; 18] = [
    "sigmoid",
    "silu",
    "add",
    "mul",
    "mul_channel_broadcast",
    "scale",
    "reshape",
    "permute",
    "concat",
    "zpool",
    "batch_norm",
    "conv2d",
    "conv2d_depthwise",
    "fmds_forward",
    "gated_unit_forward",
    "triplet_attention_forward",
    "agmf_forward.full",
    "agmf_forward.no-fmds",
];

fn gradient_suite(dir: &Path) -> Outcome {
    let path = dir.join("grad.json");
    let out = msfuse(&["gradcheck", "--eps", "1e-5", "--tol", "1e-4", "--report", path.to_str().unwrap()]);
    ensure(out.status.code() == Some(0), || format!("exit {:?}", out.status.code()))?;
    let report = load_report(&path);
    let results = checks(&report);
    let mut worst = ("", 0.0f64);
    for target in GRAD_TARGETS {
        let name = format!("grad.{target}");
        let (_, passed, err, _) = results
            .iter()
            .find(|c| c.0 == name)
            .ok_or_else(|| format!("missing {name}"))?;
        ensure(*passed && *err < 1e-4, || format!("{name}: rel err {err:e}"))?;
        if *err > worst.1 {
            worst = (target, *err);
        }
    }
    Ok(format!(
        "{} targets, worst {} at {:.3e} < 1e-4",
        GRAD_TARGETS.len(),
        worst.0,
        worst.1
    ))
}

fn random_bn(r: &mut ChaCha8Rng, bn: &mut msfuse_core::BatchNormSpec<f64>) {
    for g in bn.gamma.data_mut() {
        *g = r.gen_range(-4.0..4.0);
    }
    for b in bn.beta.data_mut() {
        *b = r.gen_range(-20.0..20.0);
    }
    for m in bn.mean.iter_mut() {
        *m = r.gen_range(-1.0..1.0);
    }
    for v in bn.var.iter_mut() {
        *v = r.gen_range(0.1..3.0);
    }
}

fn bounded(input: &Tensor<f64>, output: &Tensor<f64>) -> bool {
    input.shape() == output.shape()
        && input.data().iter().zip(output.data()).all(|(x, y)| y.abs() <= x.abs())
}

fn in_open_unit(t: &Tensor<f64>) -> bool {
    t.data().iter().all(|&g| g > 0.0 && g < 1.0)
}

fn gate_bounds() -> Outcome {
    let mut r = rng(4);
    let draws = 1000;
    for draw in 0..draws {
        let shape = [r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=7), r.gen_range(1..=7)];
        let scale = [0.1, 1.0, 100.0][draw % 3];
        let x = random(&mut r, &shape, scale);

        let mut gu = GatedUnit::<f64>::init(&mut r, shape[1]).unwrap();
        random_bn(&mut r, &mut gu.bn);
        let mut g = Eager;
        let xv = g.leaf("x", &x);
        let gate = gu.gate_in(&mut g, "gu", &xv).map_err(|e| e.to_string())?;
        let y = gu.forward(&x).map_err(|e| e.to_string())?;
        ensure(in_open_unit(g.value(&gate)), || format!("draw {draw}: gated unit gate outside (0,1)"))?;
        ensure(bounded(&x, &y), || format!("draw {draw}: gated unit |out| > |in|"))?;

        let mut ta = TripletAttention::<f64>::init(&mut r).unwrap();
        for gate in &mut ta.gates {
            random_bn(&mut r, &mut gate.bn);
        }
        let gates = ta.gates_in(&mut g, "ta", &xv).map_err(|e| e.to_string())?;
        ensure(gates.len() == AttentionBranch::ALL.len(), || "gate count".into())?;
        for (gv, branch) in gates.iter().zip(AttentionBranch::ALL) {
            ensure(in_open_unit(g.value(gv)), || format!("draw {draw}: {branch:?} gate outside (0,1)"))?;
        }
        let y = ta.forward(&x).map_err(|e| e.to_string())?;
        ensure(bounded(&x, &y), || format!("draw {draw}: triplet |out| > |in|"))?;
    }
    Ok(format!("{draws} draws for gated unit and triplet attention"))
}

fn shape_contracts() -> Outcome {
    let mut r = rng(5);
    let mut cases = 0;
    for shape in grid() {
        let [b, c, h, w] = shape;
        let x = random(&mut r, &shape, 1.0);
        for out in [c, c + 2] {
            let m = Fmds::<f64>::init(&FmdsConfig::new(c, out), &mut r).unwrap();
            let y = m.forward(&x).map_err(|e| format!("fmds {shape:?}: {e}"))?;
            ensure(y.shape() == [b, out, h, w], || format!("fmds {shape:?} -> {:?}", y.shape()))?;
        }
        for variant in [Variant::Full, Variant::NoFmds] {
            let m = Agmf::<f64>::init(&AgmfConfig::new(c, variant), &mut r).unwrap();
            let y = m.forward(&x).map_err(|e| format!("agmf {shape:?}: {e}"))?;
            ensure(y.shape() == shape, || format!("agmf {shape:?} -> {:?}", y.shape()))?;
        }
        cases += 1;
    }
    for (h, w) in [(3, 4), (4, 5), (1, 1), (7, 9)] {
        let x = Tensor::<f64>::zeros(&[1, 2, h, w]).unwrap();
        let fmds = Fmds::<f64>::zeros(&FmdsConfig::new(2, 2)).unwrap();
        let agmf = Agmf::<f64>::zeros(&AgmfConfig::new(2, Variant::Full)).unwrap();
        for res in [fmds.forward(&x), agmf.forward(&x)] {
            ensure(matches!(res, Err(Error::OddSpatial { .. })), || {
                format!("({h},{w}) did not raise the odd-extent error")
            })?;
        }
    }
    Ok(format!("{cases} shapes preserved, odd extents rejected"))
}

fn scalars<'a>(params: impl IntoIterator<Item = &'a Tensor<f64>>) -> usize {
    let mut n = 0;
    for t in params {
        for _ in t.data() {
            n += 1;
        }
    }
    n
}

fn ablation_parity() -> Outcome {
    let mut r = rng(6);
    for c in [1, 2, 4, 8, 16] {
        let full = Agmf::<f64>::init(&AgmfConfig::new(c, Variant::Full), &mut r).unwrap();
        let mut ablated = Agmf::<f64>::init(&AgmfConfig::new(c, Variant::NoFmds), &mut r).unwrap();
        let full_n = scalars(full.params().into_iter().map(|p| p.1));
        let ablated_n = scalars(ablated.params().into_iter().map(|p| p.1));
        let fmds_n = scalars(full.fmds.as_ref().unwrap().params().into_iter().map(|p| p.1));
        let slab = c * c;
        ensure(ablated_n == full_n - fmds_n - slab, || {
            format!("C={c}: {ablated_n} != {full_n} - {fmds_n} - {slab}")
        })?;

        ablated.gated_unit = full.gated_unit.clone();
        ablated.triplet = full.triplet.clone();
        ablated.fusion_bn = full.fusion_bn.clone();
        let fw = &full.fusion_conv.weight;
        ablated.fusion_conv.weight = Tensor::from_fn(&[c, 2 * c, 1, 1], |i| {
            let (o, k) = (i / (2 * c), i % (2 * c));
            fw.at(o, if k < c { k } else { k + c }, 0, 0)
        })
        .unwrap();
        let mut silenced = full.clone();
        for o in 0..c {
            for k in c..2 * c {
                let idx = o * 3 * c + k;
                silenced.fusion_conv.weight.data_mut()[idx] = 0.0;
            }
        }
        let x = random(&mut r, &[2, c, 6, 4], 1.0);
        let a = ablated.forward(&x).map_err(|e| e.to_string())?;
        let s = silenced.forward(&x).map_err(|e| e.to_string())?;
        ensure(a.shape() == x.shape(), || format!("C={c}: ablated shape {:?}", a.shape()))?;
        let diff = a.max_abs_diff(&s).unwrap();
        ensure(diff < 1e-12, || format!("C={c}: ablated vs zeroed slab differ by {diff:e}"))?;
    }
    Ok("C in {1,2,4,8,16}: no-fmds = full - fmds - C*C fusion slab".into())
}

/// One convolution: channels in/out, groups, square kernel, input batch and map.
struct Layer {
    cin: usize,
    cout: usize,
    groups: usize,
    k: usize,
    bias: bool,
    bn: bool,
    batch: usize,
    h: usize,
    w: usize,
}

impl Layer {
    fn params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.k * self.k
            + if self.bias { self.cout } else { 0 }
            + if self.bn { 2 * self.cout } else { 0 }
    }

    /// Counts multiply-adds by walking the full loop nest of a stride-1 "same" conv.
    fn flops(&self) -> u64 {
        let mut n = 0u64;
        let per_group = self.cin / self.groups;
        for _b in 0..self.batch {
            for _o in 0..self.cout {
                for _y in 0..self.h {
                    for _x in 0..self.w {
                        for _ci in 0..per_group {
                            for _ky in 0..self.k {
                                for _kx in 0..self.k {
                                    n += 2;
                                }
                            }
                        }
                    }
                }
            }
        }
        n
    }
}

fn fmds_layers(c: usize, out: usize, [b, _, h, w]: [usize; 4]) -> Vec<Layer> {
    let mut layers = Vec::new();
    for k in [3, 5, 7] {
        let at = |cin, cout, groups, k| Layer { cin, cout, groups, k, bias: false, bn: false, batch: 4 * b, h: h / 2, w: w / 2 };
        layers.push(at(c, c, c, k));
        layers.push(at(c, c, 1, 1));
    }
    let full = |cin, cout, groups, k| Layer { cin, cout, groups, k, bias: false, bn: false, batch: b, h, w };
    layers.push(full(2 * c, 2 * c, 2 * c, 3));
    layers.push(full(2 * c, out, 1, 1));
    layers
}

fn agmf_layers(c: usize, variant: Variant, shape: [usize; 4]) -> Vec<Layer> {
    let [b, _, h, w] = shape;
    let mut layers = vec![Layer { cin: c, cout: c, groups: 1, k: 1, bias: true, bn: true, batch: b, h, w }];
    let mut branches = 2;
    if variant == Variant::Full {
        layers.extend(fmds_layers(c, c, shape));
        branches = 3;
    }
    for (mh, mw) in [(h, w), (c, w), (h, c)] {
        layers.push(Layer { cin: 2, cout: 1, groups: 1, k: 7, bias: false, bn: true, batch: b, h: mh, w: mw });
    }
    layers.push(Layer { cin: branches * c, cout: c, groups: 1, k: 1, bias: false, bn: true, batch: b, h, w });
    layers
}

fn accounting(dir: &Path) -> Outcome {
    let path = dir.join("count.json");
    let p = path.to_str().unwrap();
    let configs: [(&str, usize, &str, [usize; 4]); 6] = [
        ("fmds", 4, "full", [1, 4, 8, 8]),
        ("fmds", 16, "full", [1, 16, 32, 32]),
        ("fmds", 5, "full", [2, 3, 6, 10]),
        ("agmf", 4, "full", [1, 4, 8, 8]),
        ("agmf", 8, "no-fmds", [2, 8, 6, 6]),
        ("agmf", 1, "full", [1, 1, 2, 2]),
    ];
    let mut summary = Vec::new();
    for (module, out, variant, shape) in configs {
        let shape_arg = shape.map(|d| d.to_string()).join(",");
        let out_arg = out.to_string();
        let o = msfuse(&[
            "count", "--module", module, "--variant", variant, "--shape", &shape_arg,
            "--out-channels", &out_arg, "--report", p,
        ]);
        ensure(o.status.code() == Some(0), || format!("{module} {shape:?}: exit {:?}", o.status.code()))?;
        let report = load_report(&path);
        let reported = measurement(&report, "params").ok_or("no params measurement")? as usize;
        let reported_flops = measurement(&report, "flops.total").ok_or("no flops measurement")? as u64;

        let c = shape[1];
        let v = if variant == "full" { Variant::Full } else { Variant::NoFmds };
        let (layers, enumerated) = if module == "fmds" {
            let m = Fmds::<f64>::zeros(&FmdsConfig::new(c, out)).unwrap();
            (fmds_layers(c, out, shape), scalars(m.params().into_iter().map(|p| p.1)))
        } else {
            let m = Agmf::<f64>::zeros(&AgmfConfig::new(c, v)).unwrap();
            (agmf_layers(c, v, shape), scalars(m.params().into_iter().map(|p| p.1)))
        };
        let table: usize = layers.iter().map(Layer::params).sum();
        let flops: u64 = layers.iter().map(Layer::flops).sum();
        ensure(reported == enumerated && reported == table, || {
            format!("{module} {shape:?}: reported {reported}, enumerated {enumerated}, layer table {table}")
        })?;
        ensure(reported_flops == flops, || {
            format!("{module} {shape:?}: reported {reported_flops} FLOP, loop nest {flops}")
        })?;
        if module == "fmds" && c == 4 {
            ensure(reported == 484, || format!("C=4 FMDS has {reported} params"))?;
        }
        summary.push(reported.to_string());
    }
    Ok(format!("{} configs, params [{}]", configs.len(), summary.join(", ")))
}

fn determinism(dir: &Path) -> Outcome {
    let mut r = rng(8);
    let input = dir.join("input.ntsr");
    ntsr::write(&input, &AnyTensor::F64(random(&mut r, &[1, 3, 64, 64], 1.0))).map_err(|e| e.to_string())?;
    let input = input.to_str().unwrap().to_string();
    let run = |tag: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut outputs = Vec::new();
        for cmd in ["check", "gradcheck", "dump"] {
            let report = dir.join(format!("{cmd}-{tag}.json"));
            let images = dir.join(format!("dump-{tag}"));
            let mut args = vec![cmd, "--seed", "42", "--redact-timings", "--report", report.to_str().unwrap()];
            if cmd == "dump" {
                args.extend(["--input", &input, "--out", images.to_str().unwrap()]);
            }
            let o = msfuse(&args);
            ensure(o.status.code() == Some(0), || format!("{cmd}: exit {:?}", o.status.code()))?;
            outputs.push((format!("{cmd} stdout"), o.stdout));
            outputs.push((format!("{cmd} report"), std::fs::read(&report).map_err(|e| e.to_string())?));
            if cmd == "dump" {
                for stage in ["input", "fmds", "agmf"] {
                    let bytes = std::fs::read(images.join(format!("{stage}.pgm"))).map_err(|e| e.to_string())?;
                    outputs.push((format!("{stage}.pgm"), bytes));
                }
            }
        }
        Ok(outputs)
    };
    let first = run("a")?;
    let second = run("b")?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical", first.len()))
}

fn zero_parameters() -> Outcome {
    let mut r = rng(9);
    for shape in [[1, 1, 2, 2], [2, 3, 6, 4], [1, 8, 10, 10]] {
        let c = shape[1];
        let x = random(&mut r, &shape, 100.0);
        let fmds = Fmds::<f64>::zeros(&FmdsConfig::new(c, c)).unwrap().forward(&x).unwrap();
        ensure(fmds.data().iter().all(|&v| v == 0.0), || format!("fmds {shape:?} not zero"))?;
        for variant in [Variant::Full, Variant::NoFmds] {
            let y = Agmf::<f64>::zeros(&AgmfConfig::new(c, variant)).unwrap().forward(&x).unwrap();
            ensure(y.data().iter().all(|&v| v == 0.0), || format!("agmf {variant:?} {shape:?} not zero"))?;
        }
    }
    Ok("fmds and agmf (both variants) exactly zero".into())
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("tempdir");
    let criteria: [Criterion; 9] = [
        ("1 round-trip identity", Box::new(round_trip)),
        ("2 convolution oracle equivalence", Box::new(conv_oracle)),
        ("3 gradient suite", Box::new(|| gradient_suite(dir.path()))),
        ("4 gate bounds", Box::new(gate_bounds)),
        ("5 shape contracts", Box::new(shape_contracts)),
        ("6 ablation parity", Box::new(ablation_parity)),
        ("7 parameter/FLOP accounting", Box::new(|| accounting(dir.path()))),
        ("8 determinism", Box::new(|| determinism(dir.path()))),
        ("9 zero-parameter sanity", Box::new(zero_parameters)),
    ];
    let mut failed = 0;
    for (name, criterion) in &criteria {
        let start = Instant::now();
        let result = criterion();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
