//! Command implementations.

pub mod bench;
pub mod check;
pub mod count;
pub mod dump;
pub mod gradcheck;
mod oracle;

use std::time::Instant;

use msfuse_core::{BatchNormSpec, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{CheckResult, ReportBuilder};

/// Generator for one named task: independent of execution order.
pub fn task_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a
    let stream = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    rng.set_stream(stream);
    rng
}

pub fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::real(rng.gen_range(lo..hi))).expect("non-empty shape")
}

/// Non-identity running statistics and affine parameters.
pub fn randomize_bn<T: Real>(bn: &mut BatchNormSpec<T>, rng: &mut impl Rng) {
    let c = bn.channels();
    bn.gamma = uniform(rng, &[c], 0.5, 1.5);
    bn.beta = uniform(rng, &[c], -0.5, 0.5);
    bn.mean = (0..c).map(|_| T::real(rng.gen_range(-0.5..0.5))).collect();
    bn.var = (0..c).map(|_| T::real(rng.gen_range(0.5..2.0))).collect();
}

/// Runs `f`, records its wall time, and turns an error into a failed check.
pub fn run_timed(
    report: &mut ReportBuilder,
    name: &str,
    f: impl FnOnce() -> msfuse_core::Result<CheckResult>,
) {
    let start = Instant::now();
    let result = f().unwrap_or_else(|e| CheckResult::failed(name, e.to_string()));
    report.time(name, start.elapsed(), None);
    report.check(result);
}
