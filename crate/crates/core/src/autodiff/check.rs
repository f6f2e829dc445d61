use alloc::string::String;
use alloc::vec::Vec;

use super::{NodeId, Tape};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Inputs whose Z-pool top-1/top-2 gap falls below this are rejected.
    pub tie_margin: f64,
    /// Recorded in the report only.
    pub seed: Option<u64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            tie_margin: 1e-3,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamGrad {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradReport {
    pub params: Vec<ParamGrad>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub eps: f64,
    pub tol: f64,
    pub seed: Option<u64>,
    pub passed: bool,
}

impl GradReport {
    /// Name of the parameter with the largest relative error.
    pub fn worst(&self) -> Option<&ParamGrad> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of `sum(f(..))` against central differences for
/// every scalar of every leaf `f` registers.
///
/// `f` is re-run once per probe on a tape that perturbs a single leaf element,
/// so it must register its leaves in the same order on every call.
pub fn grad_check<F>(f: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>) -> Result<NodeId>,
{
    if opts.eps.is_nan() || opts.tol.is_nan() || opts.eps <= 0.0 || opts.tol <= 0.0 {
        return Err(Error::Config("eps and tol must be positive".into()));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    tape.mark_output(out);
    let loss = tape.node_value(out).sum();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    if let Some(margin) = tape.zpool_tie_margin()? {
        if margin < opts.tie_margin {
            return Err(Error::TieBoundary { margin });
        }
    }
    let ones = Tensor::ones(tape.node_value(out).shape())?;
    let grads = tape.backward(&ones)?;

    let probe = |leaf: usize, element: usize, delta: f64| -> Result<Tensor<f64>> {
        let mut t = Tape::with_perturbation(leaf, element, delta);
        let o = f(&mut t)?;
        let v = t.node_value(o).clone();
        if v.sum().is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    };

    let mut params = Vec::with_capacity(tape.leaf_count());
    for leaf in 0..tape.leaf_count() {
        let analytic = grads.leaf(leaf).data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for (i, &a) in analytic.iter().enumerate() {
            let plus = probe(leaf, i, opts.eps)?;
            let minus = probe(leaf, i, -opts.eps)?;
            let diff: f64 = plus
                .data()
                .iter()
                .zip(minus.data())
                .map(|(p, m)| p - m)
                .sum();
            let n = diff / (2.0 * opts.eps);
            max_abs = max_abs.max((a - n).abs());
            max_rel = max_rel.max(relative_error(a, n));
            numeric.push(n);
        }
        params.push(ParamGrad {
            name: String::from(tape.leaf_name(leaf)),
            analytic,
            numeric,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            passed: max_rel < opts.tol,
        });
    }
    let max_abs_err = params.iter().map(|p| p.max_abs_err).fold(0.0, f64::max);
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        passed: params.iter().all(|p| p.passed),
        params,
        max_abs_err,
        max_rel_err,
        eps: opts.eps,
        tol: opts.tol,
        seed: opts.seed,
    })
}
