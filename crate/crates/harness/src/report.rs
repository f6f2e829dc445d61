//! Versioned JSON run reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Duration;

use msfuse_core::DType;
use serde::Serialize;

use crate::pgm::Heatmap;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured error, or the number of mismatches for exact checks.
    pub error: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    /// Passes when `error < tolerance`; NaN fails.
    pub fn within(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: error < tolerance,
            error: Some(error),
            tolerance: Some(tolerance),
            note: None,
        }
    }

    /// Passes when no mismatches were counted.
    pub fn exact(name: impl Into<String>, mismatches: usize) -> Self {
        Self {
            name: name.into(),
            passed: mismatches == 0,
            error: Some(mismatches as f64),
            tolerance: Some(0.0),
            note: None,
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            error: None,
            tolerance: None,
            note: None,
        }
    }

    pub fn failed(name: impl Into<String>, why: impl Into<String>) -> Self {
        Self::flag(name, false).with_note(why)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// A deterministic quantity such as a parameter or FLOP count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gflops: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub seed: u64,
    pub dtype: DType,
    pub config_digest: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub measurements: Vec<Measurement>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub heatmaps: Vec<Heatmap>,
    pub timings_redacted: bool,
    pub timings: Option<Vec<Timing>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check, then measurements, timings and a summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = write!(out, "{status} {}", c.name);
            if let (Some(e), Some(t)) = (c.error, c.tolerance) {
                let _ = write!(out, " error={e:.3e} tol={t:.1e}");
            }
            if let Some(n) = &c.note {
                let _ = write!(out, " ({n})");
            }
            out.push('\n');
        }
        for m in &self.measurements {
            let _ = writeln!(out, "{} = {} {}", m.name, m.value, m.unit);
        }
        for h in &self.heatmaps {
            let _ = writeln!(
                out,
                "heatmap {} {}x{} range [{:.6e}, {:.6e}]",
                h.source, h.width, h.height, h.min, h.max
            );
        }
        if let Some(ts) = &self.timings {
            for t in ts {
                let _ = write!(out, "time {} {:.6}s", t.name, t.seconds);
                if let Some(g) = t.gflops {
                    let _ = write!(out, " {g:.3} GFLOP/s");
                }
                out.push('\n');
            }
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(
            out,
            "{}: {passed}/{} checks passed",
            self.command,
            self.checks.len()
        );
        out
    }
}

/// Accumulates results for one command.
#[derive(Debug)]
pub struct ReportBuilder {
    command: String,
    seed: u64,
    dtype: DType,
    config_digest: String,
    checks: Vec<CheckResult>,
    names: BTreeSet<String>,
    measurements: Vec<Measurement>,
    heatmaps: Vec<Heatmap>,
    timings: Vec<Timing>,
}

impl ReportBuilder {
    pub fn new(command: &str, seed: u64, dtype: DType, config_digest: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            dtype,
            config_digest,
            checks: Vec::new(),
            names: BTreeSet::new(),
            measurements: Vec::new(),
            heatmaps: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Panics if a check with the same name was already recorded.
    pub fn check(&mut self, result: CheckResult) {
        assert!(
            self.names.insert(result.name.clone()),
            "duplicate check {}",
            result.name
        );
        self.checks.push(result);
    }

    pub fn measure(&mut self, name: impl Into<String>, value: f64, unit: &str) {
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            unit: unit.to_string(),
        });
    }

    pub fn heatmap(&mut self, map: Heatmap) {
        self.heatmaps.push(map);
    }

    pub fn time(&mut self, name: impl Into<String>, elapsed: Duration, gflops: Option<f64>) {
        self.timings.push(Timing {
            name: name.into(),
            seconds: elapsed.as_secs_f64(),
            gflops,
        });
    }

    pub fn finish(self, redact_timings: bool) -> RunReport {
        RunReport {
            schema: SCHEMA,
            command: self.command,
            seed: self.seed,
            dtype: self.dtype,
            config_digest: self.config_digest,
            passed: self.checks.iter().all(|c| c.passed),
            checks: self.checks,
            measurements: self.measurements,
            heatmaps: self.heatmaps,
            timings_redacted: redact_timings,
            timings: (!redact_timings).then_some(self.timings),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builder() -> ReportBuilder {
        ReportBuilder::new("check", 42, DType::F64, "abc".into())
    }

    #[test]
    fn status_is_fail_iff_any_check_fails() {
        let mut b = builder();
        b.check(CheckResult::within("a", 1e-9, 1e-6));
        b.check(CheckResult::exact("b", 0));
        assert!(b.finish(true).passed);

        let mut b = builder();
        b.check(CheckResult::within("a", 1e-9, 1e-6));
        b.check(CheckResult::within("nan", f64::NAN, 1e-6));
        let r = b.finish(true);
        assert!(!r.passed);
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    #[should_panic(expected = "duplicate check")]
    fn duplicate_names_rejected() {
        let mut b = builder();
        b.check(CheckResult::flag("a", true));
        b.check(CheckResult::flag("a", true));
    }

    #[test]
    fn redaction_drops_timings() {
        let mut b = builder();
        b.time("x", Duration::from_millis(5), None);
        let json = b.finish(true).to_json();
        assert!(json.contains("\"schema\": 1"));
        assert!(json.contains("\"timings\": null"));
        assert!(json.contains("\"timings_redacted\": true"));
    }

    #[test]
    fn text_has_one_line_per_check() {
        let mut b = builder();
        b.check(CheckResult::exact("a", 0));
        b.check(CheckResult::exact("b", 3));
        let text = b.finish(true).to_text();
        assert!(text.contains("PASS a error=0.000e0 tol=0.0e0"));
        assert!(text.contains("FAIL b"));
        assert!(text.ends_with("check: 1/2 checks passed\n"));
    }
}
