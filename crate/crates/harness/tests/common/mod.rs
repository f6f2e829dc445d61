#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub fn msfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msfuse"))
        .args(args)
        .output()
        .expect("spawn msfuse")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn load_report(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).expect("read report");
    serde_json::from_str(&text).expect("parse report")
}

pub fn measurement(report: &Value, name: &str) -> Option<f64> {
    report["measurements"]
        .as_array()?
        .iter()
        .find(|m| m["name"] == name)?["value"]
        .as_f64()
}

pub fn checks(report: &Value) -> Vec<(String, bool, f64, f64)> {
    report["checks"]
        .as_array()
        .map(|cs| {
            cs.iter()
                .map(|c| {
                    (
                        c["name"].as_str().unwrap_or_default().to_string(),
                        c["passed"].as_bool().unwrap_or(false),
                        c["error"].as_f64().unwrap_or(f64::NAN),
                        c["tolerance"].as_f64().unwrap_or(f64::NAN),
                    )
                })
                .collect()
        })
        .unwrap_or_default()
}
