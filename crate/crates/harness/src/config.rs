//! The JSON config document shared by all commands.

use std::path::Path;

use anyhow::Context;
use msfuse_core::{AgmfConfig, FmdsConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeGrid {
    pub batch: Vec<usize>,
    pub channels: Vec<usize>,
    /// Used for both height and width.
    pub spatial: Vec<usize>,
}

impl Default for SizeGrid {
    fn default() -> Self {
        Self {
            batch: vec![1, 2, 3],
            channels: vec![1, 3, 8],
            spatial: vec![2, 4, 6, 8, 10],
        }
    }
}

impl SizeGrid {
    /// Every `(B, C, H, W)` in the grid.
    pub fn shapes(&self) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for &b in &self.batch {
            for &c in &self.channels {
                for &h in &self.spatial {
                    for &w in &self.spatial {
                        out.push([b, c, h, w]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub eps: f64,
    pub tol: f64,
    pub tie_margin: f64,
    pub max_resamples: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            tie_margin: 1e-3,
            max_resamples: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub shape: [usize; 4],
    pub iters: usize,
    pub conv_shape: [usize; 4],
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            shape: [1, 64, 80, 80],
            iters: 20,
            conv_shape: [1, 32, 40, 40],
        }
    }
}

/// Hyperparameters for every command. Weights are not stored: they are
/// drawn from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub seed: u64,
    pub fmds: FmdsConfig,
    pub agmf: AgmfConfig,
    pub grid: SizeGrid,
    pub gradcheck: GradcheckSettings,
    pub bench: BenchSettings,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        Self {
            seed: 42,
            fmds: FmdsConfig::new(4, 4),
            agmf: AgmfConfig::new(4, Variant::Full),
            grid: SizeGrid::default(),
            gradcheck: GradcheckSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl ConfigDocument {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON of the document plus command options.
    pub fn digest(&self, extra: &serde_json::Value) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(serde_json::to_vec(extra).expect("options serialize"));
        format!("{:x}", h.finalize())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
