use std::collections::BTreeMap;

use serde::Serialize;

/// Run record written as `manifest.toml` next to a command's outputs.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    /// Wall seconds per phase.
    pub phases: BTreeMap<String, f64>,
    pub artifacts: Vec<Artifact>,
    pub timing: Vec<TimingRow>,
    /// Mean seconds for one per-example gradient, per pool.
    pub gradient_time: Vec<GradientTime>,
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    /// FNV-1a of the file contents.
    pub digest: String,
    pub config_digest: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub method: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct GradientTime {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            seed,
            ..Default::default()
        }
    }

    pub fn add_phase(&mut self, name: &str, secs: f64) {
        *self.phases.entry(name.into()).or_default() += secs;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}
