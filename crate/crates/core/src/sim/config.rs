//! TOML run configuration.
//!
//! A `[workload]` table naming a known profile starts from that profile's
//! preset; any other keys in the table override it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{ClientConfig, UploadMode};
use crate::cloud::CloudConfig;
use crate::edge::EdgeConfig;
use crate::error::{Error, Result};
use crate::mle::RateLimit;
use crate::sim::workload::{SnapshotSpec, PROFILES};
use crate::sim::LatencyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub edges: usize,
    pub clients: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Self { edges: 2, clients: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Snapshots written straight to the cloud before measuring. Defaults
    /// to half the snapshots.
    pub preload_snapshots: Option<usize>,
    /// Logical bytes between share-index rebuilds. Defaults to one
    /// snapshot.
    pub epoch_bytes: Option<u64>,
    /// Every n-th measured upload is restored and compared; 0 disables.
    pub restore_every: usize,
    /// Local index size as a fraction of the cloud's distinct chunks,
    /// reapplied every epoch. `None` keeps the edge configuration.
    pub local_fraction: Option<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            preload_snapshots: None,
            epoch_bytes: None,
            restore_every: 32,
            local_fraction: Some(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub modes: Vec<UploadMode>,
    pub workload: SnapshotSpec,
    pub topology: Topology,
    pub latency: LatencyModel,
    pub key_server: RateLimit,
    pub cloud: CloudConfig,
    pub edge: EdgeConfig,
    pub client: ClientConfig,
    pub run: RunSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            modes: UploadMode::ALL.to_vec(),
            workload: SnapshotSpec::default(),
            topology: Topology::default(),
            latency: LatencyModel::default(),
            key_server: RateLimit::default(),
            cloud: CloudConfig::default(),
            edge: EdgeConfig::default(),
            client: ClientConfig::default(),
            run: RunSettings::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// Default configuration on a named profile.
    pub fn for_profile(name: &str, base_size: u64) -> Result<Self> {
        Ok(Self {
            workload: SnapshotSpec::profile(name, base_size)?,
            ..Self::default()
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        if let Some(toml::Value::Table(w)) = table.get("workload") {
            if let Some(name) = w.get("profile").and_then(toml::Value::as_str) {
                if PROFILES.iter().any(|p| p.0.eq_ignore_ascii_case(name)) {
                    let base = match w.get("base_size") {
                        None => SnapshotSpec::default().base_size,
                        Some(v) => v
                            .as_integer()
                            .filter(|b| *b > 0)
                            .ok_or_else(|| config_err("workload.base_size must be a positive integer"))?
                            as u64,
                    };
                    let preset = SnapshotSpec::profile(name, base)?;
                    let toml::Value::Table(mut merged) = toml::Value::try_from(&preset).map_err(config_err)? else {
                        return Err(config_err("workload preset is not a table"));
                    };
                    for (k, v) in w {
                        merged.insert(k.clone(), v.clone());
                    }
                    merged.insert("profile".into(), toml::Value::String(preset.profile));
                    table.insert("workload".into(), toml::Value::Table(merged));
                }
            }
        }
        let cfg: RunConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(config_err("at least one mode is required"));
        }
        if self.topology.edges == 0 || self.topology.clients == 0 {
            return Err(config_err("topology needs at least one edge and one client"));
        }
        if self.key_server.capacity == 0 {
            return Err(config_err("key_server.capacity must be positive"));
        }
        self.workload.validate()?;
        self.latency.validate()?;
        self.edge.validate()?;
        self.cloud.share.validate()?;
        self.cloud.pow.validate()?;
        if let Some(p) = self.run.preload_snapshots {
            if p >= self.workload.snapshot_count {
                return Err(config_err("preload_snapshots must leave a snapshot to measure"));
            }
        }
        if let Some(f) = self.run.local_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(config_err("local_fraction must lie in (0, 1]"));
            }
        }
        if self.run.epoch_bytes == Some(0) {
            return Err(config_err("epoch_bytes must be positive"));
        }
        Ok(())
    }

    pub fn preload_snapshots(&self) -> usize {
        self.run
            .preload_snapshots
            .unwrap_or(self.workload.snapshot_count / 2)
            .min(self.workload.snapshot_count - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn profile_preset_with_overrides() {
        let cfg = RunConfig::from_toml_str(
            "seed = 9\nmodes = [\"pm_dedup\"]\n[workload]\nprofile = \"lab\"\nbase_size = 524288\nsnapshot_count = 5\n[latency]\ncloud_ratio = 50.96\n",
        )
        .unwrap();
        let preset = SnapshotSpec::profile("LAB", 512 << 10).unwrap();
        assert_eq!(cfg.workload.profile, "LAB");
        assert_eq!(cfg.workload.snapshot_count, 5);
        assert_eq!(cfg.workload.target_dedup_ratio, preset.target_dedup_ratio);
        assert_eq!(cfg.workload.hot_files, preset.hot_files);
        assert_eq!(cfg.latency.cloud_ratio, 50.96);
        assert_eq!(cfg.modes, vec![UploadMode::PmDedup]);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::for_profile("FSL", 1 << 20).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn malformed_documents_are_config_errors() {
        for text in [
            "seed = ",
            "unknown_key = 1",
            "[topology]\nedges = 0",
            "modes = [\"teleport\"]",
            "[workload]\nprofile = \"LAB\"\nbase_size = -3",
            "[run]\nlocal_fraction = 2.0",
            "[workload]\nsnapshot_count = 4\n[run]\npreload_snapshots = 4",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
