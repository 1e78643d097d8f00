use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VirtualTime;

/// Published edge-to-cloud latency ratios: minimum, average, median, maximum.
pub const CLOUD_RATIO_MIN: f64 = 6.89;
pub const CLOUD_RATIO_AVERAGE: f64 = 50.96;
pub const CLOUD_RATIO_MEDIAN: f64 = 45.98;
pub const CLOUD_RATIO_MAX: f64 = 119.72;

/// Per-link delays. The cloud round trip is the edge round trip scaled by
/// `cloud_ratio`; every message also pays a linear per-KiB serialization cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub edge_rtt_us: u64,
    pub cloud_ratio: f64,
    pub edge_ns_per_kib: u64,
    pub cloud_ns_per_kib: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            edge_rtt_us: 1_000,
            cloud_ratio: CLOUD_RATIO_MIN,
            // Roughly 10 Gbit/s to the edge and 1 Gbit/s to the cloud.
            edge_ns_per_kib: 800,
            cloud_ns_per_kib: 8_000,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.cloud_ratio.is_finite() && self.cloud_ratio >= 1.0) {
            return Err(Error::Config(format!(
                "cloud_ratio must be >= 1 (got {})",
                self.cloud_ratio
            )));
        }
        Ok(())
    }

    pub fn edge_rtt(&self) -> VirtualTime {
        VirtualTime::from_micros(self.edge_rtt_us)
    }

    pub fn cloud_rtt(&self) -> VirtualTime {
        VirtualTime((self.edge_rtt_us as f64 * 1_000.0 * self.cloud_ratio).round() as u64)
    }

    fn transfer(bytes: usize, ns_per_kib: u64) -> VirtualTime {
        VirtualTime((bytes as u64 * ns_per_kib).div_ceil(1024))
    }

    /// One client-edge exchange carrying `bytes` in total.
    pub fn edge_exchange(&self, bytes: usize) -> VirtualTime {
        self.edge_rtt() + Self::transfer(bytes, self.edge_ns_per_kib)
    }

    /// One exchange with the cloud carrying `bytes` in total.
    pub fn cloud_exchange(&self, bytes: usize) -> VirtualTime {
        self.cloud_rtt() + Self::transfer(bytes, self.cloud_ns_per_kib)
    }
}
