use crate::error::{Error, Result};

/// Deterministic compute-time model for virtual-time runs.
///
/// Work is counted in floating-point operations and bytes, then converted
/// to seconds with fixed throughputs. The client is `client_slowdown` times
/// slower than the server for both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub server_flops_per_s: f64,
    /// Serialization plus deserialization throughput of the server.
    pub server_codec_bytes_per_s: f64,
    pub client_slowdown: f64,
    /// Frames the server may have waiting for the link before it blocks.
    pub send_queue_depth: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            server_flops_per_s: 2e9,
            server_codec_bytes_per_s: 2e8,
            client_slowdown: 10.0,
            send_queue_depth: 16,
        }
    }
}

impl CostModel {
    /// Free compute: only the link costs time.
    pub fn zero() -> Self {
        Self {
            server_flops_per_s: f64::INFINITY,
            server_codec_bytes_per_s: f64::INFINITY,
            client_slowdown: 1.0,
            send_queue_depth: usize::MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && !x.is_nan();
        if !(ok(self.server_flops_per_s) && ok(self.server_codec_bytes_per_s) && ok(self.client_slowdown)) {
            return Err(Error::config(format!("cost model throughputs must be positive: {self:?}")));
        }
        if self.send_queue_depth == 0 {
            return Err(Error::config("send queue depth must be at least 1"));
        }
        Ok(())
    }

    pub fn server_compute(&self, flops: u64) -> f64 {
        flops as f64 / self.server_flops_per_s
    }

    pub fn server_codec(&self, bytes: usize) -> f64 {
        bytes as f64 / self.server_codec_bytes_per_s
    }

    pub fn client_compute(&self, flops: u64) -> f64 {
        self.server_compute(flops) * self.client_slowdown
    }

    pub fn client_codec(&self, bytes: usize) -> f64 {
        self.server_codec(bytes) * self.client_slowdown
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_is_ten_times_slower() {
        let c = CostModel::default();
        assert_eq!(c.server_compute(2_000_000_000), 1.0);
        assert_eq!(c.client_compute(2_000_000_000), 10.0);
        assert_eq!(CostModel::zero().client_compute(u64::MAX), 0.0);
        assert!(CostModel { client_slowdown: 0.0, ..c }.validate().is_err());
    }
}
