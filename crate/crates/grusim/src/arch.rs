//! Modeled accelerator description and event cost model.
//!
//! The architecture is a 2D array of vector tiles with local memory, fed
//! through interface tiles that convert wide fabric-side streams to narrow
//! array-side streams. Everything the simulator charges cycles for is a field
//! of [`CostModel`]; the structural limits live in [`ArchConfig`].
//!
//! The simulator runs on a single timebase: array (AIE) clock cycles. One
//! fabric (PL) cycle equals `pl_clock_ratio` AIE cycles, and every PL-side
//! event snaps to a multiple of that ratio, so cross-domain ordering is
//! deterministic and no timestamp is ever fractional.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid architecture config: {0}")]
    Invalid(String),
}

/// Structural description of the modeled device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Compute tiles in the array.
    pub n_tiles: usize,
    /// Boundary tiles between fabric and array.
    pub n_interface_tiles: usize,
    /// Local data memory per tile, bytes.
    pub tile_mem_bytes: usize,
    /// Array clock.
    pub aie_clock_hz: f64,
    /// AIE cycles per PL cycle (integer divisor).
    pub pl_clock_ratio: u64,
    /// Fabric-side stream width, bits.
    pub pl_stream_bits: usize,
    /// Array-side stream width, bits.
    pub aie_stream_bits: usize,
    /// f32 elements processed per vector MAC.
    pub vector_lanes: usize,
    /// 128-bit loads per cycle per tile.
    pub loads_per_cycle: usize,
    /// Stores per cycle per tile.
    pub stores_per_cycle: usize,
    /// Packet sources one interface tile can merge.
    pub merge_ways_per_interface: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n_tiles: 400,
            n_interface_tiles: 39,
            tile_mem_bytes: 32 * 1024,
            aie_clock_hz: 1.25e9,
            pl_clock_ratio: 4,
            pl_stream_bits: 128,
            aie_stream_bits: 32,
            vector_lanes: 8,
            loads_per_cycle: 2,
            stores_per_cycle: 1,
            merge_ways_per_interface: 3,
        }
    }
}

/// Cycle costs charged per simulated event, in AIE cycles unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Latency of one inter-tile stream hop.
    pub stream_hop_cycles: u64,
    /// Extra delivery latency per broadcast destination beyond the first.
    pub broadcast_penalty_cycles_per_dest: u64,
    /// Latency of one cascade hop between neighbors.
    pub cascade_hop_cycles: u64,
    /// Cycles per vector MAC once the pipeline is warm.
    pub mac_initiation_interval: u64,
    /// Pipeline fill for a local-memory pass.
    pub mem_load_latency_cycles: u64,
    /// Cycles to emit a packet header word.
    pub packet_header_cycles: u64,
    /// PL-clock cycles for the aggregation FSM read state.
    pub pl_fsm_read_cycles: u64,
    /// PL-clock cycles for the aggregation FSM process state.
    pub pl_fsm_process_cycles: u64,
    /// PL-clock cycles for the aggregation FSM write state.
    pub pl_fsm_write_cycles: u64,
    /// Cycles per packet for the in-array ID-based reorder.
    pub aie_reorder_cycles_per_packet: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            stream_hop_cycles: 4,
            broadcast_penalty_cycles_per_dest: 2,
            cascade_hop_cycles: 1,
            mac_initiation_interval: 1,
            mem_load_latency_cycles: 1,
            packet_header_cycles: 1,
            pl_fsm_read_cycles: 1,
            pl_fsm_process_cycles: 2,
            pl_fsm_write_cycles: 1,
            aie_reorder_cycles_per_packet: 3,
        }
    }
}

impl CostModel {
    /// Lane-reduction cost at the end of a row: log2(lanes) MAC-pipeline
    /// cycles for the pairwise tree.
    pub fn reduce_cycles(&self, lanes: usize) -> u64 {
        (usize::BITS - (lanes.max(1) - 1).leading_zeros()) as u64 * self.mac_initiation_interval
    }
}

/// One config file carries both sections; each is optional and defaults
/// apply field by field. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub arch: ArchConfig,
    pub cost: CostModel,
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: SimConfig = serde_json::from_str(&text)?;
        let violations = validate_arch(&cfg.arch);
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations.join("; ")));
        }
        Ok(cfg)
    }
}

/// Check the architecture invariants; returns every violation found.
pub fn validate_arch(cfg: &ArchConfig) -> Vec<String> {
    let mut v = Vec::new();
    for (name, value) in [
        ("n_tiles", cfg.n_tiles),
        ("n_interface_tiles", cfg.n_interface_tiles),
        ("tile_mem_bytes", cfg.tile_mem_bytes),
        ("pl_stream_bits", cfg.pl_stream_bits),
        ("aie_stream_bits", cfg.aie_stream_bits),
        ("vector_lanes", cfg.vector_lanes),
        ("loads_per_cycle", cfg.loads_per_cycle),
        ("stores_per_cycle", cfg.stores_per_cycle),
        ("merge_ways_per_interface", cfg.merge_ways_per_interface),
    ] {
        if value == 0 {
            v.push(format!("{name} must be positive"));
        }
    }
    if cfg.pl_clock_ratio == 0 {
        v.push("pl_clock_ratio must be positive".into());
    }
    if !(cfg.aie_clock_hz.is_finite() && cfg.aie_clock_hz > 0.0) {
        v.push(format!("aie_clock_hz must be positive, got {}", cfg.aie_clock_hz));
    }
    if cfg.aie_stream_bits > 0 && !cfg.pl_stream_bits.is_multiple_of(cfg.aie_stream_bits) {
        v.push(format!(
            "width ratio not integral: pl_stream_bits {} / aie_stream_bits {}",
            cfg.pl_stream_bits, cfg.aie_stream_bits
        ));
    }
    v
}

/// Convert an AIE-cycle count to nanoseconds.
pub fn cycles_to_ns(cfg: &ArchConfig, aie_cycles: u64) -> f64 {
    aie_cycles as f64 / cfg.aie_clock_hz * 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ArchConfig::default();
        assert!(validate_arch(&cfg).is_empty());
        assert_eq!(cfg.n_tiles, 400);
        assert_eq!(cfg.n_interface_tiles, 39);
        assert_eq!(cfg.pl_stream_bits / cfg.aie_stream_bits, 4);
        assert_eq!(cfg.pl_clock_ratio, 4);
        // 1.25 GHz / 4 = 312.5 MHz fabric clock.
        assert_eq!(cfg.aie_clock_hz / cfg.pl_clock_ratio as f64, 312.5e6);
    }

    #[test]
    fn non_default_integral_ratio_ok() {
        let cfg = ArchConfig {
            pl_stream_bits: 96,
            ..ArchConfig::default()
        };
        assert!(validate_arch(&cfg).is_empty());
    }

    #[test]
    fn non_integral_ratio_flagged() {
        let cfg = ArchConfig {
            pl_stream_bits: 100,
            ..ArchConfig::default()
        };
        let violations = validate_arch(&cfg);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("width ratio not integral"));
    }

    #[test]
    fn zero_fields_flagged() {
        let cfg = ArchConfig {
            n_tiles: 0,
            vector_lanes: 0,
            ..ArchConfig::default()
        };
        let violations = validate_arch(&cfg);
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn cycles_to_ns_examples() {
        let cfg = ArchConfig::default();
        assert_eq!(cycles_to_ns(&cfg, 1250), 1000.0);
        // One PL cycle = 4 AIE cycles = 3.2 ns.
        assert_eq!(cycles_to_ns(&cfg, cfg.pl_clock_ratio), 3.2);
        assert_eq!(cycles_to_ns(&cfg, 0), 0.0);
    }

    #[test]
    fn reduce_cycles_is_log2() {
        let cost = CostModel::default();
        assert_eq!(cost.reduce_cycles(8), 3);
        assert_eq!(cost.reduce_cycles(1), 0);
        assert_eq!(cost.reduce_cycles(6), 3); // ceil(log2(6))
    }

    #[test]
    fn config_file_partial_and_unknown_keys() {
        let parsed: SimConfig =
            serde_json::from_str(r#"{"arch": {"n_tiles": 100}, "cost": {"stream_hop_cycles": 7}}"#).unwrap();
        assert_eq!(parsed.arch.n_tiles, 100);
        assert_eq!(parsed.arch.n_interface_tiles, 39);
        assert_eq!(parsed.cost.stream_hop_cycles, 7);
        assert_eq!(parsed.cost.cascade_hop_cycles, 1);

        let err = serde_json::from_str::<SimConfig>(r#"{"arch": {"n_tile": 100}}"#);
        assert!(err.is_err(), "unknown key must be rejected");
        let err = serde_json::from_str::<SimConfig>(r#"{"costs": {}}"#);
        assert!(err.is_err(), "unknown section must be rejected");
    }

    #[test]
    fn empty_config_is_defaults() {
        let parsed: SimConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, SimConfig::default());
    }
}
