//! Cycle-approximate simulator and mapping planner for latency-constrained
//! GRU inference on a modeled tile-array accelerator.
//!
//! The crate has three layers:
//!
//! - reference numerics ([`gru`], [`lut`], [`weights`]): an exact
//!   double-precision GRU step used as the correctness oracle, plus the
//!   lookup-table activations the fabric-side aggregator uses;
//! - planning ([`arch`], [`plan`]): a declarative device model and a
//!   deterministic mapper from (strategy, dimensions) to tile assignments,
//!   broadcasts and merge wiring, with a resource-feasibility validator;
//! - simulation ([`graph`], [`sim`], [`metrics`]): a deterministic
//!   discrete-event engine running free-running kernels over bounded,
//!   backpressured channels, and the output-valid latency probe.

pub mod arch;
pub mod graph;
pub mod gru;
pub mod lut;
pub mod metrics;
pub mod plan;
pub mod rng;
pub mod sim;
pub mod weights;

pub use arch::{cycles_to_ns, validate_arch, ArchConfig, CostModel, SimConfig};
pub use gru::{gru_step, ActivationMode, GruDims, GruParams, GruState};
pub use lut::{build_lut, ActivationLut, LutKind};
pub use plan::{plan_column_wise, plan_row_wise, validate_resources, MappingPlan, Strategy};
