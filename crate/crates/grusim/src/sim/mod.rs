//! Discrete-event simulation of a kernel graph.
//!
//! [`simulate`] executes a [`KernelGraph`] for a fixed number of forward
//! passes and reports the numeric outputs, the output-valid timestamps, and
//! per-kernel busy tallies. The run is deterministic: the same
//! (graph, inputs, seed) triple reproduces the identical result, timestamps
//! included. The seed only perturbs packet-merge arbitration, which may move
//! timestamps but never values, because vectors are reassembled by packet id.

mod channel;
mod engine;

use crate::graph::KernelGraph;
use crate::gru::GruState;
use crate::plan::Strategy;
use engine::Engine;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    BadInput(String),
    #[error("deadlock: no runnable kernel with work remaining; blocked: {}", blocked.join("; "))]
    Deadlock { blocked: Vec<String> },
    #[error("non-finite value produced by kernel {kernel}")]
    NonFinite { kernel: String },
    #[error("aggregator outputs diverged: max |aie - hybrid| = {max_abs_diff}")]
    AggregatorMismatch { max_abs_diff: f64 },
}

/// Event-trace writer: one CSV record per traced event.
pub struct TraceSink {
    w: Box<dyn Write>,
}

impl TraceSink {
    pub fn new(mut w: Box<dyn Write>) -> std::io::Result<Self> {
        writeln!(w, "time_cycles,kernel,action,channel,words")?;
        Ok(Self { w })
    }

    fn record(&mut self, time: u64, kernel: &str, action: &str, channel: &str, words: usize) {
        let _ = writeln!(self.w, "{time},{kernel},{action},{channel},{words}");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelStats {
    pub name: String,
    pub busy_cycles: u64,
    /// Cycles not spent computing or emitting, out of the run's span.
    pub idle_cycles: u64,
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub strategy: Strategy,
    /// h_t per iteration, single precision as computed on the tiles.
    pub h_out: Vec<Vec<f32>>,
    /// Output-valid event times, AIE cycles, strictly increasing.
    pub valid_timestamps: Vec<u64>,
    /// Time of the last output-valid event: the run's span.
    pub total_cycles: u64,
    pub kernel_stats: Vec<KernelStats>,
    pub events_processed: u64,
    pub packets_produced: u64,
    pub packets_consumed: u64,
}

impl SimResult {
    /// Final hidden state after the last simulated iteration.
    pub fn final_state(&self) -> GruState {
        GruState {
            h: self
                .h_out
                .last()
                .map(|v| v.iter().map(|&x| x as f64).collect())
                .unwrap_or_default(),
        }
    }
}

/// Run `n_iterations` forward passes. `inputs` must supply at least that many
/// vectors; all of them are queued at t = 0 so the decoupled input-side
/// kernels can prefetch.
pub fn simulate(graph: &KernelGraph, inputs: &[Vec<f64>], n_iterations: u64, seed: u64) -> Result<SimResult, SimError> {
    simulate_traced(graph, inputs, n_iterations, seed, None)
}

/// [`simulate`] with an optional event-trace dump.
pub fn simulate_traced(
    graph: &KernelGraph,
    inputs: &[Vec<f64>],
    n_iterations: u64,
    seed: u64,
    trace: Option<TraceSink>,
) -> Result<SimResult, SimError> {
    let mut engine = Engine::new(graph, inputs, n_iterations, seed, trace)?;
    engine.run()?;

    let valid_timestamps = engine.valid_timestamps.clone();
    debug_assert!(
        valid_timestamps.windows(2).all(|w| w[0] < w[1]),
        "valid timestamps must be strictly increasing"
    );
    if matches!(graph.strategy, Strategy::RowWiseAie | Strategy::RowWiseHybrid) {
        let expected = 3 * graph.dims.hidden as u64 * n_iterations;
        debug_assert_eq!(engine.packets_produced, expected, "one packet per gate per row");
    }

    let total_cycles = valid_timestamps.last().copied().unwrap_or(0);
    let kernel_stats = graph
        .nodes
        .iter()
        .zip(engine.busy.iter())
        .map(|(n, &busy)| KernelStats {
            name: n.name.clone(),
            busy_cycles: busy,
            idle_cycles: total_cycles.saturating_sub(busy),
        })
        .collect();

    Ok(SimResult {
        strategy: graph.strategy,
        h_out: engine.h_out.clone(),
        valid_timestamps,
        total_cycles,
        kernel_stats,
        events_processed: engine.events_processed,
        packets_produced: engine.packets_produced,
        packets_consumed: engine.packets_consumed,
    })
}

/// Run the same model through both row-wise aggregation routes and return
/// the paired results (array-internal first, hybrid second). The numeric
/// outputs must agree to fp32 tolerance; timing is where they differ.
#[allow(clippy::too_many_arguments)]
pub fn compare_aggregators(
    input_dim: usize,
    hidden_dim: usize,
    row_reuse: usize,
    params: &crate::gru::GruParams,
    h0: &GruState,
    cfg: &crate::arch::ArchConfig,
    cost: &crate::arch::CostModel,
    inputs: &[Vec<f64>],
    n_iterations: u64,
    seed: u64,
    activation: crate::graph::SimActivation,
) -> Result<(SimResult, SimResult), CompareError> {
    let aie_plan = crate::plan::plan_row_wise(input_dim, hidden_dim, row_reuse, false, cfg)?;
    let hyb_plan = crate::plan::plan_row_wise(input_dim, hidden_dim, row_reuse, true, cfg)?;
    let aie_graph = crate::graph::build_graph(&aie_plan, params, h0, cfg, cost, activation.clone())?;
    let hyb_graph = crate::graph::build_graph(&hyb_plan, params, h0, cfg, cost, activation)?;
    let aie = simulate(&aie_graph, inputs, n_iterations, seed)?;
    let hybrid = simulate(&hyb_graph, inputs, n_iterations, seed)?;

    let mut max_abs_diff = 0.0f64;
    for (a, b) in aie.h_out.iter().zip(hybrid.h_out.iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            max_abs_diff = max_abs_diff.max((*x as f64 - *y as f64).abs());
        }
    }
    if max_abs_diff > 1e-6 {
        return Err(CompareError::Sim(SimError::AggregatorMismatch { max_abs_diff }));
    }
    Ok((aie, hybrid))
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Plan(#[from] crate::plan::PlanError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
