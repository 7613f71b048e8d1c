//! Kernel graph construction.
//!
//! A [`KernelGraph`] is the executable form of a [`MappingPlan`]: free-running
//! kernels (nodes) connected by bounded channels, plus the merge serializers
//! that sit on interface tiles. The graph realizes the gate dependency
//! structure of the cell:
//!
//! - the input-matrix kernels are fed by a decoupled input queue and may run
//!   ahead of the recurrent path until their output buffers fill;
//! - the recurrent kernels for the update/reset gates wait on the
//!   hidden-state broadcast, add the paired input-matrix partial, and emit
//!   one identified packet per row;
//! - the aggregator applies activations, feeds the gated hidden state back
//!   to the candidate kernels, and hands completed gate vectors to the
//!   elementwise combine, which produces h_t for the sink and the next
//!   iteration's broadcast.
//!
//! Channel capacities are in transfer units (words for streams, accumulator
//! blocks for cascades, packets for packet channels, whole vectors for the
//! fabric-internal hops) and default to a ping-pong pair: two vectors' worth.

use crate::arch::{ArchConfig, CostModel};
use crate::gru::{GruDims, GruParams, GruState};
use crate::lut::ActivationLut;
use crate::plan::{AggregatorSite, Gate, MappingPlan, MatrixTag, Span, Strategy};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("plan/parameter mismatch: {0}")]
    Mismatch(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

pub type NodeId = usize;
pub type ChanId = usize;

/// A consumer-side handle on a (possibly broadcast) channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub chan: ChanId,
    pub consumer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Stream,
    Cascade,
    Packet,
}

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub name: String,
    pub kind: ChannelKind,
    /// Capacity in transfer units.
    pub capacity: usize,
    pub producer: NodeId,
    pub consumers: Vec<NodeId>,
    /// Interface tile carrying this channel, when it crosses one.
    pub interface_tile: Option<usize>,
    /// Delivery latency from enqueue to visibility, AIE cycles. Includes the
    /// broadcast penalty for multi-destination streams.
    pub latency: u64,
}

/// One interface-tile packet merge: serializes up to three packet channels
/// onto one stream toward the aggregator.
#[derive(Debug, Clone)]
pub struct MergeGroupSpec {
    pub interface_tile: usize,
    pub input_chans: Vec<ChanId>,
    /// Output queue capacity, packets.
    pub out_capacity: usize,
}

/// Activation evaluation inside the simulated aggregator.
#[derive(Debug, Clone)]
pub enum SimActivation {
    Exact,
    Lut {
        sigmoid: ActivationLut,
        tanh: ActivationLut,
    },
}

impl SimActivation {
    /// Default lookup tables for both functions.
    pub fn default_luts() -> Self {
        SimActivation::Lut {
            sigmoid: ActivationLut::default_for(crate::lut::LutKind::Sigmoid),
            tanh: ActivationLut::default_for(crate::lut::LutKind::Tanh),
        }
    }

    pub fn sigmoid_f32(&self, x: f32) -> f32 {
        match self {
            SimActivation::Exact => crate::gru::sigmoid(x as f64) as f32,
            SimActivation::Lut { sigmoid, .. } => sigmoid.eval(x as f64) as f32,
        }
    }

    pub fn tanh_f32(&self, x: f32) -> f32 {
        match self {
            SimActivation::Exact => (x as f64).tanh() as f32,
            SimActivation::Lut { tanh, .. } => tanh.eval(x as f64) as f32,
        }
    }

    pub fn apply(&self, gate: Gate, x: f32) -> f32 {
        match gate {
            Gate::Update | Gate::Reset => self.sigmoid_f32(x),
            Gate::Candidate => self.tanh_f32(x),
        }
    }
}

/// Where a row-wise MAC kernel sends its per-row result.
#[derive(Debug, Clone, Copy)]
pub enum MacRowOut {
    /// Input-matrix tile: raw partial to the paired recurrent tile.
    Partial(ChanId),
    /// Recurrent tile: identified packet into a merge.
    Packet(ChanId),
}

#[derive(Debug, Clone)]
pub struct MacRowSpec {
    pub matrix: MatrixTag,
    pub rows: (usize, usize),
    pub cols: usize,
    /// f32 weights, `(rows.1 - rows.0) x cols` row-major.
    pub weights: Vec<f32>,
    pub vector_in: Endpoint,
    /// Paired input-matrix partial stream (recurrent tiles only).
    pub partial_in: Option<Endpoint>,
    pub out: MacRowOut,
}

#[derive(Debug, Clone, Copy)]
pub enum CascadeOut {
    /// Forward the running accumulator to the next tile in the chain.
    Acc(ChanId),
    /// Chain tail: emit the finished row-block values as words.
    Words(ChanId),
}

#[derive(Debug, Clone)]
pub struct MacCascadeSpec {
    pub matrix: MatrixTag,
    pub cols: (usize, usize),
    pub n_rows: usize,
    /// f32 weights, `n_rows x (cols.1 - cols.0)` row-major.
    pub weights: Vec<f32>,
    pub vector_in: Endpoint,
    pub acc_in: Option<Endpoint>,
    pub out: CascadeOut,
}

/// Aggregator input wiring.
#[derive(Debug, Clone)]
pub enum AggInputs {
    /// Row-wise: indices into `KernelGraph::merge_groups`.
    Merged(Vec<usize>),
    /// Column-wise: per gate, the input-chain and recurrent-chain tails.
    CascadePairs([CascadePair; 3]),
}

#[derive(Debug, Clone, Copy)]
pub struct CascadePair {
    pub w_words: Endpoint,
    pub u_words: Endpoint,
}

#[derive(Debug, Clone)]
pub struct AggregatorSpec {
    pub inputs: AggInputs,
    /// Where h_{t-1} arrives: a broadcast endpoint (array aggregator) or the
    /// combine feedback channel (fabric FSM).
    pub h_in: Endpoint,
    pub rh_out: ChanId,
    pub z_out: ChanId,
    pub cand_out: ChanId,
}

#[derive(Debug, Clone)]
pub enum CombineOut {
    /// Array-side combine: one broadcast stream carries h_t to the recurrent
    /// tiles, the aggregator and the sink.
    AieBroadcast(ChanId),
    /// Fabric-side combine: direct sink handoff, FSM feedback, and the
    /// hidden-state broadcast through an interface tile.
    Pl {
        sink: ChanId,
        feedback: ChanId,
        h_broadcast: ChanId,
    },
}

#[derive(Debug, Clone)]
pub struct CombineSpec {
    pub z_in: Endpoint,
    pub cand_in: Endpoint,
    pub out: CombineOut,
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Source {
        out: ChanId,
    },
    MacRow(MacRowSpec),
    MacCascade(MacCascadeSpec),
    AieReorderAggregator(AggregatorSpec),
    PlFsmAggregator(AggregatorSpec),
    ElementwiseCombine(CombineSpec),
    Sink {
        /// Word-stream endpoint (array plans) or vector channel (hybrid).
        input: Endpoint,
        /// True when the first received vector is the h_0 priming transfer
        /// rather than an output.
        skip_first: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct KernelGraph {
    pub dims: GruDims,
    pub strategy: Strategy,
    pub lanes: usize,
    pub nodes: Vec<Node>,
    pub channels: Vec<ChannelSpec>,
    pub merge_groups: Vec<MergeGroupSpec>,
    /// Per-gate biases, f32, applied by the aggregator before activation.
    pub biases: [Vec<f32>; 3],
    pub h0: Vec<f32>,
    pub activation: SimActivation,
    /// Event costs, copied in so a graph is self-contained to simulate.
    pub cost: CostModel,
    /// AIE cycles per fabric cycle.
    pub pl_clock_ratio: u64,
}

impl KernelGraph {
    pub fn count_nodes(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }
}

struct Builder {
    nodes: Vec<Node>,
    channels: Vec<ChannelSpec>,
    merge_groups: Vec<MergeGroupSpec>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: Vec::new(),
            channels: Vec::new(),
            merge_groups: Vec::new(),
        }
    }

    fn add_node(&mut self, name: String, kind: NodeKind) -> NodeId {
        self.nodes.push(Node { name, kind });
        self.nodes.len() - 1
    }

    /// Placeholder node so channels can be declared before their endpoints'
    /// specs are complete; patched at the end.
    fn reserve_node(&mut self, name: &str) -> NodeId {
        self.add_node(name.to_string(), NodeKind::Sink {
            input: Endpoint { chan: 0, consumer: 0 },
            skip_first: false,
        })
    }

    fn add_channel(&mut self, spec: ChannelSpec) -> ChanId {
        self.channels.push(spec);
        self.channels.len() - 1
    }

    fn endpoint(&self, chan: ChanId, node: NodeId) -> Endpoint {
        let consumer = self.channels[chan]
            .consumers
            .iter()
            .position(|&c| c == node)
            .expect("node is a consumer of the channel");
        Endpoint { chan, consumer }
    }
}

fn matrix_f32(params: &GruParams, tag: MatrixTag) -> Vec<f32> {
    let m = match tag {
        MatrixTag::Wz => &params.wz,
        MatrixTag::Wr => &params.wr,
        MatrixTag::Wh => &params.wh,
        MatrixTag::Uz => &params.uz,
        MatrixTag::Ur => &params.ur,
        MatrixTag::Uh => &params.uh,
    };
    m.data().iter().map(|&v| v as f32).collect()
}

fn broadcast_latency(cost: &CostModel, consumers: usize) -> u64 {
    cost.stream_hop_cycles + (consumers.saturating_sub(1) as u64) * cost.broadcast_penalty_cycles_per_dest
}

/// Build the executable graph for a validated plan.
///
/// `h0` seeds the recurrent state; `activation` selects how the aggregator
/// evaluates sigmoid/tanh (the reference LUT pair or exact math).
pub fn build_graph(
    plan: &MappingPlan,
    params: &GruParams,
    h0: &GruState,
    cfg: &ArchConfig,
    cost: &CostModel,
    activation: SimActivation,
) -> Result<KernelGraph, GraphError> {
    params
        .validate()
        .map_err(|e| GraphError::Mismatch(e.to_string()))?;
    if params.dims() != plan.dims {
        return Err(GraphError::Mismatch(format!(
            "plan is for input={} hidden={}, parameters are input={} hidden={}",
            plan.dims.input,
            plan.dims.hidden,
            params.dims().input,
            params.dims().hidden
        )));
    }
    if h0.h.len() != plan.dims.hidden {
        return Err(GraphError::Mismatch(format!(
            "h0 has length {}, expected {}",
            h0.h.len(),
            plan.dims.hidden
        )));
    }

    match plan.strategy {
        Strategy::RowWiseAie | Strategy::RowWiseHybrid => build_row_wise(plan, params, h0, cfg, cost, activation),
        Strategy::ColumnWiseCascade => build_column_wise(plan, params, h0, cfg, cost, activation),
    }
}

fn build_row_wise(
    plan: &MappingPlan,
    params: &GruParams,
    h0: &GruState,
    cfg: &ArchConfig,
    cost: &CostModel,
    activation: SimActivation,
) -> Result<KernelGraph, GraphError> {
    let dims = plan.dims;
    let hybrid = plan.aggregator_site == AggregatorSite::PlKernel;
    let mut b = Builder::new();

    let source = b.reserve_node("source");
    let w_tags = [MatrixTag::Wz, MatrixTag::Wr, MatrixTag::Wh];
    let u_tags = [MatrixTag::Uz, MatrixTag::Ur, MatrixTag::Uh];

    // Reserve MAC nodes in plan order so names and ids are stable.
    let mut mac_nodes: Vec<(MatrixTag, (usize, usize), NodeId, usize)> = Vec::new();
    for tag in w_tags.iter().chain(u_tags.iter()) {
        for a in plan.assignments_for(*tag) {
            let Span::Rows { start, end } = a.span else {
                return Err(GraphError::InvalidPlan("row-wise plan with column span".into()));
            };
            let id = b.reserve_node(&format!("{}[{start}..{end})", tag.name()));
            mac_nodes.push((*tag, (start, end), id, a.tile));
        }
    }
    let agg = b.reserve_node(if hybrid { "fsm" } else { "agg" });
    let combine = b.reserve_node("combine");
    let sink = b.reserve_node("sink");

    let macs_of = |tag: MatrixTag| -> Vec<(usize, usize, NodeId, usize)> {
        mac_nodes
            .iter()
            .filter(|(t, ..)| *t == tag)
            .map(|(_, (s, e), id, tile)| (*s, *e, *id, *tile))
            .collect()
    };

    // Input broadcast: source -> all input-matrix tiles.
    let w_consumers: Vec<NodeId> = w_tags.iter().flat_map(|t| macs_of(*t).into_iter().map(|(_, _, id, _)| id)).collect();
    let x_chan = b.add_channel(ChannelSpec {
        name: "x".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.input,
        producer: source,
        consumers: w_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[0].interface_tile),
        latency: broadcast_latency(cost, w_consumers.len()),
    });

    // Hidden-state broadcast. For array aggregation the combine output is a
    // single stream reaching the recurrent tiles, the aggregator and the
    // sink; for hybrid plans the fabric keeps sink/feedback local and only
    // the recurrent tiles sit on the broadcast.
    let mut h_consumers: Vec<NodeId> = u_tags[..2]
        .iter()
        .flat_map(|t| macs_of(*t).into_iter().map(|(_, _, id, _)| id))
        .collect();
    if !hybrid {
        h_consumers.push(agg);
        h_consumers.push(sink);
    }
    let h_chan = b.add_channel(ChannelSpec {
        name: "h".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: combine,
        consumers: h_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[1].interface_tile),
        latency: broadcast_latency(cost, h_consumers.len()),
    });

    // Gated-hidden broadcast: aggregator -> candidate recurrent tiles.
    let rh_consumers: Vec<NodeId> = macs_of(MatrixTag::Uh).into_iter().map(|(_, _, id, _)| id).collect();
    let rh_chan = b.add_channel(ChannelSpec {
        name: "rh".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: agg,
        consumers: rh_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[2].interface_tile),
        latency: broadcast_latency(cost, rh_consumers.len()),
    });

    // Pair each input-matrix tile with the recurrent tile covering the same
    // rows; the raw partial crosses a point-to-point stream.
    let mut partial_chans: Vec<(NodeId, NodeId, ChanId)> = Vec::new();
    for (w_tag, u_tag) in w_tags.iter().zip(u_tags.iter()) {
        let ws = macs_of(*w_tag);
        let us = macs_of(*u_tag);
        if ws.len() != us.len() {
            return Err(GraphError::InvalidPlan(format!(
                "{} and {} have different tile counts",
                w_tag.name(),
                u_tag.name()
            )));
        }
        for ((ws_s, ws_e, w_id, _), (us_s, us_e, u_id, _)) in ws.iter().zip(us.iter()) {
            if (ws_s, ws_e) != (us_s, us_e) {
                return Err(GraphError::InvalidPlan("mismatched row ranges between paired tiles".into()));
            }
            let chan = b.add_channel(ChannelSpec {
                name: format!("{}[{ws_s}..{ws_e})>partial", w_tag.name()),
                kind: ChannelKind::Stream,
                capacity: 2 * (ws_e - ws_s),
                producer: *w_id,
                consumers: vec![*u_id],
                interface_tile: None,
                latency: cost.stream_hop_cycles,
            });
            partial_chans.push((*w_id, *u_id, chan));
        }
    }

    // Packet channels: one per recurrent tile, grouped per the plan's merge
    // wiring. Consumed by the aggregator through the group serializer.
    let mut packet_chan_of: Vec<(NodeId, ChanId)> = Vec::new();
    let mut group_indices = Vec::new();
    for group in &plan.merge_wiring {
        let mut input_chans = Vec::new();
        for &tile in &group.sources {
            let (tag, (s, e), node, _) = *mac_nodes
                .iter()
                .find(|(_, _, _, t)| *t == tile)
                .ok_or_else(|| GraphError::InvalidPlan(format!("merge source tile {tile} has no assignment")))?;
            let chan = b.add_channel(ChannelSpec {
                name: format!("{}[{s}..{e})>pkt", tag.name()),
                kind: ChannelKind::Packet,
                capacity: 2,
                producer: node,
                consumers: vec![agg],
                interface_tile: Some(group.interface_tile),
                latency: cost.stream_hop_cycles,
            });
            input_chans.push(chan);
            packet_chan_of.push((node, chan));
        }
        b.merge_groups.push(MergeGroupSpec {
            interface_tile: group.interface_tile,
            input_chans,
            out_capacity: 2,
        });
        group_indices.push(b.merge_groups.len() - 1);
    }

    // Aggregator -> combine gate vectors, and the hybrid-only plumbing.
    let (z_chan, cand_chan, combine_out, agg_h_in, sink_input, sink_skip) = if hybrid {
        let z = b.add_channel(ChannelSpec {
            name: "z.vec".into(),
            kind: ChannelKind::Stream,
            capacity: 2,
            producer: agg,
            consumers: vec![combine],
            interface_tile: None,
            latency: 0,
        });
        let c = b.add_channel(ChannelSpec {
            name: "cand.vec".into(),
            kind: ChannelKind::Stream,
            capacity: 2,
            producer: agg,
            consumers: vec![combine],
            interface_tile: None,
            latency: 0,
        });
        let sink_chan = b.add_channel(ChannelSpec {
            name: "out.vec".into(),
            kind: ChannelKind::Stream,
            capacity: 2,
            producer: combine,
            consumers: vec![sink],
            interface_tile: None,
            latency: 0,
        });
        let feedback = b.add_channel(ChannelSpec {
            name: "h.feedback".into(),
            kind: ChannelKind::Stream,
            capacity: 2,
            producer: combine,
            consumers: vec![agg],
            interface_tile: None,
            latency: 0,
        });
        (
            z,
            c,
            CombineOut::Pl {
                sink: sink_chan,
                feedback,
                h_broadcast: h_chan,
            },
            b.endpoint(feedback, agg),
            b.endpoint(sink_chan, sink),
            false,
        )
    } else {
        let z = b.add_channel(ChannelSpec {
            name: "z.words".into(),
            kind: ChannelKind::Stream,
            capacity: 2 * dims.hidden,
            producer: agg,
            consumers: vec![combine],
            interface_tile: None,
            latency: cost.stream_hop_cycles,
        });
        let c = b.add_channel(ChannelSpec {
            name: "cand.words".into(),
            kind: ChannelKind::Stream,
            capacity: 2 * dims.hidden,
            producer: agg,
            consumers: vec![combine],
            interface_tile: None,
            latency: cost.stream_hop_cycles,
        });
        (
            z,
            c,
            CombineOut::AieBroadcast(h_chan),
            b.endpoint(h_chan, agg),
            b.endpoint(h_chan, sink),
            true,
        )
    };

    // Patch the reserved nodes with their real specs.
    b.nodes[source].kind = NodeKind::Source { out: x_chan };
    for (tag, (s, e), id, _tile) in &mac_nodes {
        let is_w = !tag.is_recurrent();
        let cols = if is_w { dims.input } else { dims.hidden };
        let rows_w: Vec<f32> = {
            let flat = matrix_f32(params, *tag);
            flat[s * cols..e * cols].to_vec()
        };
        let vector_in = if is_w {
            b.endpoint(x_chan, *id)
        } else if *tag == MatrixTag::Uh {
            b.endpoint(rh_chan, *id)
        } else {
            b.endpoint(h_chan, *id)
        };
        let kind = if is_w {
            let chan = partial_chans
                .iter()
                .find(|(w, _, _)| w == id)
                .map(|(_, _, c)| *c)
                .expect("every input-matrix tile has a partial channel");
            NodeKind::MacRow(MacRowSpec {
                matrix: *tag,
                rows: (*s, *e),
                cols,
                weights: rows_w,
                vector_in,
                partial_in: None,
                out: MacRowOut::Partial(chan),
            })
        } else {
            let partial = partial_chans
                .iter()
                .find(|(_, u, _)| u == id)
                .map(|(_, _, c)| *c)
                .expect("every recurrent tile has a paired partial channel");
            let packet = packet_chan_of
                .iter()
                .find(|(n, _)| n == id)
                .map(|(_, c)| *c)
                .expect("every recurrent tile emits packets");
            NodeKind::MacRow(MacRowSpec {
                matrix: *tag,
                rows: (*s, *e),
                cols,
                weights: rows_w,
                vector_in,
                partial_in: Some(b.endpoint(partial, *id)),
                out: MacRowOut::Packet(packet),
            })
        };
        b.nodes[*id].kind = kind;
    }

    let agg_spec = AggregatorSpec {
        inputs: AggInputs::Merged(group_indices),
        h_in: agg_h_in,
        rh_out: rh_chan,
        z_out: z_chan,
        cand_out: cand_chan,
    };
    b.nodes[agg].kind = if hybrid {
        NodeKind::PlFsmAggregator(agg_spec)
    } else {
        NodeKind::AieReorderAggregator(agg_spec)
    };

    b.nodes[combine].kind = NodeKind::ElementwiseCombine(CombineSpec {
        z_in: b.endpoint(z_chan, combine),
        cand_in: b.endpoint(cand_chan, combine),
        out: combine_out,
    });

    b.nodes[sink].kind = NodeKind::Sink {
        input: sink_input,
        skip_first: sink_skip,
    };

    Ok(KernelGraph {
        dims,
        strategy: plan.strategy,
        lanes: cfg.vector_lanes,
        nodes: b.nodes,
        channels: b.channels,
        merge_groups: b.merge_groups,
        biases: [
            params.bz.iter().map(|&v| v as f32).collect(),
            params.br.iter().map(|&v| v as f32).collect(),
            params.bh.iter().map(|&v| v as f32).collect(),
        ],
        h0: h0.h.iter().map(|&v| v as f32).collect(),
        activation,
        cost: cost.clone(),
        pl_clock_ratio: cfg.pl_clock_ratio,
    })
}

/// (col_start, col_end, node) per tile along one cascade chain.
type ChainNodes = Vec<(usize, usize, NodeId)>;

fn build_column_wise(
    plan: &MappingPlan,
    params: &GruParams,
    h0: &GruState,
    cfg: &ArchConfig,
    cost: &CostModel,
    activation: SimActivation,
) -> Result<KernelGraph, GraphError> {
    let dims = plan.dims;
    let mut b = Builder::new();

    let source = b.reserve_node("source");
    let mut chain_nodes: Vec<(MatrixTag, ChainNodes)> = Vec::new();
    for tag in MatrixTag::ALL {
        let mut chain = Vec::new();
        for a in plan.assignments_for(tag) {
            let Span::Cols { start, end } = a.span else {
                return Err(GraphError::InvalidPlan("column-wise plan with row span".into()));
            };
            let pos = a.chain_pos.ok_or_else(|| GraphError::InvalidPlan("missing chain position".into()))?;
            let id = b.reserve_node(&format!("{}.{pos}[c{start}..c{end})", tag.name()));
            chain.push((start, end, id));
        }
        chain_nodes.push((tag, chain));
    }
    let agg = b.reserve_node("agg");
    let combine = b.reserve_node("combine");
    let sink = b.reserve_node("sink");

    let chain_of = |tag: MatrixTag| -> &ChainNodes {
        &chain_nodes.iter().find(|(t, _)| *t == tag).expect("all six chains exist").1
    };

    // Broadcasts mirror the row-wise wiring; destinations are chain tiles.
    let w_consumers: Vec<NodeId> = [MatrixTag::Wz, MatrixTag::Wr, MatrixTag::Wh]
        .iter()
        .flat_map(|t| chain_of(*t).iter().map(|(_, _, id)| *id))
        .collect();
    let x_chan = b.add_channel(ChannelSpec {
        name: "x".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.input,
        producer: source,
        consumers: w_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[0].interface_tile),
        latency: broadcast_latency(cost, w_consumers.len()),
    });
    let mut h_consumers: Vec<NodeId> = [MatrixTag::Uz, MatrixTag::Ur]
        .iter()
        .flat_map(|t| chain_of(*t).iter().map(|(_, _, id)| *id))
        .collect();
    h_consumers.push(agg);
    h_consumers.push(sink);
    let h_chan = b.add_channel(ChannelSpec {
        name: "h".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: combine,
        consumers: h_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[1].interface_tile),
        latency: broadcast_latency(cost, h_consumers.len()),
    });
    let rh_consumers: Vec<NodeId> = chain_of(MatrixTag::Uh).iter().map(|(_, _, id)| *id).collect();
    let rh_chan = b.add_channel(ChannelSpec {
        name: "rh".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: agg,
        consumers: rh_consumers.clone(),
        interface_tile: Some(plan.broadcast_groups[2].interface_tile),
        latency: broadcast_latency(cost, rh_consumers.len()),
    });

    // Cascade links within each chain plus the tail word stream to the
    // aggregator.
    let mut tail_chan: Vec<(MatrixTag, ChanId)> = Vec::new();
    let mut acc_in_of: Vec<(NodeId, ChanId)> = Vec::new();
    for (tag, chain) in &chain_nodes {
        for window in chain.windows(2) {
            let (_, _, from) = window[0];
            let (_, _, to) = window[1];
            let chan = b.add_channel(ChannelSpec {
                name: format!("{}.casc>{}", b.nodes[from].name, b.nodes[to].name),
                kind: ChannelKind::Cascade,
                capacity: 2,
                producer: from,
                consumers: vec![to],
                interface_tile: None,
                latency: cost.cascade_hop_cycles,
            });
            acc_in_of.push((to, chan));
        }
        let (_, _, last) = *chain.last().expect("chains are non-empty");
        let chan = b.add_channel(ChannelSpec {
            name: format!("{}.out", tag.name()),
            kind: ChannelKind::Stream,
            capacity: 2 * dims.hidden,
            producer: last,
            consumers: vec![agg],
            interface_tile: None,
            latency: cost.stream_hop_cycles,
        });
        tail_chan.push((*tag, chan));
    }

    let z_chan = b.add_channel(ChannelSpec {
        name: "z.words".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: agg,
        consumers: vec![combine],
        interface_tile: None,
        latency: cost.stream_hop_cycles,
    });
    let cand_chan = b.add_channel(ChannelSpec {
        name: "cand.words".into(),
        kind: ChannelKind::Stream,
        capacity: 2 * dims.hidden,
        producer: agg,
        consumers: vec![combine],
        interface_tile: None,
        latency: cost.stream_hop_cycles,
    });

    // Patch nodes.
    b.nodes[source].kind = NodeKind::Source { out: x_chan };
    for (tag, chain) in &chain_nodes {
        let flat = matrix_f32(params, *tag);
        let total_cols = if tag.is_recurrent() { dims.hidden } else { dims.input };
        for (idx, (s, e, id)) in chain.iter().enumerate() {
            let width = e - s;
            let mut weights = Vec::with_capacity(dims.hidden * width);
            for row in 0..dims.hidden {
                weights.extend_from_slice(&flat[row * total_cols + s..row * total_cols + e]);
            }
            let vector_in = match tag {
                MatrixTag::Wz | MatrixTag::Wr | MatrixTag::Wh => b.endpoint(x_chan, *id),
                MatrixTag::Uz | MatrixTag::Ur => b.endpoint(h_chan, *id),
                MatrixTag::Uh => b.endpoint(rh_chan, *id),
            };
            let acc_in = acc_in_of
                .iter()
                .find(|(n, _)| n == id)
                .map(|(_, c)| b.endpoint(*c, *id));
            let out = if idx + 1 == chain.len() {
                CascadeOut::Words(tail_chan.iter().find(|(t, _)| t == tag).expect("tail exists").1)
            } else {
                CascadeOut::Acc(
                    b.channels
                        .iter()
                        .position(|c| c.producer == *id && matches!(c.kind, ChannelKind::Cascade))
                        .expect("non-tail tiles forward the accumulator"),
                )
            };
            b.nodes[*id].kind = NodeKind::MacCascade(MacCascadeSpec {
                matrix: *tag,
                cols: (*s, *e),
                n_rows: dims.hidden,
                weights,
                vector_in,
                acc_in,
                out,
            });
        }
    }

    let pair_for = |w: MatrixTag, u: MatrixTag| -> CascadePair {
        let wc = tail_chan.iter().find(|(t, _)| *t == w).expect("tail").1;
        let uc = tail_chan.iter().find(|(t, _)| *t == u).expect("tail").1;
        CascadePair {
            w_words: b.endpoint(wc, agg),
            u_words: b.endpoint(uc, agg),
        }
    };
    b.nodes[agg].kind = NodeKind::AieReorderAggregator(AggregatorSpec {
        inputs: AggInputs::CascadePairs([
            pair_for(MatrixTag::Wz, MatrixTag::Uz),
            pair_for(MatrixTag::Wr, MatrixTag::Ur),
            pair_for(MatrixTag::Wh, MatrixTag::Uh),
        ]),
        h_in: b.endpoint(h_chan, agg),
        rh_out: rh_chan,
        z_out: z_chan,
        cand_out: cand_chan,
    });

    b.nodes[combine].kind = NodeKind::ElementwiseCombine(CombineSpec {
        z_in: b.endpoint(z_chan, combine),
        cand_in: b.endpoint(cand_chan, combine),
        out: CombineOut::AieBroadcast(h_chan),
    });

    b.nodes[sink].kind = NodeKind::Sink {
        input: b.endpoint(h_chan, sink),
        skip_first: true,
    };

    Ok(KernelGraph {
        dims,
        strategy: plan.strategy,
        lanes: cfg.vector_lanes,
        nodes: b.nodes,
        channels: b.channels,
        merge_groups: b.merge_groups,
        biases: [
            params.bz.iter().map(|&v| v as f32).collect(),
            params.br.iter().map(|&v| v as f32).collect(),
            params.bh.iter().map(|&v| v as f32).collect(),
        ],
        h0: h0.h.iter().map(|&v| v as f32).collect(),
        activation,
        cost: cost.clone(),
        pl_clock_ratio: cfg.pl_clock_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchConfig, CostModel};
    use crate::gru::{generate_params, generate_state};
    use crate::plan::{plan_column_wise, plan_row_wise};

    fn setup(input: usize, hidden: usize) -> (GruParams, GruState, ArchConfig, CostModel) {
        (
            generate_params(5, GruDims { input, hidden }),
            generate_state(6, hidden),
            ArchConfig::default(),
            CostModel::default(),
        )
    }

    #[test]
    fn hybrid_h2_i2_matches_hand_enumeration() {
        // Hand enumeration for hidden=2, input=2, row_reuse=1, hybrid:
        //   nodes: source + 12 MAC (6 matrices x 2 rows) + fsm + combine
        //          + sink = 16
        //   channels: x(1) + partial pairs(6) + h(1) + rh(1) + packets(6)
        //          + z/cand vectors(2) + sink vector(1) + feedback(1) = 19
        //   merge groups: 2 (one per row, three gates each)
        let (params, h0, cfg, cost) = setup(2, 2);
        let plan = plan_row_wise(2, 2, 1, true, &cfg).unwrap();
        let g = build_graph(&plan, &params, &h0, &cfg, &cost, SimActivation::Exact).unwrap();
        assert_eq!(g.nodes.len(), 16);
        assert_eq!(g.count_nodes(|k| matches!(k, NodeKind::MacRow(_))), 12);
        assert_eq!(g.count_nodes(|k| matches!(k, NodeKind::PlFsmAggregator(_))), 1);
        assert_eq!(g.count_nodes(|k| matches!(k, NodeKind::ElementwiseCombine(_))), 1);
        assert_eq!(g.channels.len(), 19);
        assert_eq!(g.merge_groups.len(), 2);
        assert_eq!(
            g.channels.iter().filter(|c| matches!(c.kind, ChannelKind::Packet)).count(),
            6
        );
    }

    #[test]
    fn minimal_hidden_1_aie_graph() {
        let (params, h0, cfg, cost) = setup(1, 1);
        let plan = plan_row_wise(1, 1, 1, false, &cfg).unwrap();
        let g = build_graph(&plan, &params, &h0, &cfg, &cost, SimActivation::Exact).unwrap();
        // source + 6 MAC + agg + combine + sink.
        assert_eq!(g.nodes.len(), 10);
        assert_eq!(g.count_nodes(|k| matches!(k, NodeKind::AieReorderAggregator(_))), 1);
        // x + 3 partials + h + rh + 3 packets + z + cand = 11.
        assert_eq!(g.channels.len(), 11);
        assert_eq!(g.merge_groups.len(), 1);
    }

    #[test]
    fn column_wise_uses_cascades_not_packets() {
        let (params, h0, cfg, cost) = setup(4, 8);
        let plan = plan_column_wise(4, 8, &cfg).unwrap();
        let g = build_graph(&plan, &params, &h0, &cfg, &cost, SimActivation::Exact).unwrap();
        assert_eq!(g.count_nodes(|k| matches!(k, NodeKind::MacCascade(_))), 3 * 4 + 3 * 8);
        assert_eq!(
            g.channels.iter().filter(|c| matches!(c.kind, ChannelKind::Packet)).count(),
            0
        );
        // Cascade links: (len-1) per chain = 3*3 + 3*7 = 30.
        assert_eq!(
            g.channels.iter().filter(|c| matches!(c.kind, ChannelKind::Cascade)).count(),
            30
        );
        assert!(g.merge_groups.is_empty());
    }

    #[test]
    fn mismatched_params_rejected() {
        let (params, h0, cfg, cost) = setup(3, 4);
        let plan = plan_row_wise(3, 5, 1, true, &cfg).unwrap();
        assert!(build_graph(&plan, &params, &h0, &cfg, &cost, SimActivation::Exact).is_err());
        let plan = plan_row_wise(3, 4, 1, true, &cfg).unwrap();
        let short_h0 = GruState::zeros(2);
        assert!(build_graph(&plan, &params, &short_h0, &cfg, &cost, SimActivation::Exact).is_err());
    }

    #[test]
    fn every_channel_has_one_producer_and_consumers() {
        let (params, h0, cfg, cost) = setup(3, 5);
        for plan in [
            plan_row_wise(3, 5, 2, true, &cfg).unwrap(),
            plan_row_wise(3, 5, 2, false, &cfg).unwrap(),
            plan_column_wise(3, 5, &cfg).unwrap(),
        ] {
            let g = build_graph(&plan, &params, &h0, &cfg, &cost, SimActivation::Exact).unwrap();
            for c in &g.channels {
                assert!(c.producer < g.nodes.len());
                assert!(!c.consumers.is_empty(), "channel {} has no consumers", c.name);
                assert!(c.capacity >= 1);
            }
            for group in &g.merge_groups {
                assert!(group.input_chans.len() <= cfg.merge_ways_per_interface);
            }
        }
    }
}
