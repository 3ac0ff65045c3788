//! Graph encoder: stacked weighted-mean message-passing layers over node
//! features, learned hour/day-of-week embeddings, and a dense map that fuses
//! both into one graph-level embedding.
//!
//! Per layer, node i becomes relu(U_l * concat(h_i, agg_i)) normalized to
//! unit length, where agg_i is the weighted mean of its in-neighbors scaled
//! by edge weight. The graph embedding is relu(U_g * concat(all node
//! embeddings, hour embedding, week embedding)).

use crate::model::ModelError;
use crate::nn_core::{dropout_mask, l2_normalize_with_norm, DenseMatrix, Mode, Param, RngStream};
use crate::od_graph::{ODSnapshot, TimeContext};

/// How node information moves along edges in the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphLayers {
    /// Weighted mean of in-neighbor embeddings, weighted by edge weight.
    WeightedMean,
    /// Unweighted mean of in-neighbor embeddings.
    PlainMean,
    /// No message passing: each node sees only itself (the aggregate half of
    /// the layer input is zero), so edge weights cannot influence encoding.
    FullyConnected,
    /// No node path at all; the graph embedding sees only the time context.
    Disabled,
}

/// Which pieces of the architecture are active. The full model uses context
/// everywhere and weighted message passing; ablations switch pieces off.
/// Disabled blocks are zero-substituted so parameter shapes never change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelVariant {
    pub use_context: bool,
    pub graph_layers: GraphLayers,
    pub context_in_decoder: bool,
}

impl ModelVariant {
    pub fn full() -> Self {
        ModelVariant {
            use_context: true,
            graph_layers: GraphLayers::WeightedMean,
            context_in_decoder: true,
        }
    }

    /// Spatial-only ablation: no time context anywhere.
    pub fn spatial_only() -> Self {
        ModelVariant {
            use_context: false,
            ..Self::full()
        }
    }

    /// Temporal-only ablation: no message passing, context only.
    pub fn temporal_only() -> Self {
        ModelVariant {
            graph_layers: GraphLayers::Disabled,
            ..Self::full()
        }
    }

    /// Dense ablation: per-node dense maps that ignore edges.
    pub fn fully_connected() -> Self {
        ModelVariant {
            graph_layers: GraphLayers::FullyConnected,
            ..Self::full()
        }
    }

    /// Unweighted-aggregation ablation.
    pub fn plain_aggregation() -> Self {
        ModelVariant {
            graph_layers: GraphLayers::PlainMean,
            ..Self::full()
        }
    }

    /// Context flows into the encoder but not the decoder.
    pub fn context_free_decoder() -> Self {
        ModelVariant {
            context_in_decoder: false,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.use_context && self.graph_layers == GraphLayers::Disabled {
            return Err(ModelError::DegenerateVariant);
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match (self.use_context, self.graph_layers, self.context_in_decoder) {
            (true, GraphLayers::WeightedMean, true) => "congae",
            (false, GraphLayers::WeightedMean, _) => "congae-sp",
            (true, GraphLayers::Disabled, true) => "congae-t",
            (true, GraphLayers::FullyConnected, true) => "congae-fc",
            (true, GraphLayers::PlainMean, true) => "nonweightedenc",
            (true, GraphLayers::WeightedMean, false) => "noncontextdec",
            _ => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "congae" => Some(Self::full()),
            "congae-sp" => Some(Self::spatial_only()),
            "congae-t" => Some(Self::temporal_only()),
            "congae-fc" => Some(Self::fully_connected()),
            "nonweightedenc" => Some(Self::plain_aggregation()),
            "noncontextdec" => Some(Self::context_free_decoder()),
            _ => None,
        }
    }

    pub const ALL_NAMES: [&'static str; 6] = [
        "congae",
        "congae-sp",
        "congae-t",
        "congae-fc",
        "nonweightedenc",
        "noncontextdec",
    ];
}

/// Encoder weights. Layer l maps 2*d_l inputs to d_{l+1} outputs; the hour
/// and week tables hold one embedding row per hour of day / day of week.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub sage_layers: Vec<Param>,
    pub hour_table: Param,
    pub week_table: Param,
    pub u_graph: Param,
}

impl EncoderParams {
    pub fn feature_dim(&self) -> usize {
        self.sage_layers[0].value.cols() / 2
    }

    pub fn node_embed_dim(&self) -> usize {
        self.sage_layers
            .last()
            .expect("at least one layer")
            .value
            .rows()
    }

    pub fn d_hour(&self) -> usize {
        self.hour_table.value.cols()
    }

    pub fn d_week(&self) -> usize {
        self.week_table.value.cols()
    }

    pub fn d_graph(&self) -> usize {
        self.u_graph.value.rows()
    }

    /// Node count implied by the graph-embedding matrix width.
    pub fn node_count(&self) -> usize {
        (self.u_graph.value.cols() - self.d_hour() - self.d_week()) / self.node_embed_dim()
    }
}

/// Hour and week embedding vectors for one snapshot, after dropout. Both are
/// zero vectors when the variant disables context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVectors {
    pub hour: Vec<f64>,
    pub week: Vec<f64>,
}

/// Weighted mean of in-neighbor rows of `h`, using edge weights: nodes with
/// no in-edges (or all-zero incident weights) aggregate to the zero vector.
pub fn weighted_mean_aggregate(node: usize, snapshot: &ODSnapshot, h: &DenseMatrix) -> Vec<f64> {
    aggregate(node, snapshot, h, GraphLayers::WeightedMean)
}

pub(crate) fn aggregate(
    node: usize,
    snapshot: &ODSnapshot,
    h: &DenseMatrix,
    kind: GraphLayers,
) -> Vec<f64> {
    let (agg, _) = aggregate_with_denom(node, snapshot, h, kind);
    agg
}

/// Returns the aggregate plus the denominator used (0 when the aggregate is
/// the zero-vector fallback).
pub(crate) fn aggregate_with_denom(
    node: usize,
    snapshot: &ODSnapshot,
    h: &DenseMatrix,
    kind: GraphLayers,
) -> (Vec<f64>, f64) {
    let d = h.cols();
    let mut agg = vec![0.0; d];
    let denom = match kind {
        GraphLayers::FullyConnected | GraphLayers::Disabled => return (agg, 0.0),
        GraphLayers::WeightedMean => snapshot
            .in_edges(node)
            .iter()
            .map(|e| e.weight)
            .sum::<f64>(),
        GraphLayers::PlainMean => snapshot.in_edges(node).len() as f64,
    };
    if denom <= 0.0 {
        return (agg, 0.0);
    }
    for e in snapshot.in_edges(node) {
        let w = match kind {
            GraphLayers::WeightedMean => e.weight,
            _ => 1.0,
        };
        if w == 0.0 {
            continue;
        }
        for (a, v) in agg.iter_mut().zip(h.row(e.origin)) {
            *a += w * v;
        }
    }
    for a in &mut agg {
        *a /= denom;
    }
    (agg, denom)
}

/// Everything one layer computed, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct LayerTrace {
    /// Layer input H_l, one row per node.
    pub input: DenseMatrix,
    /// concat(h_i, agg_i) rows actually fed to the weight matrix.
    pub concat: DenseMatrix,
    /// Aggregation denominator per node (0 means zero-vector fallback).
    pub denom: Vec<f64>,
    /// relu(U * concat) before normalization.
    pub hhat: DenseMatrix,
    /// Per-row divisor used by l2 normalization.
    pub norms: Vec<f64>,
    /// Dropout scales, present only in train mode with p > 0.
    pub mask: Option<DenseMatrix>,
    /// Layer output H_{l+1} (normalized, dropout applied).
    pub output: DenseMatrix,
}

pub(crate) fn run_layer(
    snapshot: &ODSnapshot,
    input: DenseMatrix,
    u: &DenseMatrix,
    kind: GraphLayers,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<LayerTrace, ModelError> {
    let n = snapshot.node_count();
    let d_in = input.cols();
    let d_out = u.rows();
    if u.cols() != 2 * d_in {
        return Err(ModelError::Shape(format!(
            "layer expects {} inputs but got embeddings of width {}",
            u.cols(),
            2 * d_in
        )));
    }
    let mut concat = DenseMatrix::zeros(n, 2 * d_in);
    let mut denom = vec![0.0; n];
    for i in 0..n {
        let (agg, dnm) = aggregate_with_denom(i, snapshot, &input, kind);
        denom[i] = dnm;
        let row = concat.row_mut(i);
        row[..d_in].copy_from_slice(input.row(i));
        row[d_in..].copy_from_slice(&agg);
    }
    let mut hhat = DenseMatrix::zeros(n, d_out);
    let mut norms = vec![0.0; n];
    let mut normed = DenseMatrix::zeros(n, d_out);
    for i in 0..n {
        let z = u.matvec(concat.row(i));
        let row = hhat.row_mut(i);
        for (slot, v) in row.iter_mut().zip(&z) {
            *slot = v.max(0.0);
        }
        let (unit, norm) = l2_normalize_with_norm(row);
        norms[i] = norm;
        normed.row_mut(i).copy_from_slice(&unit);
    }
    let mask = if mode == Mode::Train && p_drop > 0.0 {
        Some(
            DenseMatrix::from_vec(n, d_out, dropout_mask(n * d_out, p_drop, rng)?)
                .expect("mask shape"),
        )
    } else {
        None
    };
    let mut output = normed;
    if let Some(mask) = &mask {
        for (o, m) in output.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
    }
    Ok(LayerTrace {
        input,
        concat,
        denom,
        hhat,
        norms,
        mask,
        output,
    })
}

/// One message-passing layer: concat with aggregate, dense map, relu, l2
/// normalization, then (in train mode) dropout.
pub fn sage_layer(
    snapshot: &ODSnapshot,
    h_prev: &DenseMatrix,
    layer: &Param,
    kind: GraphLayers,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<DenseMatrix, ModelError> {
    Ok(run_layer(
        snapshot,
        h_prev.clone(),
        &layer.value,
        kind,
        p_drop,
        mode,
        rng,
    )?
    .output)
}

pub(crate) struct ContextTrace {
    pub vectors: ContextVectors,
    pub hour_mask: Option<Vec<f64>>,
    pub week_mask: Option<Vec<f64>>,
}

pub(crate) fn context_trace(
    ctx: TimeContext,
    params: &EncoderParams,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<ContextTrace, ModelError> {
    if !variant.use_context {
        // Zero-substitution: shapes stay fixed and no randomness is drawn.
        return Ok(ContextTrace {
            vectors: ContextVectors {
                hour: vec![0.0; params.d_hour()],
                week: vec![0.0; params.d_week()],
            },
            hour_mask: None,
            week_mask: None,
        });
    }
    let hour_row = params.hour_table.value.row(ctx.hour());
    let week_row = params.week_table.value.row(ctx.dow());
    let (hour_mask, week_mask) = if mode == Mode::Train && p_drop > 0.0 {
        (
            Some(dropout_mask(hour_row.len(), p_drop, rng)?),
            Some(dropout_mask(week_row.len(), p_drop, rng)?),
        )
    } else {
        (None, None)
    };
    let apply = |row: &[f64], mask: &Option<Vec<f64>>| -> Vec<f64> {
        match mask {
            Some(m) => row.iter().zip(m).map(|(v, s)| v * s).collect(),
            None => row.to_vec(),
        }
    };
    Ok(ContextTrace {
        vectors: ContextVectors {
            hour: apply(hour_row, &hour_mask),
            week: apply(week_row, &week_mask),
        },
        hour_mask,
        week_mask,
    })
}

/// Hour and week embeddings for a time context, with dropout in train mode.
/// Zero vectors when the variant disables context.
pub fn context_lookup(
    ctx: TimeContext,
    params: &EncoderParams,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<ContextVectors, ModelError> {
    Ok(context_trace(ctx, params, variant, p_drop, mode, rng)?.vectors)
}

/// Flattens node embeddings in node order, appends the context vectors, and
/// applies the graph-level dense map with relu.
pub fn graph_embed(
    h_nodes: &DenseMatrix,
    ctx: &ContextVectors,
    params: &EncoderParams,
) -> Result<Vec<f64>, ModelError> {
    let stacked = stack_graph_input(h_nodes, ctx);
    if stacked.len() != params.u_graph.value.cols() {
        return Err(ModelError::Shape(format!(
            "graph embedding expects {} inputs, got {}",
            params.u_graph.value.cols(),
            stacked.len()
        )));
    }
    let mut h_g = params.u_graph.value.matvec(&stacked);
    for v in &mut h_g {
        *v = v.max(0.0);
    }
    Ok(h_g)
}

pub(crate) fn stack_graph_input(h_nodes: &DenseMatrix, ctx: &ContextVectors) -> Vec<f64> {
    let mut stacked =
        Vec::with_capacity(h_nodes.rows() * h_nodes.cols() + ctx.hour.len() + ctx.week.len());
    stacked.extend_from_slice(h_nodes.data());
    stacked.extend_from_slice(&ctx.hour);
    stacked.extend_from_slice(&ctx.week);
    stacked
}

fn check_inputs(
    snapshot: &ODSnapshot,
    features: &DenseMatrix,
    params: &EncoderParams,
    variant: ModelVariant,
) -> Result<(), ModelError> {
    variant.validate()?;
    let n = params.node_count();
    if snapshot.node_count() != n {
        return Err(ModelError::NodeCountMismatch {
            snapshot: snapshot.node_count(),
            model: n,
        });
    }
    if features.shape() != (n, params.feature_dim()) {
        return Err(ModelError::Shape(format!(
            "feature matrix is {:?}, model expects {:?}",
            features.shape(),
            (n, params.feature_dim())
        )));
    }
    Ok(())
}

/// Runs the message-passing stack and returns the final node embeddings
/// (unit-norm rows up to dropout). With graph layers disabled this is the
/// zero matrix that the graph embedding will see in the node block.
pub fn encode_nodes(
    snapshot: &ODSnapshot,
    features: &DenseMatrix,
    params: &EncoderParams,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<DenseMatrix, ModelError> {
    check_inputs(snapshot, features, params, variant)?;
    if variant.graph_layers == GraphLayers::Disabled {
        return Ok(DenseMatrix::zeros(
            snapshot.node_count(),
            params.node_embed_dim(),
        ));
    }
    let mut h = features.clone();
    for layer in &params.sage_layers {
        h = sage_layer(snapshot, &h, layer, variant.graph_layers, p_drop, mode, rng)?;
    }
    Ok(h)
}

/// Full encoder: node embeddings plus context, fused into the graph
/// embedding h_G (length d_graph, entries >= 0).
pub fn encode(
    snapshot: &ODSnapshot,
    features: &DenseMatrix,
    params: &EncoderParams,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Vec<f64>, ModelError> {
    let h_nodes = encode_nodes(snapshot, features, params, variant, p_drop, mode, rng)?;
    let ctx = context_lookup(snapshot.context(), params, variant, p_drop, mode, rng)?;
    graph_embed(&h_nodes, &ctx, params)
}
