//! Manual reverse-mode differentiation of the full model. The forward pass
//! records every intermediate needed by the backward pass; the backward pass
//! accumulates parameter gradients into a `GradBuffer`.
//!
//! Loss for one snapshot: mean squared error between predicted and observed
//! weights over the target edge list. Backward is linear in the upstream
//! scale factor, so batch averaging multiplies by 1/batch_size here.

use crate::decoder::{decoder_input, predict_edge_with_hidden};
use crate::encoder::{
    context_trace, run_layer, stack_graph_input, ContextTrace, GraphLayers, LayerTrace,
    ModelVariant,
};
use crate::model::{GradBuffer, ModelError, ModelParams};
use crate::nn_core::{DenseMatrix, Mode, RngStream, L2_EPS};
use crate::od_graph::{Edge, ODSnapshot};

/// Per-target-edge forward record.
struct EdgeTrace {
    hidden: Vec<f64>,
    pred: f64,
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardTape {
    layers: Vec<LayerTrace>,
    ctx: ContextTrace,
    htilde: Vec<f64>,
    h_g: Vec<f64>,
    dec_input: Vec<f64>,
    recovered: Vec<f64>,
    edges: Vec<EdgeTrace>,
    loss: f64,
}

fn check_targets(targets: &[Edge], n: usize) -> Result<(), ModelError> {
    if targets.is_empty() {
        return Err(ModelError::EmptyTargets);
    }
    for e in targets {
        if e.origin >= n || e.dest >= n {
            return Err(ModelError::QueryOutOfRange {
                origin: e.origin,
                dest: e.dest,
                nodes: n,
            });
        }
    }
    Ok(())
}

pub(crate) fn forward_tape(
    model: &ModelParams,
    input: &ODSnapshot,
    targets: &[Edge],
    features: &DenseMatrix,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<ForwardTape, ModelError> {
    variant.validate()?;
    let dims = model.dims();
    let n = dims.node_count;
    if input.node_count() != n {
        return Err(ModelError::NodeCountMismatch {
            snapshot: input.node_count(),
            model: n,
        });
    }
    if features.shape() != (n, dims.feature_dim) {
        return Err(ModelError::Shape(format!(
            "feature matrix is {:?}, model expects {:?}",
            features.shape(),
            (n, dims.feature_dim)
        )));
    }
    check_targets(targets, n)?;

    let mut layers = Vec::new();
    let node_block = if variant.graph_layers == GraphLayers::Disabled {
        DenseMatrix::zeros(n, dims.d_l())
    } else {
        let mut h = features.clone();
        for layer in &model.encoder.sage_layers {
            let trace = run_layer(
                input,
                h,
                &layer.value,
                variant.graph_layers,
                p_drop,
                mode,
                rng,
            )?;
            h = trace.output.clone();
            layers.push(trace);
        }
        h
    };
    let ctx = context_trace(input.context(), &model.encoder, variant, p_drop, mode, rng)?;

    let htilde = stack_graph_input(&node_block, &ctx.vectors);
    let mut h_g = model.encoder.u_graph.value.matvec(&htilde);
    for v in &mut h_g {
        *v = v.max(0.0);
    }

    let dec_input = decoder_input(&h_g, &ctx.vectors, variant);
    let mut recovered = model.decoder.u_recover.value.matvec(&dec_input);
    for v in &mut recovered {
        *v = v.max(0.0);
    }

    let d_l = dims.d_l();
    let mut edges = Vec::with_capacity(targets.len());
    let mut loss = 0.0;
    for e in targets {
        let h_i = &recovered[e.origin * d_l..(e.origin + 1) * d_l];
        let h_j = &recovered[e.dest * d_l..(e.dest + 1) * d_l];
        let (pred, hidden) = predict_edge_with_hidden(h_i, h_j, &model.decoder)?;
        let r = pred - e.weight;
        loss += r * r;
        edges.push(EdgeTrace { hidden, pred });
    }
    loss /= targets.len() as f64;

    Ok(ForwardTape {
        layers,
        ctx,
        htilde,
        h_g,
        dec_input,
        recovered,
        edges,
        loss,
    })
}

/// Accumulates d(scale * loss)/d(params) into `grads`. `input` and `targets`
/// must be the ones the tape was built from.
pub(crate) fn backward(
    model: &ModelParams,
    input: &ODSnapshot,
    targets: &[Edge],
    variant: ModelVariant,
    tape: &ForwardTape,
    scale: f64,
    grads: &mut GradBuffer,
) {
    let dims = model.dims();
    let n = dims.node_count;
    let d_l = dims.d_l();
    let m = targets.len() as f64;

    // Edge head: residual -> sigmoid -> two dense maps, fan gradients into
    // the recovered node embeddings.
    let mut d_rec = vec![0.0; n * d_l];
    let mut cat = vec![0.0; 2 * d_l];
    for (e, tr) in targets.iter().zip(&tape.edges) {
        let d_pred = scale * 2.0 * (tr.pred - e.weight) / m;
        let d_logit = d_pred * tr.pred * (1.0 - tr.pred);
        grads.u_dec2().add_outer(&[d_logit], &tr.hidden);
        let u_dec2_row = model.decoder.u_dec2.value.row(0);
        let d_pre1: Vec<f64> = tr
            .hidden
            .iter()
            .zip(u_dec2_row)
            .map(|(&h, &u)| if h > 0.0 { d_logit * u } else { 0.0 })
            .collect();
        cat[..d_l].copy_from_slice(&tape.recovered[e.origin * d_l..(e.origin + 1) * d_l]);
        cat[d_l..].copy_from_slice(&tape.recovered[e.dest * d_l..(e.dest + 1) * d_l]);
        grads.u_dec1().add_outer(&d_pre1, &cat);
        let d_cat = model.decoder.u_dec1.value.matvec_transpose(&d_pre1);
        for (slot, v) in d_rec[e.origin * d_l..(e.origin + 1) * d_l]
            .iter_mut()
            .zip(&d_cat[..d_l])
        {
            *slot += v;
        }
        for (slot, v) in d_rec[e.dest * d_l..(e.dest + 1) * d_l]
            .iter_mut()
            .zip(&d_cat[d_l..])
        {
            *slot += v;
        }
    }

    // Recovery map.
    for (d, r) in d_rec.iter_mut().zip(&tape.recovered) {
        if *r <= 0.0 {
            *d = 0.0;
        }
    }
    grads.u_recover().add_outer(&d_rec, &tape.dec_input);
    let d_dec_input = model.decoder.u_recover.value.matvec_transpose(&d_rec);

    let d_g = dims.d_g;
    let ctx_in_decoder = variant.use_context && variant.context_in_decoder;
    let mut d_hour = vec![0.0; dims.d_hour];
    let mut d_week = vec![0.0; dims.d_week];
    if ctx_in_decoder {
        d_hour.copy_from_slice(&d_dec_input[d_g..d_g + dims.d_hour]);
        d_week.copy_from_slice(&d_dec_input[d_g + dims.d_hour..]);
    }

    // Graph embedding.
    let mut d_hg = d_dec_input[..d_g].to_vec();
    for (d, h) in d_hg.iter_mut().zip(&tape.h_g) {
        if *h <= 0.0 {
            *d = 0.0;
        }
    }
    grads.u_graph().add_outer(&d_hg, &tape.htilde);
    let d_htilde = model.encoder.u_graph.value.matvec_transpose(&d_hg);

    let node_block_len = n * d_l;
    if variant.use_context {
        for (slot, v) in d_hour
            .iter_mut()
            .zip(&d_htilde[node_block_len..node_block_len + dims.d_hour])
        {
            *slot += v;
        }
        for (slot, v) in d_week
            .iter_mut()
            .zip(&d_htilde[node_block_len + dims.d_hour..])
        {
            *slot += v;
        }
        // Through the shared dropout mask into the used table rows.
        let hour_row = grads.hour_table().row_mut(input.context().hour());
        match &tape.ctx.hour_mask {
            Some(mask) => {
                for ((slot, d), s) in hour_row.iter_mut().zip(&d_hour).zip(mask) {
                    *slot += d * s;
                }
            }
            None => {
                for (slot, d) in hour_row.iter_mut().zip(&d_hour) {
                    *slot += d;
                }
            }
        }
        let week_row = grads.week_table().row_mut(input.context().dow());
        match &tape.ctx.week_mask {
            Some(mask) => {
                for ((slot, d), s) in week_row.iter_mut().zip(&d_week).zip(mask) {
                    *slot += d * s;
                }
            }
            None => {
                for (slot, d) in week_row.iter_mut().zip(&d_week) {
                    *slot += d;
                }
            }
        }
    }

    if variant.graph_layers == GraphLayers::Disabled {
        return;
    }

    // Message-passing stack, last layer first.
    let mut d_out = DenseMatrix::from_vec(n, d_l, d_htilde[..node_block_len].to_vec())
        .expect("node block shape");
    for (l, trace) in tape.layers.iter().enumerate().rev() {
        let u = &model.encoder.sage_layers[l].value;
        let d_in = trace.input.cols();
        let d_this = trace.hhat.cols();
        let mut d_input = DenseMatrix::zeros(n, d_in);
        let mut d_z = vec![0.0; d_this];
        for i in 0..n {
            // Dropout, then l2 normalization, then relu.
            let mut d_normed: Vec<f64> = d_out.row(i).to_vec();
            if let Some(mask) = &trace.mask {
                for (d, s) in d_normed.iter_mut().zip(mask.row(i)) {
                    *d *= s;
                }
            }
            let s = trace.norms[i];
            let hhat = trace.hhat.row(i);
            if s > L2_EPS {
                let dot: f64 = hhat.iter().zip(&d_normed).map(|(h, d)| (h / s) * d).sum();
                for ((dz, d), h) in d_z.iter_mut().zip(&d_normed).zip(hhat) {
                    *dz = (d - (h / s) * dot) / s;
                }
            } else {
                for (dz, d) in d_z.iter_mut().zip(&d_normed) {
                    *dz = d / s;
                }
            }
            for (dz, h) in d_z.iter_mut().zip(hhat) {
                if *h <= 0.0 {
                    *dz = 0.0;
                }
            }
            grads.sage(l).add_outer(&d_z, trace.concat.row(i));
            let d_concat = u.matvec_transpose(&d_z);
            for (slot, v) in d_input.row_mut(i).iter_mut().zip(&d_concat[..d_in]) {
                *slot += v;
            }
            // Aggregate half fans out to in-neighbors; mean weights are the
            // forward coefficients.
            if trace.denom[i] > 0.0 {
                for e in input.in_edges(i) {
                    let w = match variant.graph_layers {
                        GraphLayers::WeightedMean => e.weight,
                        _ => 1.0,
                    };
                    if w == 0.0 {
                        continue;
                    }
                    let coeff = w / trace.denom[i];
                    for (slot, v) in d_input.row_mut(e.origin).iter_mut().zip(&d_concat[d_in..]) {
                        *slot += coeff * v;
                    }
                }
            }
        }
        d_out = d_input;
    }
}

/// Loss of one snapshot against a target edge list. In train mode dropout is
/// active and consumes randomness; in eval mode `rng` is untouched.
pub fn snapshot_loss(
    model: &ModelParams,
    input: &ODSnapshot,
    targets: &[Edge],
    features: &DenseMatrix,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<f64, ModelError> {
    Ok(forward_tape(model, input, targets, features, variant, p_drop, mode, rng)?.loss)
}

/// Loss plus gradients: runs forward, then accumulates d(scale * loss)/dW
/// into `grads`.
pub fn snapshot_loss_and_grads(
    model: &ModelParams,
    input: &ODSnapshot,
    targets: &[Edge],
    features: &DenseMatrix,
    variant: ModelVariant,
    p_drop: f64,
    mode: Mode,
    rng: &mut RngStream,
    scale: f64,
    grads: &mut GradBuffer,
) -> Result<f64, ModelError> {
    let tape = forward_tape(model, input, targets, features, variant, p_drop, mode, rng)?;
    backward(model, input, targets, variant, &tape, scale, grads);
    Ok(tape.loss)
}
