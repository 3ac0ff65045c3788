//! Decoder: recovers per-node embeddings from the graph embedding plus time
//! context, then predicts individual edge weights with a two-layer MLP over
//! concatenated endpoint embeddings and a sigmoid output.

use crate::encoder::{ContextVectors, ModelVariant};
use crate::model::ModelError;
use crate::nn_core::{sigmoid, DenseMatrix, Param};

/// Decoder weights. `u_recover` maps concat(h_G, hour, week) to N stacked
/// node embeddings; `u_dec1`/`u_dec2` form the edge-weight head.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub u_recover: Param,
    pub u_dec1: Param,
    pub u_dec2: Param,
}

impl DecoderParams {
    pub fn node_embed_dim(&self) -> usize {
        self.u_dec1.value.cols() / 2
    }

    pub fn edge_hidden_dim(&self) -> usize {
        self.u_dec1.value.rows()
    }

    pub fn node_count(&self) -> usize {
        self.u_recover.value.rows() / self.node_embed_dim()
    }
}

/// Builds the decoder input vector: the graph embedding followed by the hour
/// and week context, zero-substituted when the variant keeps context out of
/// the decoder. Length is always d_g + d_hour + d_week.
pub(crate) fn decoder_input(h_g: &[f64], ctx: &ContextVectors, variant: ModelVariant) -> Vec<f64> {
    let mut input = Vec::with_capacity(h_g.len() + ctx.hour.len() + ctx.week.len());
    input.extend_from_slice(h_g);
    if variant.use_context && variant.context_in_decoder {
        input.extend_from_slice(&ctx.hour);
        input.extend_from_slice(&ctx.week);
    } else {
        input.resize(input.len() + ctx.hour.len() + ctx.week.len(), 0.0);
    }
    input
}

/// Recovers all node embeddings from the graph embedding: one relu dense map
/// whose output is unstacked into N rows of the node embedding width.
pub fn decode_nodes(
    h_g: &[f64],
    ctx: &ContextVectors,
    params: &DecoderParams,
    variant: ModelVariant,
) -> Result<DenseMatrix, ModelError> {
    variant.validate()?;
    let input = decoder_input(h_g, ctx, variant);
    if input.len() != params.u_recover.value.cols() {
        return Err(ModelError::Shape(format!(
            "decoder expects {} inputs, got {}",
            params.u_recover.value.cols(),
            input.len()
        )));
    }
    let d_l = params.node_embed_dim();
    if params.u_recover.value.rows() % d_l != 0 {
        return Err(ModelError::Shape(format!(
            "recovered vector of length {} does not unstack into rows of width {}",
            params.u_recover.value.rows(),
            d_l
        )));
    }
    let mut recovered = params.u_recover.value.matvec(&input);
    for v in &mut recovered {
        *v = v.max(0.0);
    }
    let n = recovered.len() / d_l;
    Ok(DenseMatrix::from_vec(n, d_l, recovered).expect("unstack shape"))
}

/// Predicted weight for one ordered pair of recovered node embeddings:
/// sigmoid(U2 * relu(U1 * concat(h_i, h_j))). Always strictly inside (0, 1).
pub fn predict_edge(h_i: &[f64], h_j: &[f64], params: &DecoderParams) -> Result<f64, ModelError> {
    Ok(predict_edge_with_hidden(h_i, h_j, params)?.0)
}

/// As `predict_edge` but also returns the post-relu hidden layer, which
/// backpropagation needs.
pub(crate) fn predict_edge_with_hidden(
    h_i: &[f64],
    h_j: &[f64],
    params: &DecoderParams,
) -> Result<(f64, Vec<f64>), ModelError> {
    if h_i.len() + h_j.len() != params.u_dec1.value.cols() {
        return Err(ModelError::Shape(format!(
            "edge head expects {} inputs, got {}",
            params.u_dec1.value.cols(),
            h_i.len() + h_j.len()
        )));
    }
    if params.u_dec2.value.shape() != (1, params.u_dec1.value.rows()) {
        return Err(ModelError::Shape(format!(
            "edge output layer is {:?}, expected (1, {})",
            params.u_dec2.value.shape(),
            params.u_dec1.value.rows()
        )));
    }
    let mut cat = Vec::with_capacity(h_i.len() + h_j.len());
    cat.extend_from_slice(h_i);
    cat.extend_from_slice(h_j);
    let mut hidden = params.u_dec1.value.matvec(&cat);
    for v in &mut hidden {
        *v = v.max(0.0);
    }
    let logit: f64 = params
        .u_dec2
        .value
        .row(0)
        .iter()
        .zip(&hidden)
        .map(|(u, h)| u * h)
        .sum();
    Ok((sigmoid(logit), hidden))
}

/// Decodes node embeddings and predicts the weight of each queried ordered
/// pair, in query order.
pub fn reconstruct(
    h_g: &[f64],
    ctx: &ContextVectors,
    queries: &[(usize, usize)],
    params: &DecoderParams,
    variant: ModelVariant,
) -> Result<Vec<f64>, ModelError> {
    let nodes = decode_nodes(h_g, ctx, params, variant)?;
    let n = nodes.rows();
    let mut out = Vec::with_capacity(queries.len());
    for &(i, j) in queries {
        if i >= n || j >= n {
            return Err(ModelError::QueryOutOfRange {
                origin: i,
                dest: j,
                nodes: n,
            });
        }
        out.push(predict_edge(nodes.row(i), nodes.row(j), params)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::GraphLayers;
    use crate::model::{ModelDims, ModelParams};
    use crate::nn_core::RngStream;

    fn small_model(n: usize, seed: u64) -> ModelParams {
        let dims = ModelDims {
            node_count: n,
            feature_dim: 4,
            sage_dims: vec![6, 4],
            d_hour: 3,
            d_week: 3,
            d_g: 5,
            d_e: 4,
        };
        ModelParams::init(dims, &mut RngStream::new(seed)).unwrap()
    }

    fn ctx(d: usize, fill_h: f64, fill_w: f64) -> ContextVectors {
        ContextVectors {
            hour: vec![fill_h; d],
            week: vec![fill_w; d],
        }
    }

    #[test]
    fn decoder_input_layout_and_zero_substitution() {
        let c = ContextVectors {
            hour: vec![1.0, 2.0],
            week: vec![3.0],
        };
        let with = decoder_input(&[9.0], &c, ModelVariant::full());
        assert_eq!(with, vec![9.0, 1.0, 2.0, 3.0]);
        let without = decoder_input(&[9.0], &c, ModelVariant::context_free_decoder());
        assert_eq!(without, vec![9.0, 0.0, 0.0, 0.0]);
        assert_eq!(with.len(), without.len());
    }

    #[test]
    fn decode_nodes_unstacks_hand_example() {
        // u_recover is 4x2 mapping (1, 2): rows produce 1+2k for k = 0..3,
        // with one negative row clipped by relu.
        let mut u = DenseMatrix::zeros(4, 2);
        for k in 0..4 {
            u.row_mut(k).copy_from_slice(&[1.0, k as f64]);
        }
        u.row_mut(3).copy_from_slice(&[-1.0, 0.0]);
        let params = DecoderParams {
            u_recover: Param::new("r", u),
            u_dec1: Param::new("d1", DenseMatrix::zeros(3, 4)),
            u_dec2: Param::new("d2", DenseMatrix::zeros(1, 3)),
        };
        let c = ContextVectors {
            hour: vec![2.0],
            week: vec![],
        };
        let nodes = decode_nodes(&[1.0], &c, &params, ModelVariant::full()).unwrap();
        assert_eq!(nodes.shape(), (2, 2));
        assert_eq!(nodes.row(0), &[1.0, 3.0]);
        assert_eq!(nodes.row(1), &[5.0, 0.0]);
    }

    #[test]
    fn predict_edge_hand_example() {
        // U1 = [[1, -1]], U2 = [[2]]: logit = 2 * relu(h_i - h_j).
        let params = DecoderParams {
            u_recover: Param::new("r", DenseMatrix::zeros(2, 1)),
            u_dec1: Param::new("d1", DenseMatrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()),
            u_dec2: Param::new("d2", DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap()),
        };
        let w = predict_edge(&[1.5], &[0.5], &params).unwrap();
        assert!((w - sigmoid(2.0)).abs() < 1e-15);
        // Negative pre-activation clips to zero, so the output is sigmoid(0).
        let w = predict_edge(&[0.5], &[1.5], &params).unwrap();
        assert_eq!(w, 0.5);
    }

    #[test]
    fn predict_edge_is_ordered() {
        let model = small_model(3, 17);
        let a = predict_edge(&[0.3, 0.1, 0.9, 0.0], &[0.2, 0.8, 0.0, 0.4], &model.decoder).unwrap();
        let b = predict_edge(&[0.2, 0.8, 0.0, 0.4], &[0.3, 0.1, 0.9, 0.0], &model.decoder).unwrap();
        assert_ne!(a, b, "direction must matter for asymmetric travel times");
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        let model = small_model(3, 23);
        let c = ctx(3, 0.4, -0.2);
        let queries: Vec<(usize, usize)> =
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let preds = reconstruct(
            &[0.5, 0.1, 0.0, 0.7, 0.2],
            &c,
            &queries,
            &model.decoder,
            ModelVariant::full(),
        )
        .unwrap();
        assert_eq!(preds.len(), 9);
        for p in preds {
            assert!(p > 0.0 && p < 1.0, "prediction {p} outside (0,1)");
        }
    }

    #[test]
    fn reconstruct_composes_decode_and_predict() {
        let model = small_model(3, 29);
        let c = ctx(3, 0.4, -0.2);
        let h_g = [0.5, 0.1, 0.0, 0.7, 0.2];
        let nodes = decode_nodes(&h_g, &c, &model.decoder, ModelVariant::full()).unwrap();
        let direct = predict_edge(nodes.row(1), nodes.row(2), &model.decoder).unwrap();
        let via = reconstruct(&h_g, &c, &[(1, 2)], &model.decoder, ModelVariant::full()).unwrap();
        assert_eq!(via, vec![direct]);
    }

    #[test]
    fn context_free_decoder_ignores_context_values() {
        let model = small_model(3, 31);
        let variant = ModelVariant::context_free_decoder();
        let h_g = [0.5, 0.1, 0.0, 0.7, 0.2];
        let a = reconstruct(&h_g, &ctx(3, 1.0, 2.0), &[(0, 1)], &model.decoder, variant).unwrap();
        let b = reconstruct(
            &h_g,
            &ctx(3, -5.0, 0.25),
            &[(0, 1)],
            &model.decoder,
            variant,
        )
        .unwrap();
        assert_eq!(a, b);
        let full = reconstruct(
            &h_g,
            &ctx(3, 1.0, 2.0),
            &[(0, 1)],
            &model.decoder,
            ModelVariant::full(),
        )
        .unwrap();
        assert_ne!(a, full);
    }

    #[test]
    fn query_out_of_range_is_an_error() {
        let model = small_model(3, 37);
        let err = reconstruct(
            &[0.5, 0.1, 0.0, 0.7, 0.2],
            &ctx(3, 0.0, 0.0),
            &[(0, 3)],
            &model.decoder,
            ModelVariant::full(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ModelError::QueryOutOfRange {
                origin: 0,
                dest: 3,
                nodes: 3
            }
        ));
    }

    #[test]
    fn degenerate_variant_rejected() {
        let model = small_model(2, 41);
        let bad = ModelVariant {
            use_context: false,
            graph_layers: GraphLayers::Disabled,
            context_in_decoder: true,
        };
        let err = decode_nodes(&[0.0; 5], &ctx(3, 0.0, 0.0), &model.decoder, bad).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateVariant));
    }
}
