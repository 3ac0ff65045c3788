//! Whole-model parameter container: construction, canonical parameter
//! ordering, and flat views used by the optimizer and by finite-difference
//! gradient checks.
//!
//! Canonical parameter order (everything that iterates parameters agrees on
//! it): encoder.sage.0 .. encoder.sage.{L-1}, encoder.hour_table,
//! encoder.week_table, encoder.u_graph, decoder.u_recover, decoder.u_dec1,
//! decoder.u_dec2.

use crate::decoder::DecoderParams;
use crate::encoder::EncoderParams;
use crate::nn_core::{DenseMatrix, NnError, Param, RngStream};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;
pub const DAYS_PER_WEEK: usize = 7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("snapshot has {snapshot} nodes but the model expects {model}")]
    NodeCountMismatch { snapshot: usize, model: usize },
    #[error("model variant disables both the context path and the graph path")]
    DegenerateVariant,
    #[error("edge query ({origin}, {dest}) out of range for {nodes} nodes")]
    QueryOutOfRange {
        origin: usize,
        dest: usize,
        nodes: usize,
    },
    #[error("loss needs at least one target edge")]
    EmptyTargets,
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("parameter {index} is {found} but {expected} was expected")]
    ParamMismatch {
        index: usize,
        found: String,
        expected: String,
    },
}

/// Architecture sizes. `sage_dims` lists the output width of each
/// message-passing layer; the last entry is the node embedding width d_L.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub node_count: usize,
    pub feature_dim: usize,
    pub sage_dims: Vec<usize>,
    pub d_hour: usize,
    pub d_week: usize,
    pub d_g: usize,
    pub d_e: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidDims(msg));
        if self.node_count < 2 {
            return bad(format!(
                "node_count must be at least 2, got {}",
                self.node_count
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.sage_dims.is_empty() || self.sage_dims.iter().any(|&d| d == 0) {
            return bad(format!(
                "sage_dims must be non-empty and positive, got {:?}",
                self.sage_dims
            ));
        }
        for (name, v) in [
            ("d_hour", self.d_hour),
            ("d_week", self.d_week),
            ("d_g", self.d_g),
            ("d_e", self.d_e),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Node embedding width after the last message-passing layer.
    pub fn d_l(&self) -> usize {
        *self.sage_dims.last().expect("validated non-empty")
    }

    /// Input width of the graph-level dense map.
    pub fn graph_input_dim(&self) -> usize {
        self.node_count * self.d_l() + self.d_hour + self.d_week
    }

    /// Input width of the decoder recovery map.
    pub fn decoder_input_dim(&self) -> usize {
        self.d_g + self.d_hour + self.d_week
    }
}

/// All model weights plus the dimensions they were built for.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    dims: ModelDims,
}

fn xavier_uniform(name: &str, rows: usize, cols: usize, rng: &mut RngStream) -> Param {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.uniform_in(-bound, bound);
    }
    Param::new(name, m)
}

fn standard_normal(name: &str, rows: usize, cols: usize, rng: &mut RngStream) -> Param {
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.normal(0.0, 1.0);
    }
    Param::new(name, m)
}

impl ModelParams {
    /// Fresh weights: dense maps use uniform(-b, b) with b = sqrt(6 / (rows +
    /// cols)); the hour and week embedding tables use standard normal draws.
    /// Draw order follows the canonical parameter order, row-major per
    /// matrix, so a given seed always produces the same model.
    pub fn init(dims: ModelDims, rng: &mut RngStream) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut layer_inputs = vec![dims.feature_dim];
        layer_inputs.extend(&dims.sage_dims[..dims.sage_dims.len() - 1]);
        let sage_layers: Vec<Param> = layer_inputs
            .iter()
            .zip(&dims.sage_dims)
            .enumerate()
            .map(|(l, (&d_in, &d_out))| {
                xavier_uniform(&format!("encoder.sage.{l}"), d_out, 2 * d_in, rng)
            })
            .collect();
        let hour_table = standard_normal("encoder.hour_table", HOURS_PER_DAY, dims.d_hour, rng);
        let week_table = standard_normal("encoder.week_table", DAYS_PER_WEEK, dims.d_week, rng);
        let u_graph = xavier_uniform("encoder.u_graph", dims.d_g, dims.graph_input_dim(), rng);
        let u_recover = xavier_uniform(
            "decoder.u_recover",
            dims.node_count * dims.d_l(),
            dims.decoder_input_dim(),
            rng,
        );
        let u_dec1 = xavier_uniform("decoder.u_dec1", dims.d_e, 2 * dims.d_l(), rng);
        let u_dec2 = xavier_uniform("decoder.u_dec2", 1, dims.d_e, rng);
        Ok(ModelParams {
            encoder: EncoderParams {
                sage_layers,
                hour_table,
                week_table,
                u_graph,
            },
            decoder: DecoderParams {
                u_recover,
                u_dec1,
                u_dec2,
            },
            dims,
        })
    }

    /// Expected (name, shape) pairs in canonical order for these dims.
    pub fn expected_layout(dims: &ModelDims) -> Vec<(String, (usize, usize))> {
        let mut layer_inputs = vec![dims.feature_dim];
        layer_inputs.extend(&dims.sage_dims[..dims.sage_dims.len() - 1]);
        let mut out: Vec<(String, (usize, usize))> = layer_inputs
            .iter()
            .zip(&dims.sage_dims)
            .enumerate()
            .map(|(l, (&d_in, &d_out))| (format!("encoder.sage.{l}"), (d_out, 2 * d_in)))
            .collect();
        out.push(("encoder.hour_table".into(), (HOURS_PER_DAY, dims.d_hour)));
        out.push(("encoder.week_table".into(), (DAYS_PER_WEEK, dims.d_week)));
        out.push(("encoder.u_graph".into(), (dims.d_g, dims.graph_input_dim())));
        out.push((
            "decoder.u_recover".into(),
            (dims.node_count * dims.d_l(), dims.decoder_input_dim()),
        ));
        out.push(("decoder.u_dec1".into(), (dims.d_e, 2 * dims.d_l())));
        out.push(("decoder.u_dec2".into(), (1, dims.d_e)));
        out
    }

    /// Assembles a model from deserialized parts, verifying every parameter
    /// name and shape against the canonical layout for `dims`.
    pub fn from_parts(
        encoder: EncoderParams,
        decoder: DecoderParams,
        dims: ModelDims,
    ) -> Result<Self, ModelError> {
        dims.validate()?;
        let model = ModelParams {
            encoder,
            decoder,
            dims,
        };
        let expected = Self::expected_layout(&model.dims);
        let actual = model.params();
        if actual.len() != expected.len() {
            return Err(ModelError::Shape(format!(
                "model has {} parameters, layout expects {}",
                actual.len(),
                expected.len()
            )));
        }
        for (index, (p, (name, shape))) in actual.iter().zip(&expected).enumerate() {
            if &p.name != name || p.value.shape() != *shape {
                return Err(ModelError::ParamMismatch {
                    index,
                    found: format!("{} {:?}", p.name, p.value.shape()),
                    expected: format!("{name} {shape:?}"),
                });
            }
        }
        Ok(model)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.encoder.sage_layers.iter().collect();
        out.extend([
            &self.encoder.hour_table,
            &self.encoder.week_table,
            &self.encoder.u_graph,
            &self.decoder.u_recover,
            &self.decoder.u_dec1,
            &self.decoder.u_dec2,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.encoder.sage_layers.iter_mut().collect();
        out.extend([
            &mut self.encoder.hour_table,
            &mut self.encoder.week_table,
            &mut self.encoder.u_graph,
            &mut self.decoder.u_recover,
            &mut self.decoder.u_dec1,
            &mut self.decoder.u_dec2,
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.encoder.sage_layers.len() + 6
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total number of scalar weights.
    pub fn total_len(&self) -> usize {
        self.params().iter().map(|p| p.value.data().len()).sum()
    }

    /// All weights as one flat vector, canonical order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for p in self.params() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// All gradients as one flat vector aligned with `flatten`.
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for p in self.params() {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    /// Overwrites all weights from a flat vector produced by `flatten`.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.total_len() {
            return Err(ModelError::Shape(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let len = p.value.data().len();
            p.value
                .data_mut()
                .copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Checks that `other` has identical parameter names and shapes; the
    /// error pinpoints the first mismatched parameter.
    pub fn validate_against(&self, other: &ModelParams) -> Result<(), ModelError> {
        let a = self.params();
        let b = other.params();
        if a.len() != b.len() {
            return Err(ModelError::Shape(format!(
                "parameter count mismatch: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        for (index, (pa, pb)) in a.iter().zip(&b).enumerate() {
            if pa.name != pb.name || pa.value.shape() != pb.value.shape() {
                return Err(ModelError::ParamMismatch {
                    index,
                    found: format!("{} {:?}", pb.name, pb.value.shape()),
                    expected: format!("{} {:?}", pa.name, pa.value.shape()),
                });
            }
        }
        Ok(())
    }
}

/// Gradient accumulator shaped like the model, canonical order. Backward
/// passes add into it; the trainer folds it into `Param::grad`.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    mats: Vec<DenseMatrix>,
    n_layers: usize,
}

impl GradBuffer {
    pub fn zeros_like(model: &ModelParams) -> Self {
        GradBuffer {
            mats: model
                .params()
                .iter()
                .map(|p| DenseMatrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
            n_layers: model.encoder.sage_layers.len(),
        }
    }

    pub fn sage(&mut self, layer: usize) -> &mut DenseMatrix {
        debug_assert!(layer < self.n_layers);
        &mut self.mats[layer]
    }

    pub fn hour_table(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers]
    }

    pub fn week_table(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers + 1]
    }

    pub fn u_graph(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers + 2]
    }

    pub fn u_recover(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers + 3]
    }

    pub fn u_dec1(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers + 4]
    }

    pub fn u_dec2(&mut self) -> &mut DenseMatrix {
        &mut self.mats[self.n_layers + 5]
    }

    pub fn mats(&self) -> &[DenseMatrix] {
        &self.mats
    }

    /// Adds another buffer of identical shape into this one.
    pub fn merge(&mut self, other: &GradBuffer) {
        debug_assert_eq!(self.mats.len(), other.mats.len());
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.mats {
            m.scale(factor);
        }
    }

    /// Adds the buffer into the model's `Param::grad` slots.
    pub fn apply_to(&self, model: &mut ModelParams) {
        for (p, g) in model.params_mut().into_iter().zip(&self.mats) {
            p.grad.add_assign(g);
        }
    }
}
