//! Minibatch training with edge-dropout regularization, stepped learning
//! rate decay, early stopping on a chronological-tail validation split, and
//! bit-exact resumable checkpoints.
//!
//! Determinism contract: one master random stream drives parameter
//! initialization, per-epoch shuffles, and one derived child stream per
//! snapshot in batch order. Workers only touch their own child stream and
//! results are reduced in batch order, so thread count never changes the
//! trained model. Resuming from a checkpoint continues the master stream
//! mid-sequence and reproduces an uninterrupted run bit for bit.

use crate::backprop::{snapshot_loss, snapshot_loss_and_grads};
use crate::bytesio as io;
use crate::encoder::{GraphLayers, ModelVariant};
use crate::model::{GradBuffer, ModelDims, ModelError, ModelParams};
use crate::nn_core::{AdamHyper, AdamState, DenseMatrix, Mode, Param, RngState, RngStream};
use crate::od_graph::{Dataset, Edge, ODSnapshot, FEATURE_DIM};
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training data problem: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// All training hyperparameters. `sage_dims` lists encoder layer widths
/// (d_1 .. d_L); the decoder edge-head width defaults to d_L.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub sage_dims: Vec<usize>,
    pub d_hour: usize,
    pub d_week: usize,
    pub d_g: usize,
    pub d_e: usize,
    pub p_drop: f64,
    pub p_edge_drop: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_frac: f64,
    pub patience: usize,
    pub seed: u64,
    pub variant: ModelVariant,
}

impl TrainConfig {
    /// Uber Movement scale defaults.
    pub fn uber() -> Self {
        TrainConfig {
            sage_dims: vec![300, 150],
            d_hour: 100,
            d_week: 100,
            d_g: 150,
            d_e: 150,
            p_drop: 0.2,
            p_edge_drop: 0.2,
            lr: 5e-5,
            lr_decay: 0.5,
            lr_decay_every: 50,
            epochs: 150,
            batch_size: 10,
            val_frac: 0.1,
            patience: 10,
            seed: 1,
            variant: ModelVariant::full(),
        }
    }

    /// NYC taxi scale defaults.
    pub fn nyc() -> Self {
        TrainConfig {
            sage_dims: vec![150, 50],
            d_g: 50,
            d_e: 50,
            lr: 1e-3,
            lr_decay_every: 20,
            ..Self::uber()
        }
    }

    /// Chicago taxi scale defaults.
    pub fn chicago() -> Self {
        TrainConfig {
            sage_dims: vec![300, 25],
            d_hour: 200,
            d_week: 200,
            d_g: 25,
            d_e: 25,
            p_drop: 0.1,
            p_edge_drop: 0.1,
            lr: 1e-3,
            lr_decay_every: 20,
            ..Self::uber()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "uber" => Some(Self::uber()),
            "nyc" => Some(Self::nyc()),
            "chicago" => Some(Self::chicago()),
            _ => None,
        }
    }

    pub fn validate(&self) -> TrainResult<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        for (name, p) in [("p_drop", self.p_drop), ("p_edge_drop", self.p_edge_drop)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            ));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad(format!(
                "val_frac must lie in (0, 1), got {}",
                self.val_frac
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        self.variant.validate()?;
        // Shared width checks live in ModelDims; node_count is a placeholder.
        self.dims_for(2).validate()?;
        Ok(())
    }

    pub fn dims_for(&self, node_count: usize) -> ModelDims {
        ModelDims {
            node_count,
            feature_dim: FEATURE_DIM,
            sage_dims: self.sage_dims.clone(),
            d_hour: self.d_hour,
            d_week: self.d_week,
            d_g: self.d_g,
            d_e: self.d_e,
        }
    }

    /// Stepped decay: lr(epoch) = lr * decay^floor(epoch / every), epochs
    /// counted from zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Keeps each edge independently with probability 1 - p, in canonical edge
/// order. The caller keeps the full original edge list as the prediction
/// target, so dropped edges are exactly the masked reconstruction targets.
pub fn edge_dropout(snapshot: &ODSnapshot, p: f64, rng: &mut RngStream) -> TrainResult<ODSnapshot> {
    if !(0.0..1.0).contains(&p) {
        return Err(TrainError::Config(format!(
            "edge dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(drop_edges(snapshot, p, rng))
}

fn drop_edges(snapshot: &ODSnapshot, p: f64, rng: &mut RngStream) -> ODSnapshot {
    if p == 0.0 {
        return snapshot.clone();
    }
    let kept: Vec<Edge> = snapshot
        .edges()
        .iter()
        .filter(|_| rng.uniform() >= p)
        .cloned()
        .collect();
    snapshot
        .with_edges(kept)
        .expect("subset of already-valid edges")
}

/// Chronological split: the last round(val_frac * len) snapshots validate.
pub(crate) fn split_point(len: usize, val_frac: f64) -> TrainResult<usize> {
    let val = (val_frac * len as f64).round() as usize;
    if val == 0 || val >= len {
        return Err(TrainError::Data(format!(
            "validation fraction {val_frac} of {len} snapshots leaves {val} for validation and {} for training",
            len - val
        )));
    }
    Ok(len - val)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// CSV with header; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.val_loss
            ));
        }
        out
    }
}

/// Resumable training state: current and best-so-far weights, optimizer
/// moments, the master random stream, and per-epoch history.
pub struct Trainer {
    config: TrainConfig,
    model: ModelParams,
    best: ModelParams,
    adam: AdamState,
    rng: RngStream,
    epoch: usize,
    rows: Vec<EpochRow>,
    best_epoch: usize,
    best_val: f64,
    since_improve: usize,
    stopped: bool,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> TrainResult<Self> {
        config.validate()?;
        split_point(dataset.snapshots().len(), config.val_frac)?;
        let dims = config.dims_for(dataset.node_count());
        let mut rng = RngStream::new(config.seed);
        let model = ModelParams::init(dims, &mut rng)?;
        let adam = AdamState::for_params(&model.params(), AdamHyper::with_lr(config.lr));
        let best = model.clone();
        Ok(Trainer {
            config,
            model,
            best,
            adam,
            rng,
            epoch: 0,
            rows: Vec::new(),
            best_epoch: 0,
            best_val: f64::INFINITY,
            since_improve: 0,
            stopped: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Weights as of the latest completed epoch.
    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    /// Weights of the best-validation epoch so far (the initial weights if
    /// no epoch has run).
    pub fn best_model(&self) -> &ModelParams {
        &self.best
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn report(&self) -> TrainReport {
        let has_best = self.best_val.is_finite();
        TrainReport {
            rows: self.rows.clone(),
            best_epoch: has_best.then_some(self.best_epoch),
            best_val_loss: has_best.then_some(self.best_val),
            stopped_early: self.stopped,
        }
    }

    fn check_dataset(&self, dataset: &Dataset) -> TrainResult<()> {
        if dataset.node_count() != self.model.dims().node_count {
            return Err(TrainError::Data(format!(
                "dataset has {} zones but the model was built for {}",
                dataset.node_count(),
                self.model.dims().node_count
            )));
        }
        Ok(())
    }

    /// Runs up to the configured epoch budget.
    pub fn train(&mut self, dataset: &Dataset) -> TrainResult<TrainReport> {
        self.train_until(dataset, self.config.epochs)
    }

    /// Runs epochs until `total_epochs` have completed overall, the
    /// validation loss stalls for `patience` epochs, or nothing is left to
    /// do. Safe to call repeatedly with growing budgets.
    pub fn train_until(
        &mut self,
        dataset: &Dataset,
        total_epochs: usize,
    ) -> TrainResult<TrainReport> {
        self.check_dataset(dataset)?;
        let snaps = dataset.snapshots();
        let train_len = split_point(snaps.len(), self.config.val_frac)?;
        let val_idx: Vec<usize> = (train_len..snaps.len()).collect();
        let features = dataset.feature_matrix();
        let variant = self.config.variant;
        let (p_drop, p_edge) = (self.config.p_drop, self.config.p_edge_drop);

        while self.epoch < total_epochs && !self.stopped {
            self.adam.set_lr(self.config.lr_at(self.epoch));
            let mut order: Vec<usize> = (0..train_len).collect();
            self.rng.shuffle(&mut order);
            let mut loss_sum = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                // Children are drawn from the master stream in batch order,
                // so parallel execution cannot perturb the run.
                let jobs: Vec<(usize, RngStream)> =
                    batch.iter().map(|&i| (i, self.rng.derive())).collect();
                let model = &self.model;
                let feats = &features;
                let results: Result<Vec<(f64, GradBuffer)>, ModelError> = jobs
                    .into_par_iter()
                    .map(|(i, mut child)| {
                        let input = drop_edges(&snaps[i], p_edge, &mut child);
                        let mut grads = GradBuffer::zeros_like(model);
                        let loss = snapshot_loss_and_grads(
                            model,
                            &input,
                            snaps[i].edges(),
                            feats,
                            variant,
                            p_drop,
                            Mode::Train,
                            &mut child,
                            1.0,
                            &mut grads,
                        )?;
                        Ok((loss, grads))
                    })
                    .collect();
                let results = results?;
                let mut merged = GradBuffer::zeros_like(&self.model);
                for (loss, grads) in &results {
                    loss_sum += loss;
                    merged.merge(grads);
                }
                // Batch loss is the mean of per-graph losses.
                merged.scale(1.0 / results.len() as f64);
                merged.apply_to(&mut self.model);
                self.adam
                    .step(&mut self.model.params_mut())
                    .map_err(ModelError::from)?;
            }
            let train_loss = loss_sum / train_len as f64;
            let val_loss = mean_eval_loss(&self.model, snaps, &val_idx, &features, variant)?;
            self.rows.push(EpochRow {
                epoch: self.epoch,
                lr: self.adam.hyper.lr,
                train_loss,
                val_loss,
            });
            if val_loss < self.best_val {
                self.best_val = val_loss;
                self.best_epoch = self.epoch;
                self.best = self.model.clone();
                self.since_improve = 0;
            } else {
                self.since_improve += 1;
                if self.since_improve >= self.config.patience {
                    self.stopped = true;
                }
            }
            self.epoch += 1;
        }
        Ok(self.report())
    }
}

/// Mean eval-mode loss of each indexed snapshot against its own edges,
/// summed in index order for determinism.
fn mean_eval_loss(
    model: &ModelParams,
    snaps: &[ODSnapshot],
    idx: &[usize],
    features: &DenseMatrix,
    variant: ModelVariant,
) -> Result<f64, ModelError> {
    let losses: Result<Vec<f64>, ModelError> = idx
        .par_iter()
        .map(|&i| {
            let mut rng = RngStream::new(0);
            snapshot_loss(
                model,
                &snaps[i],
                snaps[i].edges(),
                features,
                variant,
                0.0,
                Mode::Eval,
                &mut rng,
            )
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

// Checkpoint container. Little-endian, fixed field order, no padding;
// trailing bytes are rejected so truncation or concatenation cannot pass.
const CKP_MAGIC: &[u8; 8] = b"CGAECKP1";
const CKP_VERSION: u32 = 1;

fn graph_layers_code(g: GraphLayers) -> u8 {
    match g {
        GraphLayers::WeightedMean => 0,
        GraphLayers::PlainMean => 1,
        GraphLayers::FullyConnected => 2,
        GraphLayers::Disabled => 3,
    }
}

fn graph_layers_from_code(code: u8) -> TrainResult<GraphLayers> {
    Ok(match code {
        0 => GraphLayers::WeightedMean,
        1 => GraphLayers::PlainMean,
        2 => GraphLayers::FullyConnected,
        3 => GraphLayers::Disabled,
        other => {
            return Err(TrainError::Corrupt(format!(
                "unknown graph-layers code {other}"
            )))
        }
    })
}

fn write_usize<W: std::io::Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    io::write_u32(w, u32::try_from(v).expect("field fits in u32"))
}

fn read_usize<R: std::io::Read>(r: &mut R) -> std::io::Result<usize> {
    Ok(io::read_u32(r)? as usize)
}

fn write_params<W: std::io::Write>(w: &mut W, model: &ModelParams) -> std::io::Result<()> {
    write_usize(w, model.params().len())?;
    for p in model.params() {
        io::write_str(w, &p.name)?;
        io::write_matrix(w, &p.value)?;
    }
    Ok(())
}

fn read_params<R: std::io::Read>(r: &mut R, dims: &ModelDims) -> TrainResult<ModelParams> {
    let count = read_usize(r)?;
    let expected = dims.sage_dims.len() + 6;
    if count != expected {
        return Err(TrainError::Corrupt(format!(
            "checkpoint lists {count} parameters, dims imply {expected}"
        )));
    }
    let mut mats: Vec<(String, DenseMatrix)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = io::read_str(r)?;
        let m = io::read_matrix(r)?;
        mats.push((name, m));
    }
    let n_layers = dims.sage_dims.len();
    let mut it = mats.into_iter();
    let sage_layers: Vec<Param> = (0..n_layers)
        .map(|_| it.next().map(|(n, m)| Param::new(&n, m)).expect("counted"))
        .collect();
    let rest: Vec<Param> = it.map(|(n, m)| Param::new(&n, m)).collect();
    let [hour, week, u_graph, u_recover, u_dec1, u_dec2]: [Param; 6] = rest
        .try_into()
        .map_err(|_| TrainError::Corrupt("parameter list truncated".into()))?;
    let model = ModelParams::from_parts(
        crate::encoder::EncoderParams {
            sage_layers,
            hour_table: hour,
            week_table: week,
            u_graph,
        },
        crate::decoder::DecoderParams {
            u_recover,
            u_dec1,
            u_dec2,
        },
        dims.clone(),
    )
    .map_err(|e| TrainError::Corrupt(format!("checkpoint parameters do not match dims: {e}")))?;
    Ok(model)
}

impl Trainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CKP_MAGIC);
        io::write_u32(&mut w, CKP_VERSION).expect("vec write");
        let c = &self.config;
        write_usize(&mut w, c.sage_dims.len()).unwrap();
        for &d in &c.sage_dims {
            write_usize(&mut w, d).unwrap();
        }
        for &d in &[c.d_hour, c.d_week, c.d_g, c.d_e] {
            write_usize(&mut w, d).unwrap();
        }
        for &f in &[c.p_drop, c.p_edge_drop, c.lr, c.lr_decay, c.val_frac] {
            io::write_f64(&mut w, f).unwrap();
        }
        for &d in &[c.lr_decay_every, c.epochs, c.batch_size, c.patience] {
            write_usize(&mut w, d).unwrap();
        }
        io::write_u64(&mut w, c.seed).unwrap();
        io::write_u8(&mut w, c.variant.use_context as u8).unwrap();
        io::write_u8(&mut w, graph_layers_code(c.variant.graph_layers)).unwrap();
        io::write_u8(&mut w, c.variant.context_in_decoder as u8).unwrap();

        let dims = self.model.dims();
        write_usize(&mut w, dims.node_count).unwrap();
        write_usize(&mut w, dims.feature_dim).unwrap();

        write_params(&mut w, &self.model).unwrap();
        write_params(&mut w, &self.best).unwrap();

        io::write_u64(&mut w, self.adam.step_count()).unwrap();
        let h = self.adam.hyper;
        for &f in &[h.lr, h.beta1, h.beta2, h.eps] {
            io::write_f64(&mut w, f).unwrap();
        }
        let (m, v) = self.adam.moments();
        write_usize(&mut w, m.len()).unwrap();
        for mat in m.iter().chain(v) {
            io::write_matrix(&mut w, mat).unwrap();
        }

        let state = self.rng.state();
        io::write_u64(&mut w, state.seed).unwrap();
        io::write_u128(&mut w, state.word_pos).unwrap();

        write_usize(&mut w, self.epoch).unwrap();
        io::write_u8(&mut w, self.stopped as u8).unwrap();
        write_usize(&mut w, self.since_improve).unwrap();
        write_usize(&mut w, self.best_epoch).unwrap();
        io::write_f64(&mut w, self.best_val).unwrap();

        write_usize(&mut w, self.rows.len()).unwrap();
        for row in &self.rows {
            write_usize(&mut w, row.epoch).unwrap();
            io::write_f64(&mut w, row.lr).unwrap();
            io::write_f64(&mut w, row.train_loss).unwrap();
            io::write_f64(&mut w, row.val_loss).unwrap();
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> TrainResult<Self> {
        let mut r = bytes;
        let magic = io::read_exact_array::<_, 8>(&mut r)?;
        if &magic != CKP_MAGIC {
            return Err(TrainError::Corrupt(
                "bad magic, not a checkpoint file".into(),
            ));
        }
        let version = io::read_u32(&mut r)?;
        if version != CKP_VERSION {
            return Err(TrainError::Corrupt(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_layers = read_usize(&mut r)?;
        if n_layers == 0 || n_layers > 64 {
            return Err(TrainError::Corrupt(format!(
                "implausible layer count {n_layers}"
            )));
        }
        let sage_dims: Vec<usize> = (0..n_layers)
            .map(|_| read_usize(&mut r))
            .collect::<Result<_, _>>()?;
        let [d_hour, d_week, d_g, d_e] = [
            read_usize(&mut r)?,
            read_usize(&mut r)?,
            read_usize(&mut r)?,
            read_usize(&mut r)?,
        ];
        let [p_drop, p_edge_drop, lr, lr_decay, val_frac] = [
            io::read_f64(&mut r)?,
            io::read_f64(&mut r)?,
            io::read_f64(&mut r)?,
            io::read_f64(&mut r)?,
            io::read_f64(&mut r)?,
        ];
        let [lr_decay_every, epochs, batch_size, patience] = [
            read_usize(&mut r)?,
            read_usize(&mut r)?,
            read_usize(&mut r)?,
            read_usize(&mut r)?,
        ];
        let seed = io::read_u64(&mut r)?;
        let use_context = io::read_u8(&mut r)? != 0;
        let graph_layers = graph_layers_from_code(io::read_u8(&mut r)?)?;
        let context_in_decoder = io::read_u8(&mut r)? != 0;
        let config = TrainConfig {
            sage_dims,
            d_hour,
            d_week,
            d_g,
            d_e,
            p_drop,
            p_edge_drop,
            lr,
            lr_decay,
            lr_decay_every,
            epochs,
            batch_size,
            val_frac,
            patience,
            seed,
            variant: ModelVariant {
                use_context,
                graph_layers,
                context_in_decoder,
            },
        };
        config
            .validate()
            .map_err(|e| TrainError::Corrupt(format!("checkpoint config invalid: {e}")))?;

        let node_count = read_usize(&mut r)?;
        let feature_dim = read_usize(&mut r)?;
        let mut dims = config.dims_for(node_count);
        dims.feature_dim = feature_dim;
        dims.validate()
            .map_err(|e| TrainError::Corrupt(format!("checkpoint dims invalid: {e}")))?;

        let model = read_params(&mut r, &dims)?;
        let best = read_params(&mut r, &dims)?;

        let step = io::read_u64(&mut r)?;
        let hyper = AdamHyper {
            lr: io::read_f64(&mut r)?,
            beta1: io::read_f64(&mut r)?,
            beta2: io::read_f64(&mut r)?,
            eps: io::read_f64(&mut r)?,
        };
        let slot_count = read_usize(&mut r)?;
        if slot_count != model.params().len() {
            return Err(TrainError::Corrupt(format!(
                "optimizer tracks {slot_count} tensors, model has {}",
                model.params().len()
            )));
        }
        let mut m = Vec::with_capacity(slot_count);
        let mut v = Vec::with_capacity(slot_count);
        for _ in 0..slot_count {
            m.push(io::read_matrix(&mut r)?);
        }
        for _ in 0..slot_count {
            v.push(io::read_matrix(&mut r)?);
        }
        for (slot, p) in m.iter().chain(&v).zip(model.params().iter().cycle()) {
            if slot.shape() != p.value.shape() {
                return Err(TrainError::Corrupt(
                    "optimizer moment shape mismatch".into(),
                ));
            }
        }
        let adam = AdamState::from_parts(m, v, step, hyper);

        let rng_seed = io::read_u64(&mut r)?;
        let word_pos = io::read_u128(&mut r)?;
        let rng = RngStream::restore(RngState {
            seed: rng_seed,
            word_pos,
        });

        let epoch = read_usize(&mut r)?;
        let stopped = io::read_u8(&mut r)? != 0;
        let since_improve = read_usize(&mut r)?;
        let best_epoch = read_usize(&mut r)?;
        let best_val = io::read_f64(&mut r)?;

        let row_count = read_usize(&mut r)?;
        if row_count != epoch {
            return Err(TrainError::Corrupt(format!(
                "checkpoint reports {row_count} epoch rows but an epoch counter of {epoch}"
            )));
        }
        let mut rows = Vec::with_capacity(row_count);
        for _ in 0..row_count {
            rows.push(EpochRow {
                epoch: read_usize(&mut r)?,
                lr: io::read_f64(&mut r)?,
                train_loss: io::read_f64(&mut r)?,
                val_loss: io::read_f64(&mut r)?,
            });
        }
        if !r.is_empty() {
            return Err(TrainError::Corrupt(format!(
                "{} trailing bytes after checkpoint",
                r.len()
            )));
        }
        Ok(Trainer {
            config,
            model,
            best,
            adam,
            rng,
            epoch,
            rows,
            best_epoch,
            best_val,
            since_improve,
            stopped,
        })
    }

    pub fn save(&self, path: &Path) -> TrainResult<()> {
        io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> TrainResult<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::od_graph::{context_of, TimeContext, WeightScaler, ZoneFeatures};
    use chrono::NaiveDate;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            sage_dims: vec![8, 4],
            d_hour: 4,
            d_week: 4,
            d_g: 8,
            // The edge head needs slack beyond its 2 * d_L input width to
            // memorize; narrower heads plateau well above zero loss.
            d_e: 24,
            p_drop: 0.1,
            p_edge_drop: 0.1,
            lr: 5e-3,
            lr_decay: 0.5,
            lr_decay_every: 30,
            epochs: 12,
            batch_size: 4,
            val_frac: 0.15,
            patience: 50,
            seed: 9,
            variant: ModelVariant::full(),
        }
    }

    fn zone(id: &str, k: f64) -> ZoneFeatures {
        ZoneFeatures {
            zone_id: id.to_string(),
            bbox: [k, k, k + 1.0, k + 1.0],
            scaled_bbox: [k / 4.0, k / 4.0, (k + 1.0) / 5.0, (k + 1.0) / 5.0],
        }
    }

    /// A small dataset whose hourly snapshots repeat a fixed weight pattern,
    /// so the loss floor on memorization is near zero.
    fn toy_dataset(hours: usize) -> Dataset {
        let zones: Vec<ZoneFeatures> = (0..5).map(|i| zone(&format!("z{i}"), i as f64)).collect();
        let scaler = WeightScaler::from_bounds(1.0 / 600.0, 1.0 / 60.0).unwrap();
        let start = NaiveDate::from_ymd_opt(2021, 3, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let snapshots: Vec<ODSnapshot> = (0..hours)
            .map(|h| {
                let ts = start + chrono::Duration::hours(h as i64);
                let mut edges = Vec::new();
                for o in 0..5usize {
                    for d in 0..5usize {
                        if o != d && (o + 2 * d) % 3 != 0 {
                            let w = 0.2 + 0.6 * ((o * 5 + d) as f64 / 25.0);
                            edges.push(Edge {
                                origin: o,
                                dest: d,
                                weight: w,
                            });
                        }
                    }
                }
                ODSnapshot::new(ts, context_of(ts), 5, edges).unwrap()
            })
            .collect();
        Dataset::new(zones, scaler, snapshots).unwrap()
    }

    #[test]
    fn edge_dropout_zero_probability_is_identity_without_draws() {
        let data = toy_dataset(3);
        let snap = &data.snapshots()[0];
        let mut rng = RngStream::new(4);
        let before = rng.state();
        let out = edge_dropout(snap, 0.0, &mut rng).unwrap();
        assert_eq!(out.edges(), snap.edges());
        assert_eq!(rng.state(), before);
    }

    #[test]
    fn edge_dropout_keeps_a_subset_and_preserves_metadata() {
        let data = toy_dataset(3);
        let snap = &data.snapshots()[1];
        let mut rng = RngStream::new(4);
        let out = edge_dropout(snap, 0.5, &mut rng).unwrap();
        assert!(out.edges().len() < snap.edges().len());
        assert_eq!(out.context(), snap.context());
        assert_eq!(out.timestamp(), snap.timestamp());
        for e in out.edges() {
            assert!(snap
                .edges()
                .iter()
                .any(|o| (o.origin, o.dest) == (e.origin, e.dest)));
        }
        assert!(edge_dropout(snap, 1.0, &mut rng).is_err());
    }

    #[test]
    fn edge_dropout_rate_is_close_to_p_on_average() {
        let data = toy_dataset(1);
        let snap = &data.snapshots()[0];
        let mut rng = RngStream::new(11);
        let mut kept = 0usize;
        let trials = 2000;
        for _ in 0..trials {
            kept += edge_dropout(snap, 0.3, &mut rng).unwrap().edges().len();
        }
        let rate = kept as f64 / (trials * snap.edges().len()) as f64;
        assert!((rate - 0.7).abs() < 0.02, "keep rate {rate}");
    }

    #[test]
    fn split_point_rounds_and_rejects_degenerate_splits() {
        assert_eq!(split_point(100, 0.1).unwrap(), 90);
        assert_eq!(split_point(95, 0.1).unwrap(), 85); // round(9.5) = 10
        assert_eq!(split_point(10, 0.04).is_err(), true); // round(0.4) = 0
        assert!(split_point(3, 0.9).is_err()); // round(2.7) = 3 = len
        assert_eq!(split_point(3, 0.5).unwrap(), 1);
    }

    #[test]
    fn lr_schedule_is_exact_stepwise_decay() {
        let mut c = tiny_config();
        c.lr = 0.4;
        c.lr_decay = 0.5;
        c.lr_decay_every = 2;
        let lrs: Vec<f64> = (0..6).map(|e| c.lr_at(e)).collect();
        assert_eq!(lrs, vec![0.4, 0.4, 0.2, 0.2, 0.1, 0.1]);
    }

    #[test]
    fn training_memorizes_a_repetitive_dataset() {
        // Eight full days so every validation hour-of-day and day-of-week
        // also occurs in training; fresh context rows would otherwise feed
        // untrained noise into the validation decode.
        let data = toy_dataset(8 * 24);
        let config = TrainConfig {
            epochs: 150,
            lr: 5e-3,
            lr_decay_every: 50,
            ..tiny_config()
        };
        let mut trainer = Trainer::new(&data, config).unwrap();
        let report = trainer.train(&data).unwrap();
        assert!(!report.rows.is_empty() && report.rows.len() <= 150);
        let first = report.rows.first().unwrap().val_loss;
        let best = report.best_val_loss.unwrap();
        assert!(
            best < first * 0.2,
            "validation loss should fall by at least 5x on a memorizable set: first {first}, best {best}"
        );
        // Reported best epoch matches the row minimum.
        let min_row = report
            .rows
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap();
        assert_eq!(report.best_epoch.unwrap(), min_row.epoch);
        assert!((report.best_val_loss.unwrap() - min_row.val_loss).abs() == 0.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let data = toy_dataset(24);
        let run = || {
            let mut t = Trainer::new(
                &data,
                TrainConfig {
                    epochs: 4,
                    ..tiny_config()
                },
            )
            .unwrap();
            t.train(&data).unwrap();
            (t.model().flatten(), t.report())
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m1), bits(&m2));
        assert_eq!(r1, r2);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        // The batch reduction is ordered, so a single-thread pool must
        // reproduce the default pool bit for bit.
        let data = toy_dataset(24);
        let config = TrainConfig {
            epochs: 3,
            ..tiny_config()
        };
        let mut t1 = Trainer::new(&data, config.clone()).unwrap();
        t1.train(&data).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let m2 = single.install(|| {
            let mut t2 = Trainer::new(&data, config).unwrap();
            t2.train(&data).unwrap();
            t2.model().flatten()
        });
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t1.model().flatten()), bits(&m2));
    }

    #[test]
    fn resume_from_checkpoint_matches_uninterrupted_run() {
        let data = toy_dataset(24);
        let config = TrainConfig {
            epochs: 10,
            ..tiny_config()
        };

        let mut straight = Trainer::new(&data, config.clone()).unwrap();
        let full_report = straight.train_until(&data, 10).unwrap();

        let mut first = Trainer::new(&data, config).unwrap();
        first.train_until(&data, 5).unwrap();
        let bytes = first.to_bytes();
        let mut resumed = Trainer::from_bytes(&bytes).unwrap();
        let resumed_report = resumed.train_until(&data, 10).unwrap();

        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(
            bits(&straight.model().flatten()),
            bits(&resumed.model().flatten())
        );
        assert_eq!(
            bits(&straight.best_model().flatten()),
            bits(&resumed.best_model().flatten())
        );
        assert_eq!(full_report, resumed_report);
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let data = toy_dataset(24);
        let mut t = Trainer::new(
            &data,
            TrainConfig {
                epochs: 2,
                ..tiny_config()
            },
        )
        .unwrap();
        t.train(&data).unwrap();
        let bytes = t.to_bytes();
        let reloaded = Trainer::from_bytes(&bytes).unwrap();
        assert_eq!(reloaded.to_bytes(), bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let data = toy_dataset(24);
        let mut t = Trainer::new(
            &data,
            TrainConfig {
                epochs: 1,
                ..tiny_config()
            },
        )
        .unwrap();
        t.train(&data).unwrap();
        let bytes = t.to_bytes();
        assert!(Trainer::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(Trainer::from_bytes(&bad_magic).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Trainer::from_bytes(&trailing).is_err());
    }

    #[test]
    fn zero_epoch_budget_changes_nothing() {
        let data = toy_dataset(24);
        let mut t = Trainer::new(
            &data,
            TrainConfig {
                epochs: 0,
                ..tiny_config()
            },
        )
        .unwrap();
        let init = t.model().flatten();
        let report = t.train(&data).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.best_epoch, None);
        assert_eq!(t.model().flatten(), init);
        assert_eq!(t.best_model().flatten(), init);
    }

    #[test]
    fn early_stopping_halts_on_patience() {
        // lr = 0 means no parameter ever changes, so the validation loss is
        // exactly flat: first epoch sets the best, then patience runs out.
        let data = toy_dataset(24);
        let mut config = tiny_config();
        config.lr = 1e-30;
        config.patience = 3;
        config.epochs = 50;
        config.p_drop = 0.0;
        config.p_edge_drop = 0.0;
        let mut t = Trainer::new(&data, config).unwrap();
        let report = t.train(&data).unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.rows.len(), 4, "1 improving epoch + 3 stalled");
        // A later budget increase does not restart a stopped run.
        let again = t.train_until(&data, 60).unwrap();
        assert_eq!(again.rows.len(), 4);
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let data = toy_dataset(24);
        let mut t = Trainer::new(
            &data,
            TrainConfig {
                epochs: 1,
                ..tiny_config()
            },
        )
        .unwrap();
        let zones: Vec<ZoneFeatures> = (0..4).map(|i| zone(&format!("q{i}"), i as f64)).collect();
        let scaler = WeightScaler::from_bounds(1.0 / 600.0, 1.0 / 60.0).unwrap();
        let ts = NaiveDate::from_ymd_opt(2021, 3, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let snaps = vec![
            ODSnapshot::new(
                ts,
                context_of(ts),
                4,
                vec![Edge {
                    origin: 0,
                    dest: 1,
                    weight: 0.5,
                }],
            )
            .unwrap(),
            ODSnapshot::new(
                ts + chrono::Duration::hours(1),
                TimeContext::new(1, 0).unwrap(),
                4,
                vec![Edge {
                    origin: 1,
                    dest: 2,
                    weight: 0.5,
                }],
            )
            .unwrap(),
        ];
        let other = Dataset::new(zones, scaler, snaps).unwrap();
        assert!(matches!(t.train(&other), Err(TrainError::Data(_))));
    }

    #[test]
    fn report_csv_round_trips_floats_exactly() {
        let report = TrainReport {
            rows: vec![EpochRow {
                epoch: 0,
                lr: 5e-5,
                train_loss: 0.1 + 0.2,
                val_loss: 1.0 / 3.0,
            }],
            best_epoch: Some(0),
            best_val_loss: Some(1.0 / 3.0),
            stopped_early: false,
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,lr,train_loss,val_loss");
        let row = lines.next().unwrap();
        let parts: Vec<&str> = row.split(',').collect();
        assert_eq!(parts[0], "0");
        assert_eq!(parts[1].parse::<f64>().unwrap(), 5e-5);
        assert_eq!(
            parts[2].parse::<f64>().unwrap().to_bits(),
            (0.1f64 + 0.2).to_bits()
        );
        assert_eq!(
            parts[3].parse::<f64>().unwrap().to_bits(),
            (1.0f64 / 3.0).to_bits()
        );
    }

    #[test]
    fn profiles_match_published_settings() {
        let uber = TrainConfig::profile("uber").unwrap();
        assert_eq!(uber.sage_dims, vec![300, 150]);
        assert_eq!(
            (uber.d_hour, uber.d_week, uber.d_g, uber.d_e),
            (100, 100, 150, 150)
        );
        assert_eq!((uber.p_drop, uber.p_edge_drop), (0.2, 0.2));
        assert_eq!(
            (uber.lr, uber.lr_decay, uber.lr_decay_every),
            (5e-5, 0.5, 50)
        );
        assert_eq!(
            (uber.epochs, uber.batch_size, uber.val_frac, uber.patience),
            (150, 10, 0.1, 10)
        );
        let nyc = TrainConfig::profile("nyc").unwrap();
        assert_eq!(nyc.sage_dims, vec![150, 50]);
        assert_eq!(
            (nyc.d_hour, nyc.d_g, nyc.lr, nyc.lr_decay_every),
            (100, 50, 1e-3, 20)
        );
        let chicago = TrainConfig::profile("chicago").unwrap();
        assert_eq!(chicago.sage_dims, vec![300, 25]);
        assert_eq!(
            (chicago.d_hour, chicago.d_week, chicago.d_g),
            (200, 200, 25)
        );
        assert_eq!((chicago.p_drop, chicago.p_edge_drop), (0.1, 0.1));
        assert!(TrainConfig::profile("boston").is_none());
        for c in [uber, nyc, chicago] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for mutate in [
            |c: &mut TrainConfig| c.p_drop = 1.0,
            |c: &mut TrainConfig| c.p_edge_drop = -0.1,
            |c: &mut TrainConfig| c.lr = 0.0,
            |c: &mut TrainConfig| c.lr_decay = 0.0,
            |c: &mut TrainConfig| c.lr_decay_every = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.val_frac = 1.0,
            |c: &mut TrainConfig| c.patience = 0,
            |c: &mut TrainConfig| c.sage_dims = vec![],
            |c: &mut TrainConfig| c.d_g = 0,
        ] {
            let mut c = tiny_config();
            mutate(&mut c);
            assert!(c.validate().is_err(), "config {c:?} should be invalid");
        }
    }
}
