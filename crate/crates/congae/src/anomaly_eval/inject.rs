//! Synthetic anomaly injection: spatial pollution perturbs travel times on
//! chosen slices, temporal pollution shifts a slice's claimed hour by half a
//! day. Unchosen slices are bit-identical to the input.

use super::{EvalError, EvalResult, LabeledDataset};
use crate::nn_core::RngStream;
use crate::od_graph::Dataset;

/// Injection parameters. `gamma` is the fraction of slices polluted;
/// `alpha`/`beta` control the fraction of edges touched and the maximum
/// relative travel-time perturbation (spatial pollution only).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl InjectionConfig {
    pub fn validate(&self) -> EvalResult<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::Config(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Chooses round(gamma * T) slice indices without replacement; errors when
/// that count is 0 or T, since evaluation needs both classes.
fn choose_slices(
    clean: &Dataset,
    cfg: &InjectionConfig,
    rng: &mut RngStream,
) -> EvalResult<Vec<usize>> {
    cfg.validate()?;
    let t = clean.snapshots().len();
    let count = (cfg.gamma * t as f64).round() as usize;
    if count == 0 || count >= t {
        return Err(EvalError::Config(format!(
            "gamma {} of {t} slices pollutes {count}, leaving one class empty",
            cfg.gamma
        )));
    }
    Ok(rng.choose_k(t, count))
}

/// Spatial pollution: on each chosen slice, round(alpha * |E|) edges get
/// their travel time multiplied by (1 + u), u ~ U(-beta, beta), then
/// re-scaled to a weight (clamped at the scaler bounds).
pub fn inject_spatial(clean: &Dataset, cfg: &InjectionConfig) -> EvalResult<LabeledDataset> {
    let mut rng = RngStream::new(cfg.seed);
    let chosen = choose_slices(clean, cfg, &mut rng)?;
    let scaler = clean.scaler().clone();
    let mut snapshots = clean.snapshots().to_vec();
    let mut labels = vec![false; snapshots.len()];
    for &idx in &chosen {
        labels[idx] = true;
        let snap = &snapshots[idx];
        let mut edges = snap.edges().to_vec();
        let k = (cfg.alpha * edges.len() as f64).round() as usize;
        for e_idx in rng.choose_k(edges.len(), k) {
            let tau = scaler.unscale(edges[e_idx].weight);
            let u = rng.uniform_in(-cfg.beta, cfg.beta);
            if u == 0.0 {
                // tau * (1 + 0) is tau; skip the scale round trip so beta = 0
                // leaves every weight bit-identical.
                continue;
            }
            let perturbed = tau * (1.0 + u);
            // 1 + u > 0 keeps tau positive; an exact zero would mean an
            // instantaneous trip, which saturates the weight scale.
            edges[e_idx].weight = if perturbed > 0.0 {
                scaler.scale(perturbed)?
            } else {
                1.0
            };
        }
        snapshots[idx] = snap.with_edges(edges)?;
    }
    let dataset = clean.with_snapshots(snapshots)?;
    Ok(LabeledDataset::new(dataset, labels)?)
}

/// Temporal pollution: chosen slices keep every edge and weight but claim an
/// hour shifted by 12; day of week is untouched. Applying the shift twice
/// restores the original context.
pub fn inject_temporal(clean: &Dataset, cfg: &InjectionConfig) -> EvalResult<LabeledDataset> {
    let mut rng = RngStream::new(cfg.seed);
    let chosen = choose_slices(clean, cfg, &mut rng)?;
    let mut snapshots = clean.snapshots().to_vec();
    let mut labels = vec![false; snapshots.len()];
    for &idx in &chosen {
        labels[idx] = true;
        let shifted = snapshots[idx].context().shifted_half_day();
        snapshots[idx] = snapshots[idx].with_context(shifted);
    }
    let dataset = clean.with_snapshots(snapshots)?;
    Ok(LabeledDataset::new(dataset, labels)?)
}
