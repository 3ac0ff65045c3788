//! Elementwise activations and inverted dropout.

use super::{NnError, RngStream};

/// Norm guard for `l2_normalize`: vectors with norm below this pass through
/// scaled by 1/EPS, which maps the zero vector to itself.
pub const L2_EPS: f64 = 1e-12;

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        // Rearranged for large negative x so exp never overflows.
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// x / max(||x||_2, L2_EPS).
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    l2_normalize_with_norm(x).0
}

/// Returns the normalized vector together with the divisor actually used.
pub fn l2_normalize_with_norm(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = norm.max(L2_EPS);
    (x.iter().map(|v| v / denom).collect(), denom)
}

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p),
/// so the mask has unit expectation. Draws one uniform per entry.
pub fn dropout_mask(len: usize, p: f64, rng: &mut RngStream) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidDropout(p));
    }
    if p == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout. With `training` false the input passes through unchanged
/// and no random draws are consumed.
pub fn dropout(
    x: &[f64],
    p: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidDropout(p));
    }
    if !training || p == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), p, rng)?;
    Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
}
