//! Finite-difference check of the analytic gradients.

use super::encoder::Encoder;
use super::train::{batch_loss_and_grad, EncodedExample};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub index: usize,
    pub tensor: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl ParamCheck {
    /// `|a - n| / max(|a|, |n|)`, or 0 when both are below `floor`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < floor {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Compares the backward pass with a five-point central difference of the
/// dropout-free mean batch loss, for every parameter.
pub fn check_gradients(
    encoder: &Encoder,
    batch: &[EncodedExample],
    pos_weight: f64,
    step: f64,
) -> Result<Vec<ParamCheck>> {
    let refs: Vec<&EncodedExample> = batch.iter().collect();
    let mut analytic = vec![0.0; encoder.params.len()];
    batch_loss_and_grad(encoder, &refs, pos_weight, None, &mut analytic)?;

    let mut probe = encoder.clone();
    let mut scratch = vec![0.0; encoder.params.len()];
    let mut loss_at = |probe: &Encoder| -> Result<f64> {
        batch_loss_and_grad(probe, &refs, pos_weight, None, &mut scratch)
    };
    let mut out = Vec::with_capacity(encoder.params.len());
    for t in &encoder.layout.tensors {
        for i in t.range() {
            let x = encoder.params[i];
            let mut f = [0.0; 4];
            for (k, delta) in [2.0, 1.0, -1.0, -2.0].iter().enumerate() {
                probe.params[i] = x + delta * step;
                f[k] = loss_at(&probe)?;
            }
            probe.params[i] = x;
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
            out.push(ParamCheck {
                index: i,
                tensor: t.name.clone(),
                analytic: analytic[i],
                numeric,
            });
        }
    }
    Ok(out)
}
