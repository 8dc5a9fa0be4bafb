use crate::error::{Error, Result};

/// Cosine annealing from `lr_init` at step 0 to `lr_final` at `total_steps`.
///
/// Written as a convex combination so both endpoints are returned exactly.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::usage("cosine schedule needs at least one step"));
    }
    if step > total_steps {
        return Err(Error::usage(format!("step {step} beyond schedule length {total_steps}")));
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
    Ok(lr_final * (1.0 - w) + lr_init * w)
}
