use crate::error::{MilError, Result};
use crate::training::TrainConfig;

/// Learning rate at a (fractional) epoch: linear warm-up from `lr_min` to
/// `lr_max`, then half-cosine decay back to `lr_min` at `epochs`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs as f64;
    if !(0.0..=total).contains(&epoch) {
        return Err(MilError::Input(format!("epoch {epoch} outside [0, {total}]")));
    }
    let warm = cfg.warmup_epochs as f64;
    let (lo, hi) = (cfg.lr_min, cfg.lr_max);
    if epoch <= warm {
        // Written so both ends come out exact.
        let f = epoch / warm;
        return Ok(if f == 1.0 { hi } else { lo + (hi - lo) * f });
    }
    let progress = (epoch - warm) / (total - warm);
    Ok(lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
