use serde::{Deserialize, Serialize};

use crate::error::{NeftError, Result};

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(NeftError::Domain(format!("schedule position {t} outside [0, {total}]")));
    }
    let cos = (std::f64::consts::PI * t as f64 / total as f64).cos();
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + cos))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopConfig {
    pub min_delta_db: f64,
    pub patience_epochs: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig { min_delta_db: 0.1, patience_epochs: 20 }
    }
}

/// Stops once the monitored NMSE has not improved on the best value by at
/// least `min_delta_db` for `patience_epochs` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    cfg: EarlyStopConfig,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(cfg: EarlyStopConfig) -> Result<Self> {
        if cfg.patience_epochs == 0 || !(cfg.min_delta_db >= 0.0) {
            return Err(NeftError::Config("early stopping needs patience >= 1 and min_delta_db >= 0".into()));
        }
        Ok(EarlyStopping { cfg, best: f64::INFINITY, best_epoch: None })
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    /// Records the metric for `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, nmse_db: f64) -> bool {
        if self.best_epoch.is_none() || nmse_db < self.best - self.cfg.min_delta_db {
            self.best = nmse_db;
            self.best_epoch = Some(epoch);
            return false;
        }
        epoch - self.best_epoch.unwrap_or(epoch) >= self.cfg.patience_epochs
    }
}
