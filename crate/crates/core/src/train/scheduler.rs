//! Reduce-on-plateau learning-rate schedule driven by balanced accuracy.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    /// Consecutive non-improving epochs tolerated before a reduction.
    pub patience: usize,
    /// Multiplier applied to the learning rate on a reduction.
    pub factor: f64,
    /// Improvement below this margin does not reset the counter.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { patience: 10, factor: 0.1, min_delta: 1e-4 }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor {} outside (0, 1)",
                self.factor
            )));
        }
        if self.min_delta < 0.0 {
            return Err(Error::Config("plateau min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        PlateauScheduler { config, best: f64::NEG_INFINITY, bad_epochs: 0 }
    }

    /// Feeds one epoch's metric (higher is better) and returns the learning
    /// rate for the next epoch. The counter resets after each reduction.
    pub fn update(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best + self.config.min_delta {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.config.patience {
            self.bad_epochs = 0;
            lr * self.config.factor
        } else {
            lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_metric_never_reduces() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.1;
        for i in 0..50 {
            lr = s.update(0.5 + 0.01 * i as f64, lr);
        }
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn eleven_flat_epochs_after_a_best_reduce_once() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.1;
        lr = s.update(0.8, lr); // establishes the best
        let mut reductions = 0;
        for _ in 0..11 {
            let next = s.update(0.8, lr);
            if next < lr {
                reductions += 1;
            }
            lr = next;
        }
        assert_eq!(reductions, 1);
        assert!((lr - 0.01).abs() < 1e-15);
    }

    #[test]
    fn ten_flat_epochs_do_not_reduce() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.1;
        lr = s.update(0.8, lr);
        for _ in 0..10 {
            lr = s.update(0.8, lr);
        }
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn two_reductions_compose_factor_squared() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.2;
        lr = s.update(0.9, lr);
        for _ in 0..22 {
            lr = s.update(0.9, lr);
        }
        assert!((lr - 0.2 * 0.01).abs() < 1e-15, "lr {lr}");
    }

    #[test]
    fn sub_delta_improvement_counts_as_flat() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.1;
        lr = s.update(0.5, lr);
        for i in 1..=11 {
            lr = s.update(0.5 + 1e-6 * i as f64, lr);
        }
        assert!(lr < 0.1, "tiny improvements must not reset the counter");
    }

    #[test]
    fn config_validation() {
        assert!(PlateauConfig { factor: 0.0, ..Default::default() }.validate().is_err());
        assert!(PlateauConfig { factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(PlateauConfig { min_delta: -0.1, ..Default::default() }.validate().is_err());
        assert!(PlateauConfig::default().validate().is_ok());
    }
}
