use serde::{Deserialize, Serialize};

/// What happened at the end of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerStep {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
    /// Learning rate for the next epoch.
    pub lr: f64,
}

/// Reduce-on-plateau learning-rate schedule combined with early stopping,
/// both keyed on validation loss.
///
/// An epoch improves when its loss is below `best − threshold`. After
/// `patience` consecutive non-improving epochs the rate is multiplied by
/// `factor` and that counter restarts; after `stop_patience` consecutive
/// non-improving epochs training stops.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    stop_patience: usize,
    threshold: f64,
    best: f64,
    plateau_wait: usize,
    stop_wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, stop_patience: usize, threshold: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            stop_patience,
            threshold,
            best: f64::INFINITY,
            plateau_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn step(&mut self, val_loss: f64) -> SchedulerStep {
        let improved = val_loss < self.best - self.threshold;
        let mut lr_reduced = false;
        if improved {
            self.best = val_loss;
            self.plateau_wait = 0;
            self.stop_wait = 0;
        } else {
            self.plateau_wait += 1;
            self.stop_wait += 1;
            if self.plateau_wait >= self.patience {
                self.lr *= self.factor;
                self.plateau_wait = 0;
                lr_reduced = true;
            }
        }
        SchedulerStep {
            improved,
            lr_reduced,
            stop: self.stop_wait >= self.stop_patience,
            lr: self.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> PlateauScheduler {
        PlateauScheduler::new(1.0, 0.1, 3, 6, 1e-6)
    }

    #[test]
    fn constant_loss_stops_at_epoch_seven() {
        let mut s = reference();
        let steps: Vec<_> = (0..10).map(|_| s.step(0.5)).collect();
        let stop = steps.iter().position(|st| st.stop).unwrap() + 1;
        assert_eq!(stop, 7);
        let lrs: Vec<f64> = steps[..7].iter().map(|st| st.lr).collect();
        assert_eq!(lrs, [1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1 * 0.1]);
    }

    #[test]
    fn improvement_resets_both_counters() {
        let mut s = reference();
        let trace = [1.0, 1.0, 1.0, 0.9, 0.9, 0.9, 0.9, 0.9];
        let steps: Vec<_> = trace.iter().map(|&l| s.step(l)).collect();
        assert!(steps.iter().all(|st| !st.stop));
        assert_eq!(steps.iter().filter(|st| st.lr_reduced).count(), 1);
        assert!(steps[6].lr_reduced);
    }

    #[test]
    fn changes_below_threshold_are_not_improvements() {
        let mut s = reference();
        s.step(1.0);
        assert!(!s.step(1.0 - 5e-7).improved);
        assert!(s.step(1.0 - 2e-6).improved);
    }
}
