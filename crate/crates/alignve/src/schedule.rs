//! Plateau learning-rate schedule: multiply the learning rate by the decay
//! factor whenever validation loss has not strictly decreased for
//! `patience` consecutive epochs since the last best.

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    base_lr: f64,
    decay_factor: f64,
    patience: usize,
    best_val_loss: f64,
    epochs_since_improvement: usize,
    decay_count: u32,
}

impl PlateauScheduler {
    pub fn new(base_lr: f64, decay_factor: f64, patience: usize) -> Self {
        assert!(base_lr > 0.0 && decay_factor > 0.0 && decay_factor < 1.0);
        PlateauScheduler {
            base_lr,
            decay_factor,
            patience,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            decay_count: 0,
        }
    }

    /// The rate is always base_lr · factor^decays, so k decays land exactly
    /// on the closed-form value.
    pub fn current_lr(&self) -> f64 {
        self.base_lr * self.decay_factor.powi(self.decay_count as i32)
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    pub fn decay_count(&self) -> u32 {
        self.decay_count
    }

    /// Feeds one epoch's validation loss and returns the learning rate to
    /// use from now on. A strict decrease records a new best and resets the
    /// counter; once the counter reaches the patience, the rate decays and
    /// the counter resets.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.patience {
                self.decay_count += 1;
                self.epochs_since_improvement = 0;
            }
        }
        self.current_lr()
    }

    /// Restores scheduler state from checkpoint fields. The decay count is
    /// recovered by matching the stored rate against base_lr · factor^k.
    pub fn restore(
        base_lr: f64,
        decay_factor: f64,
        patience: usize,
        best_val_loss: f64,
        epochs_since_improvement: usize,
        current_lr: f64,
    ) -> Self {
        let mut decay_count = 0u32;
        for k in 0..=64u32 {
            if base_lr * decay_factor.powi(k as i32) == current_lr {
                decay_count = k;
                break;
            }
        }
        PlateauScheduler {
            base_lr,
            decay_factor,
            patience,
            best_val_loss,
            epochs_since_improvement,
            decay_count,
        }
    }
}
