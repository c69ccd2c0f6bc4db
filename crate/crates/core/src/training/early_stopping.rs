/// Patience-based early stopping on a validation error sequence.
///
/// Starts with an infinite best error; each strictly better observation
/// resets the counter and becomes the checkpoint, anything else counts
/// towards the patience.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    waited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; the caller should checkpoint its parameters.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    /// Panics if `patience == 0`.
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            waited: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, error: f64) -> StopDecision {
        if error < self.best {
            self.best = error;
            self.best_epoch = Some(epoch);
            self.waited = 0;
            StopDecision::Improved
        } else {
            self.waited += 1;
            if self.waited >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}
