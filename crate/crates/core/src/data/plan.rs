use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rolling step. All bounds are inclusive sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train_start: usize,
    pub train_end: usize,
    pub valid_start: usize,
    pub valid_end: usize,
    pub test_index: usize,
}

impl Window {
    /// Training rows that are not part of the validation tail.
    pub fn fit_range(&self) -> std::ops::Range<usize> {
        self.train_start..self.valid_start
    }

    pub fn valid_range(&self) -> std::ops::Range<usize> {
        self.valid_start..self.valid_end + 1
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.train_start..self.train_end + 1
    }

    pub fn train_len(&self) -> usize {
        self.train_end + 1 - self.train_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindowPlan {
    pub windows: Vec<Window>,
}

impl RollingWindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Size of the validation tail: `round(valid_frac * train_len)`.
pub fn validation_len(train_len: usize, valid_frac: f64) -> usize {
    (valid_frac * train_len as f64 + 0.5).floor() as usize
}

/// Fixed-length rolling windows advancing one step per test index.
///
/// Window `k` tests index `(t_total - test_len) + k` and trains on the
/// `train_len` indices right before it; the trailing
/// `round(valid_frac * train_len)` of those form the validation block.
pub fn make_rolling_plan(
    t_total: usize,
    train_len: usize,
    valid_frac: f64,
    test_len: usize,
) -> Result<RollingWindowPlan> {
    if train_len < 5 {
        return Err(Error::Config(format!(
            "train_len must be at least 5, got {train_len}"
        )));
    }
    if train_len + test_len > t_total {
        return Err(Error::Config(format!(
            "train_len {train_len} + test_len {test_len} exceeds {t_total} observations"
        )));
    }
    if !(0.0..1.0).contains(&valid_frac) {
        return Err(Error::Config(format!(
            "valid_frac must lie in [0, 1), got {valid_frac}"
        )));
    }
    let valid_len = validation_len(train_len, valid_frac);
    if valid_len == 0 || valid_len >= train_len {
        return Err(Error::Config(format!(
            "validation block of {valid_len} rows is unusable for train_len {train_len}"
        )));
    }
    let first_test = t_total - test_len;
    let windows = (0..test_len)
        .map(|k| {
            let test_index = first_test + k;
            let train_end = test_index - 1;
            Window {
                train_start: test_index - train_len,
                train_end,
                valid_start: train_end + 1 - valid_len,
                valid_end: train_end,
                test_index,
            }
        })
        .collect();
    Ok(RollingWindowPlan { windows })
}
