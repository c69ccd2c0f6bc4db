use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::matrix::MatRef;

/// Handle to a named block inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in/fan-out initialisation applies to weights; biases start at zero.
    pub is_bias: bool,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named layout of every trainable matrix and vector of a model.
///
/// All parameters live in one `Vec<f64>` so Adam, the L1 penalty and the
/// gradient checker operate on a flat view; model code addresses blocks
/// through [`SlotId`]s.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    slots: Vec<Slot>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> SlotId {
        self.push(name.into(), rows, cols, false)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) -> SlotId {
        self.push(name.into(), len, 1, true)
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, is_bias: bool) -> SlotId {
        assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate slot {name}"
        );
        let id = SlotId(self.slots.len());
        self.slots.push(Slot {
            name,
            offset: self.len,
            rows,
            cols,
            is_bias,
        });
        self.len += rows * cols;
        id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, id: SlotId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn find(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s.name == name).map(SlotId)
    }

    pub fn range(&self, id: SlotId) -> Range<usize> {
        self.slots[id.0].range()
    }

    pub fn view<'a>(&self, id: SlotId, params: &'a [f64]) -> MatRef<'a> {
        let s = &self.slots[id.0];
        MatRef::new(s.rows, s.cols, &params[s.range()])
    }

    pub fn get<'a>(&self, id: SlotId, params: &'a [f64]) -> &'a [f64] {
        &params[self.range(id)]
    }

    pub fn get_mut<'a>(&self, id: SlotId, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.range(id)]
    }

    /// Name of the slot holding flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.slots
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| s.name.as_str())
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`;
    /// biases zero.
    pub fn init(&self, rng: &mut super::RngState) -> Vec<f64> {
        let mut params = vec![0.0; self.len];
        for s in &self.slots {
            if s.is_bias {
                continue;
            }
            let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for p in &mut params[s.range()] {
                *p = rng.uniform(-a, a);
            }
        }
        params
    }
}
