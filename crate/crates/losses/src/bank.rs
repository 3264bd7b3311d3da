//! Class-indexed FIFO store of teacher mask centers.

use std::collections::VecDeque;

use tensorgrad::{Real, Tape};

use crate::centers::MaskCenterSet;
use crate::local::has_direction;
use crate::error::{LossError, Result};

pub const DEFAULT_BANK_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    capacity: usize,
    buffers: Vec<VecDeque<Vec<f64>>>,
}

impl MemoryBank {
    pub fn new(classes_fg: usize, dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "bank capacity must be positive");
        MemoryBank {
            dim,
            capacity,
            buffers: vec![VecDeque::with_capacity(capacity); classes_fg],
        }
    }

    pub fn classes(&self) -> usize {
        self.buffers.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored vectors of class `c` (1-based), oldest first.
    pub fn buffer(&self, class: usize) -> &VecDeque<Vec<f64>> {
        &self.buffers[class - 1]
    }

    pub fn len(&self) -> usize {
        self.buffers.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends every present center; the oldest entry of a full buffer is evicted.
    /// All entries are validated before anything is stored.
    pub fn push(&mut self, centers: &[Option<Vec<f64>>]) -> Result<()> {
        if centers.len() != self.buffers.len() {
            return Err(LossError::Shape {
                op: "bank_push",
                detail: format!("{} classes pushed into a {}-class bank", centers.len(), self.buffers.len()),
            });
        }
        for v in centers.iter().flatten() {
            if v.len() != self.dim {
                return Err(LossError::Dimension {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        for (buf, v) in self.buffers.iter_mut().zip(centers) {
            if let Some(v) = v {
                if buf.len() == self.capacity {
                    buf.pop_front();
                }
                buf.push_back(v.clone());
            }
        }
        Ok(())
    }

    /// Pushes the centers of one teacher-processed labeled image. Centers without a
    /// direction (all-zero features over the class) are left out.
    pub fn push_centers<T: Real>(&mut self, tape: &Tape<T>, set: &MaskCenterSet) -> Result<()> {
        let values: Vec<Option<Vec<f64>>> = set
            .values(tape)
            .into_iter()
            .map(|v| v.filter(|v| has_direction(v)))
            .collect();
        self.push(&values)
    }
}
