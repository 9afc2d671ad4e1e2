//! Optimizer hyperparameters as positions on ordered candidate grids, moved
//! by a bounded random walk.

use alloc::vec::Vec;

use rand::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HyperError {
    #[error("hyperparameter grid is empty")]
    Empty,
    #[error("hyperparameter grid must be strictly monotone and finite")]
    NotMonotone,
    #[error("grid index {index} outside 1..={len}")]
    Index { index: usize, len: usize },
}

/// An ordered candidate sequence and a 1-based cursor into it.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    values: Vec<f64>,
    index: usize,
}

impl HyperGrid {
    pub fn new(values: Vec<f64>, index: usize) -> Result<Self, HyperError> {
        if values.is_empty() {
            return Err(HyperError::Empty);
        }
        let finite = values.iter().all(|v| v.is_finite());
        let up = values.windows(2).all(|w| w[0] < w[1]);
        let down = values.windows(2).all(|w| w[0] > w[1]);
        if !finite || !(up || down) {
            return Err(HyperError::NotMonotone);
        }
        if index == 0 || index > values.len() {
            return Err(HyperError::Index {
                index,
                len: values.len(),
            });
        }
        Ok(HyperGrid { values, index })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based position.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self) -> f64 {
        self.values[self.index - 1]
    }

    pub fn with_index(&self, index: usize) -> Result<Self, HyperError> {
        HyperGrid::new(self.values.clone(), index)
    }
}

/// Learning rate and weight decay grids for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub learning_rate: HyperGrid,
    pub weight_decay: HyperGrid,
}

impl HyperState {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.value()
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.value()
    }

    fn grids_mut(&mut self) -> [&mut HyperGrid; 2] {
        [&mut self.learning_rate, &mut self.weight_decay]
    }
}

impl Default for HyperState {
    fn default() -> Self {
        HyperState {
            learning_rate: HyperGrid::new(alloc::vec![0.001, 0.002, 0.004, 0.008, 0.016], 3)
                .expect("valid default grid"),
            weight_decay: HyperGrid::new(alloc::vec![0.0, 1e-5, 1e-4, 1e-3], 1)
                .expect("valid default grid"),
        }
    }
}

/// One random-walk step for a 1-based `index` on a grid of `len` values,
/// given a uniform draw `u`: left if `u < rate/2` and not at the start,
/// right if `rate/2 <= u < rate` and not at the end, otherwise stay.
pub fn walk_index(index: usize, len: usize, u: f64, rate: f64) -> usize {
    if u < rate / 2.0 {
        if index > 1 {
            return index - 1;
        }
    } else if u < rate && index < len {
        return index + 1;
    }
    index
}

/// Independently walks every hyperparameter with one uniform draw each.
pub fn tune_hyperparams(state: &HyperState, rate: f64, rng: &mut impl Rng) -> HyperState {
    let mut next = state.clone();
    for grid in next.grids_mut() {
        let u: f64 = rng.random();
        grid.index = walk_index(grid.index, grid.len(), u, rate);
    }
    next
}
