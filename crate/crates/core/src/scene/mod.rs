//! Scenario datasets: fixed-shape multi-agent samples with train /
//! validation / test index splits.

mod synth;
mod text;

pub use synth::{gen_scene, SceneKind, SceneSpec};
pub use text::{parse_trajectory_text, to_trajectory_text};

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Spec(&'static str),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: &'static str },
    #[error("no agent track is long enough for a window of {window} frames")]
    NoWindows { window: usize },
    #[error("sample {index} does not match the dataset shape")]
    Inconsistent { index: usize },
    #[error("dataset has {0} samples; at least 3 are needed to split")]
    TooSmall(usize),
    #[error("split fractions must be positive and sum to 1")]
    Fractions,
    #[error("dataset '{0}' has an empty {1} split")]
    EmptySplit(String, &'static str),
}

/// One joint sample: `observed` is `[N, T_obs, 2]`, `future` `[N, T_pred, 2]`,
/// both flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observed: Vec<f32>,
    pub future: Vec<f32>,
    pub context: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    id: String,
    t_obs: usize,
    t_pred: usize,
    agents: usize,
    context_dim: usize,
    samples: Vec<Sample>,
    splits: Splits,
}

impl SceneDataset {
    /// Validates that every sample has the same shape. All samples start in
    /// the training split.
    pub fn new(
        id: impl Into<String>,
        t_obs: usize,
        t_pred: usize,
        agents: usize,
        samples: Vec<Sample>,
    ) -> Result<Self, SceneError> {
        if t_obs == 0 || t_pred == 0 || agents == 0 {
            return Err(SceneError::Spec("horizons and agent count must be at least 1"));
        }
        let context_dim = samples
            .first()
            .and_then(|s| s.context.as_ref())
            .map_or(0, Vec::len);
        for (index, s) in samples.iter().enumerate() {
            let ctx_ok = match &s.context {
                Some(c) => context_dim > 0 && c.len() == context_dim,
                None => context_dim == 0,
            };
            let finite = s.observed.iter().chain(&s.future).all(|v| v.is_finite());
            if s.observed.len() != agents * t_obs * 2
                || s.future.len() != agents * t_pred * 2
                || !ctx_ok
                || !finite
            {
                return Err(SceneError::Inconsistent { index });
            }
        }
        let splits = Splits {
            train: (0..samples.len()).collect(),
            ..Splits::default()
        };
        Ok(SceneDataset {
            id: id.into(),
            t_obs,
            t_pred,
            agents,
            context_dim,
            samples,
            splits,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn t_obs(&self) -> usize {
        self.t_obs
    }

    pub fn t_pred(&self) -> usize {
        self.t_pred
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Width of the per-sample context vector, 0 when absent.
    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Validation => &self.splits.validation,
            Split::Test => &self.splits.test,
        }
    }

    /// Fails unless both the training and validation splits are non-empty.
    pub fn require_trainable(&self) -> Result<(), SceneError> {
        for split in [Split::Train, Split::Validation] {
            if self.indices(split).is_empty() {
                return Err(SceneError::EmptySplit(self.id.clone(), split.name()));
            }
        }
        Ok(())
    }

    /// Deterministic shuffled three-way split. Sizes follow the
    /// largest-remainder rule so each is within one sample of its exact
    /// fraction.
    pub fn split(mut self, fractions: (f64, f64, f64), seed: u64) -> Result<Self, SceneError> {
        let n = self.samples.len();
        if n < 3 {
            return Err(SceneError::TooSmall(n));
        }
        let f = [fractions.0, fractions.1, fractions.2];
        if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SceneError::Fractions);
        }
        let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| libm::floor(*x) as usize).collect();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - sizes[a] as f64;
            let rb = exact[b] - sizes[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut remaining = n - sizes.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            sizes[i] += 1;
            remaining -= 1;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::derive(seed, "split", &[]));
        let test = idx.split_off(sizes[0] + sizes[1]);
        let validation = idx.split_off(sizes[0]);
        self.splits = Splits {
            train: idx,
            validation,
            test,
        };
        Ok(self)
    }

    /// Dataset restricted to the given samples, all in the training split.
    pub fn subset(&self, indices: &[usize]) -> SceneDataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        SceneDataset {
            splits: Splits {
                train: (0..samples.len()).collect(),
                ..Splits::default()
            },
            samples,
            id: self.id.clone(),
            ..*self
        }
    }
}
