//! Mini-batch SGD with momentum and weight decay on the WTA loss. Only
//! trainable blocks move; frozen shared blocks are never written.

use alloc::vec::Vec;

use rand::Rng;

use crate::hyper::HyperState;
use crate::metrics::validation_ade;
use crate::model::{loss_and_grads, ForecastModel, ModelError, TrajectoryBatch};
use crate::rng;
use crate::scene::{SceneDataset, SceneError, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 32,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] SceneError),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("batch size must be at least 1")]
    BatchSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ForecastModel,
    /// Validation best-of-K ADE after training.
    pub q: f64,
}

/// Trains `model` for `cfg.steps` updates with `hyper`, drawing batches with
/// replacement from the training split, then measures validation ADE.
///
/// The returned model carries `hyper`, refreshed block ids and a new id.
/// A non-finite loss or parameter is reported as [`TrainError::Diverged`].
pub fn train(
    model: &ForecastModel,
    data: &SceneDataset,
    cfg: &TrainConfig,
    hyper: &HyperState,
    seed: u64,
) -> Result<Trained, TrainError> {
    data.require_trainable()?;
    if cfg.batch_size == 0 {
        return Err(TrainError::BatchSize);
    }
    let mut model = model.clone();
    model.set_hyper(hyper.clone());
    let (lr, wd, mu) = (hyper.learning_rate() as f32, hyper.weight_decay() as f32, cfg.momentum as f32);
    let pool = data.indices(Split::Train);
    let mut rng = rng::derive(seed, "train", &[]);
    let mut velocity: Vec<Vec<Vec<f32>>> = model
        .layers()
        .map(|l| l.params().iter().map(|p| alloc::vec![0.0; p.size()]).collect())
        .collect();
    let mut picked = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.steps {
        picked.clear();
        picked.extend((0..cfg.batch_size).map(|_| pool[rng.random_range(0..pool.len())]));
        let batch = TrajectoryBatch::from_samples(data, &picked);
        let (loss, grads) = loss_and_grads(&model, &batch)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        for ((layer, layer_grads), layer_vel) in model.layers_mut().zip(&grads).zip(&mut velocity) {
            for (slot, g) in layer_grads {
                let v = &mut layer_vel[*slot];
                let w = layer.params_mut()[*slot]
                    .values_mut()
                    .expect("gradients exist only for trainable blocks");
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *vi = mu * *vi + gi + wd * *wi;
                    *wi -= lr * *vi;
                }
                if !w.iter().all(|x| x.is_finite()) {
                    return Err(TrainError::Diverged { step });
                }
            }
        }
    }

    for layer in model.layers_mut() {
        for p in layer.params_mut() {
            if p.is_trainable() {
                p.refresh_id();
            }
        }
    }
    model.seal();
    let q = validation_ade(&model, data)?;
    if !q.is_finite() {
        return Err(TrainError::Diverged { step: cfg.steps });
    }
    Ok(Trained { model, q })
}
