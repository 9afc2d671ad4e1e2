//! Best-of-K displacement metrics and evaluation reports.
//!
//! ADE is the time-averaged Euclidean displacement and FDE the displacement
//! at the last step, each minimized over modes. `minJointADE` minimizes the
//! agent- and time-averaged displacement over joint modes, so every agent
//! uses the same mode index.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::model::{predict, ForecastModel, ModelError, TrajectoryBatch};
use crate::scene::{SceneDataset, Split};
use crate::tensor::{ShapeError, Tensor};

/// Default final-step distance beyond which an agent counts as missed.
pub const MISS_THRESHOLD: f64 = 2.0;

/// Per-step displacement measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisplacementNorm {
    /// `||ŷ - y||`, the usual definition.
    #[default]
    Euclidean,
    /// `||ŷ - y||²`.
    Squared,
}

impl DisplacementNorm {
    fn apply(self, dx: f64, dy: f64) -> f64 {
        let sq = dx * dx + dy * dy;
        match self {
            DisplacementNorm::Euclidean => libm::sqrt(sq),
            DisplacementNorm::Squared => sq,
        }
    }
}

/// Mean-over-time and final-step displacement for each (agent, mode), from
/// predictions laid out `[N, K, T, 2]` and truth `[N, T, 2]`.
pub(crate) struct ModeErrors {
    agents: usize,
    modes: usize,
    ade: Vec<f64>,
    fde: Vec<f64>,
}

impl ModeErrors {
    pub(crate) fn new(pred: &[f32], gt: &[f32], agents: usize, modes: usize, steps: usize, norm: DisplacementNorm) -> Self {
        let mut ade = Vec::with_capacity(agents * modes);
        let mut fde = Vec::with_capacity(agents * modes);
        for n in 0..agents {
            let truth = &gt[n * steps * 2..(n + 1) * steps * 2];
            for k in 0..modes {
                let p = &pred[(n * modes + k) * steps * 2..(n * modes + k + 1) * steps * 2];
                let mut sum = 0.0;
                let mut last = 0.0;
                for t in 0..steps {
                    let d = norm.apply(
                        f64::from(p[2 * t]) - f64::from(truth[2 * t]),
                        f64::from(p[2 * t + 1]) - f64::from(truth[2 * t + 1]),
                    );
                    sum += d;
                    last = d;
                }
                ade.push(sum / steps as f64);
                fde.push(last);
            }
        }
        ModeErrors { agents, modes, ade, fde }
    }

    fn min_over_modes(v: &[f64], modes: usize, n: usize) -> f64 {
        v[n * modes..(n + 1) * modes].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn agent_ade(&self, n: usize) -> f64 {
        Self::min_over_modes(&self.ade, self.modes, n)
    }

    pub(crate) fn agent_fde(&self, n: usize) -> f64 {
        Self::min_over_modes(&self.fde, self.modes, n)
    }

    /// `(mode, joint ADE)` of the best joint mode; ties go to the lower mode.
    pub(crate) fn joint(&self) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.modes {
            let mean = (0..self.agents).map(|n| self.ade[n * self.modes + k]).sum::<f64>() / self.agents as f64;
            if mean < best.1 {
                best = (k, mean);
            }
        }
        best
    }

    /// Agents whose final displacement under the best joint mode exceeds
    /// `threshold`.
    pub(crate) fn misses(&self, threshold: f64) -> usize {
        let (k, _) = self.joint();
        (0..self.agents)
            .filter(|n| self.fde[n * self.modes + k] > threshold)
            .count()
    }
}

fn modes_and_steps(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize), ShapeError> {
    let t = gt.shape().first().copied().unwrap_or(0);
    gt.expect_shape("ground truth [T, 2]", &[t, 2])?;
    let k = pred.shape().first().copied().unwrap_or(0);
    pred.expect_shape("predictions [K, T, 2]", &[k.max(1), t, 2])?;
    if t == 0 {
        return Err(ShapeError::Mismatch {
            what: "ground truth needs at least one step",
            expected: alloc::vec![1, 2],
            actual: gt.shape().to_vec(),
        });
    }
    Ok((k, t))
}

/// `[K, N, T, 2]` predictions reordered to `[N, K, T, 2]`, after checking
/// against truth `[N, T, 2]`.
fn agents_major(pred: &Tensor, gt: &Tensor) -> Result<(Vec<f32>, usize, usize, usize), ShapeError> {
    let (n, t) = match gt.shape() {
        [n, t, 2] if *n > 0 && *t > 0 => (*n, *t),
        _ => {
            return Err(ShapeError::Mismatch {
                what: "ground truth [N, T, 2]",
                expected: alloc::vec![1, 1, 2],
                actual: gt.shape().to_vec(),
            })
        }
    };
    let k = pred.shape().first().copied().unwrap_or(0);
    pred.expect_shape("predictions [K, N, T, 2]", &[k.max(1), n, t, 2])?;
    let d = pred.data();
    let mut out = Vec::with_capacity(d.len());
    for a in 0..n {
        for m in 0..k {
            let off = (m * n + a) * t * 2;
            out.extend_from_slice(&d[off..off + t * 2]);
        }
    }
    Ok((out, k, n, t))
}

/// Best-of-K average displacement error for `pred [K, T, 2]`, `gt [T, 2]`.
pub fn ade_k(pred: &Tensor, gt: &Tensor) -> Result<f64, ShapeError> {
    ade_k_with(pred, gt, DisplacementNorm::Euclidean)
}

pub fn ade_k_with(pred: &Tensor, gt: &Tensor, norm: DisplacementNorm) -> Result<f64, ShapeError> {
    let (k, t) = modes_and_steps(pred, gt)?;
    Ok(ModeErrors::new(pred.data(), gt.data(), 1, k, t, norm).agent_ade(0))
}

/// Best-of-K final displacement error for `pred [K, T, 2]`, `gt [T, 2]`.
pub fn fde_k(pred: &Tensor, gt: &Tensor) -> Result<f64, ShapeError> {
    fde_k_with(pred, gt, DisplacementNorm::Euclidean)
}

pub fn fde_k_with(pred: &Tensor, gt: &Tensor, norm: DisplacementNorm) -> Result<f64, ShapeError> {
    let (k, t) = modes_and_steps(pred, gt)?;
    Ok(ModeErrors::new(pred.data(), gt.data(), 1, k, t, norm).agent_fde(0))
}

/// Joint best-of-K ADE for `pred [K, N, T, 2]`, `gt [N, T, 2]`.
pub fn min_joint_ade(pred: &Tensor, gt: &Tensor) -> Result<f64, ShapeError> {
    let (p, k, n, t) = agents_major(pred, gt)?;
    Ok(ModeErrors::new(&p, gt.data(), n, k, t, DisplacementNorm::Euclidean).joint().1)
}

/// Fraction of agents missed by more than `threshold` at the final step
/// under the best joint mode.
pub fn miss_rate(pred: &Tensor, gt: &Tensor, threshold: f64) -> Result<f64, ShapeError> {
    let (p, k, n, t) = agents_major(pred, gt)?;
    let errs = ModeErrors::new(&p, gt.data(), n, k, t, DisplacementNorm::Euclidean);
    Ok(errs.misses(threshold) as f64 / n as f64)
}

/// Quality and size figures for one model on one scenario split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub split: &'static str,
    pub samples: usize,
    pub ade_k: f64,
    pub fde_k: f64,
    pub min_joint_ade: f64,
    pub miss_rate: f64,
    pub modes_k: usize,
    pub effective_params: usize,
    pub additional_params: usize,
    pub score: f64,
}

impl EvalReport {
    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", self.scenario);
        let _ = writeln!(s, "split={}", self.split);
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "ade_k={}", self.ade_k);
        let _ = writeln!(s, "fde_k={}", self.fde_k);
        let _ = writeln!(s, "min_joint_ade={}", self.min_joint_ade);
        let _ = writeln!(s, "miss_rate={}", self.miss_rate);
        let _ = writeln!(s, "modes_k={}", self.modes_k);
        let _ = writeln!(s, "effective_params={}", self.effective_params);
        let _ = writeln!(s, "additional_params={}", self.additional_params);
        let _ = writeln!(s, "score={}", self.score);
        s
    }
}

/// Displacement metrics of `model` over one split, averaged over samples
/// (and agents, for the per-agent metrics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quality {
    pub samples: usize,
    pub ade_k: f64,
    pub fde_k: f64,
    pub min_joint_ade: f64,
    pub miss_rate: f64,
}

const EVAL_BATCH: usize = 64;

/// `norm` applies to ADE, FDE and joint ADE; misses always use Euclidean
/// distance.
pub fn evaluate(
    model: &ForecastModel,
    data: &SceneDataset,
    split: Split,
    threshold: f64,
    norm: DisplacementNorm,
) -> Result<Quality, ModelError> {
    let indices = data.indices(split);
    let (agents, steps, modes) = (data.agents(), data.t_pred(), model.modes_k());
    let mut q = Quality {
        samples: indices.len(),
        ade_k: 0.0,
        fde_k: 0.0,
        min_joint_ade: 0.0,
        miss_rate: 0.0,
    };
    if indices.is_empty() {
        return Ok(q);
    }
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = TrajectoryBatch::from_samples(data, chunk);
        let pred = predict(model, &batch)?;
        let per_sample = agents * modes * steps * 2;
        let truth = agents * steps * 2;
        for b in 0..chunk.len() {
            let (p, y) = (
                &pred.data()[b * per_sample..(b + 1) * per_sample],
                &batch.future.data()[b * truth..(b + 1) * truth],
            );
            let errs = ModeErrors::new(p, y, agents, modes, steps, norm);
            for n in 0..agents {
                q.ade_k += errs.agent_ade(n);
                q.fde_k += errs.agent_fde(n);
            }
            q.min_joint_ade += errs.joint().1;
            let euclid = match norm {
                DisplacementNorm::Euclidean => errs,
                DisplacementNorm::Squared => ModeErrors::new(p, y, agents, modes, steps, DisplacementNorm::Euclidean),
            };
            q.miss_rate += euclid.misses(threshold) as f64;
        }
    }
    let samples = indices.len() as f64;
    let agent_samples = samples * agents as f64;
    q.ade_k /= agent_samples;
    q.fde_k /= agent_samples;
    q.min_joint_ade /= samples;
    q.miss_rate /= agent_samples;
    Ok(q)
}

/// Mean best-of-K ADE on the validation split: the quality signal that
/// drives training selection and scoring. Non-finite predictions give +inf.
pub fn validation_ade(model: &ForecastModel, data: &SceneDataset) -> Result<f64, ModelError> {
    let q = evaluate(model, data, Split::Validation, MISS_THRESHOLD, DisplacementNorm::Euclidean)?.ade_k;
    Ok(if q.is_finite() { q } else { f64::INFINITY })
}
