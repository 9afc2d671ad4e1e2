//! Deterministic synthetic scenes.
//!
//! Each kind is a noiseless kinematic family plus isotropic Gaussian position
//! noise. Paths are computed in `f64` and stored as `f32`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::fmt;
use core::str::FromStr;

use libm::{cos, sin};
use rand::Rng;

use super::{Sample, SceneDataset, SceneError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SceneKind {
    /// Constant velocity along a random heading.
    Straight,
    /// Constant-curvature arc, turning left or right at random.
    Turn,
    /// Counter-clockwise circular motion about the scene origin.
    Roundabout,
    /// Two lanes: one straight, one joining it at an angle and then
    /// following the shared heading.
    Merging,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::Straight,
        SceneKind::Turn,
        SceneKind::Roundabout,
        SceneKind::Merging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Straight => "straight",
            SceneKind::Turn => "turn",
            SceneKind::Roundabout => "roundabout",
            SceneKind::Merging => "merging",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scene kind '{s}'"))
    }
}

/// Radius range of the roundabout ring, scene units.
pub const ROUNDABOUT_RADIUS: (f64, f64) = (6.0, 10.0);
/// Curvature magnitude range for turns, 1 / scene unit.
pub const TURN_CURVATURE: (f64, f64) = (0.04, 0.2);
/// Entry angle range of the merging lane, radians.
pub const MERGE_ANGLE: (f64, f64) = (0.25, 0.5);

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Standard deviation of the additive position noise.
    pub sigma: f64,
    pub speed: (f64, f64),
    pub count: usize,
    pub agents: usize,
    pub seed: u64,
    pub t_obs: usize,
    pub t_pred: usize,
    /// Seconds between frames.
    pub dt: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        SceneSpec {
            kind,
            sigma: 0.02,
            speed: (0.8, 1.6),
            count: 160,
            agents: 2,
            seed,
            t_obs: 8,
            t_pred: 12,
            dt: 0.4,
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(SceneError::Spec("sigma must be finite and non-negative"));
        }
        if self.count == 0 || self.agents == 0 {
            return Err(SceneError::Spec("count and agents must be at least 1"));
        }
        if self.t_obs == 0 || self.t_pred == 0 {
            return Err(SceneError::Spec("horizons must be at least 1"));
        }
        let (lo, hi) = self.speed;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SceneError::Spec("speed range must satisfy 0 < min <= max"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SceneError::Spec("dt must be positive"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Noiseless path for one agent, `len` points.
fn agent_path(
    kind: SceneKind,
    len: usize,
    step: f64,
    lane: usize,
    shared_heading: f64,
    rng: &mut impl Rng,
) -> Vec<(f64, f64)> {
    match kind {
        SceneKind::Straight => {
            let (x0, y0) = (uniform(rng, (-5.0, 5.0)), uniform(rng, (-5.0, 5.0)));
            let h = uniform(rng, (0.0, TAU));
            (0..len)
                .map(|t| {
                    let s = step * t as f64;
                    (x0 + s * cos(h), y0 + s * sin(h))
                })
                .collect()
        }
        SceneKind::Turn => {
            let (x0, y0) = (uniform(rng, (-5.0, 5.0)), uniform(rng, (-5.0, 5.0)));
            let h = uniform(rng, (0.0, TAU));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let k = sign * uniform(rng, TURN_CURVATURE);
            (0..len)
                .map(|t| {
                    let s = step * t as f64;
                    let hs = h + k * s;
                    (x0 + (sin(hs) - sin(h)) / k, y0 - (cos(hs) - cos(h)) / k)
                })
                .collect()
        }
        SceneKind::Roundabout => {
            let r = uniform(rng, ROUNDABOUT_RADIUS);
            let a0 = uniform(rng, (0.0, TAU));
            let w = step / r;
            (0..len)
                .map(|t| {
                    let a = a0 + w * t as f64;
                    (r * cos(a), r * sin(a))
                })
                .collect()
        }
        SceneKind::Merging => {
            let (ux, uy) = (cos(shared_heading), sin(shared_heading));
            // Lane line passes through the origin along the shared heading.
            let along = uniform(rng, (-6.0, 0.0));
            if lane == 0 || len < 3 {
                return (0..len)
                    .map(|t| {
                        let s = along + step * t as f64;
                        (s * ux, s * uy)
                    })
                    .collect();
            }
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let entry = shared_heading + side * uniform(rng, MERGE_ANGLE);
            let (ex, ey) = (cos(entry), sin(entry));
            // Merge at step m; at least one full segment follows it.
            let m = rng.random_range(1..len - 1);
            let (mx, my) = (along * ux, along * uy);
            (0..len)
                .map(|t| {
                    if t <= m {
                        let back = step * (m - t) as f64;
                        (mx - back * ex, my - back * ey)
                    } else {
                        let fwd = step * (t - m) as f64;
                        (mx + fwd * ux, my + fwd * uy)
                    }
                })
                .collect()
        }
    }
}

/// Two independent `N(0, sigma^2)` draws (Box-Muller, via `libm`).
fn gaussian_pair(rng: &mut impl Rng, sigma: f64) -> (f64, f64) {
    let u1 = 1.0 - rng.random::<f64>();
    let theta = TAU * rng.random::<f64>();
    let r = sigma * libm::sqrt(-2.0 * libm::log(u1));
    (r * cos(theta), r * sin(theta))
}

/// Generates `spec.count` joint samples of `spec.agents` agents each.
pub fn gen_scene(spec: &SceneSpec) -> Result<SceneDataset, SceneError> {
    spec.validate()?;
    let mut rng = rng::derive(spec.seed, "scene", &[spec.kind as u64]);
    let len = spec.t_obs + spec.t_pred;
    let mut samples = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let shared_heading = uniform(&mut rng, (-PI, PI));
        let lane_offset = usize::from(rng.random::<bool>());
        let mut observed = Vec::with_capacity(spec.agents * spec.t_obs * 2);
        let mut future = Vec::with_capacity(spec.agents * spec.t_pred * 2);
        for n in 0..spec.agents {
            let step = uniform(&mut rng, spec.speed) * spec.dt;
            let lane = (n + lane_offset) % 2;
            let path = agent_path(spec.kind, len, step, lane, shared_heading, &mut rng);
            for (t, (x, y)) in path.into_iter().enumerate() {
                let (nx, ny) = if spec.sigma > 0.0 {
                    gaussian_pair(&mut rng, spec.sigma)
                } else {
                    (0.0, 0.0)
                };
                let dst = if t < spec.t_obs { &mut observed } else { &mut future };
                dst.push((x + nx) as f32);
                dst.push((y + ny) as f32);
            }
        }
        samples.push(Sample {
            observed,
            future,
            context: None,
        });
    }
    SceneDataset::new(spec.kind.name(), spec.t_obs, spec.t_pred, spec.agents, samples)
}
