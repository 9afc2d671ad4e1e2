//! Whitespace-separated `frame_id agent_id x y` trajectory text.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{Sample, SceneDataset, SceneError};

struct Point {
    frame: i64,
    x: f32,
    y: f32,
    line: usize,
}

fn integral(field: &str, line: usize, what: &'static str) -> Result<i64, SceneError> {
    let v: f64 = field
        .parse()
        .map_err(|_| SceneError::Malformed { line, reason: what })?;
    if !v.is_finite() || libm::trunc(v) != v || v.abs() > 9.0e15 {
        return Err(SceneError::Malformed { line, reason: what });
    }
    Ok(v as i64)
}

fn coordinate(field: &str, line: usize) -> Result<f32, SceneError> {
    let v: f32 = field.parse().map_err(|_| SceneError::Malformed {
        line,
        reason: "coordinate is not a number",
    })?;
    if !v.is_finite() {
        return Err(SceneError::Malformed {
            line,
            reason: "coordinate is not finite",
        });
    }
    Ok(v)
}

/// Parses trajectory text into single-agent windows of `t_obs + t_pred`
/// frames, sliding by `stride` over each agent's contiguous runs.
///
/// The frame step is the smallest positive gap between consecutive frames
/// of any agent; larger gaps split a track. Samples are ordered by agent id,
/// then window start.
pub fn parse_trajectory_text(
    text: &str,
    id: &str,
    t_obs: usize,
    t_pred: usize,
    stride: usize,
) -> Result<SceneDataset, SceneError> {
    if t_obs == 0 || t_pred == 0 || stride == 0 {
        return Err(SceneError::Spec("t_obs, t_pred and stride must be at least 1"));
    }
    let mut tracks: BTreeMap<i64, Vec<Point>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(SceneError::Malformed {
                line,
                reason: "expected four fields: frame_id agent_id x y",
            });
        }
        let frame = integral(fields[0], line, "frame id is not an integer")?;
        let agent = integral(fields[1], line, "agent id is not an integer")?;
        let x = coordinate(fields[2], line)?;
        let y = coordinate(fields[3], line)?;
        tracks.entry(agent).or_default().push(Point { frame, x, y, line });
    }

    let mut step: Option<i64> = None;
    for points in tracks.values_mut() {
        points.sort_by_key(|p| (p.frame, p.line));
        for w in points.windows(2) {
            let gap = w[1].frame - w[0].frame;
            if gap == 0 {
                return Err(SceneError::Malformed {
                    line: w[1].line,
                    reason: "duplicate frame for agent",
                });
            }
            step = Some(step.map_or(gap, |s| s.min(gap)));
        }
    }
    let step = step.unwrap_or(1);

    let window = t_obs + t_pred;
    let mut samples = Vec::new();
    for points in tracks.values() {
        let mut run_start = 0;
        for end in 1..=points.len() {
            let broken = end == points.len() || points[end].frame - points[end - 1].frame != step;
            if !broken {
                continue;
            }
            let run = &points[run_start..end];
            let mut start = 0;
            while start + window <= run.len() {
                let w = &run[start..start + window];
                let flat = |ps: &[Point]| ps.iter().flat_map(|p| [p.x, p.y]).collect::<Vec<f32>>();
                samples.push(Sample {
                    observed: flat(&w[..t_obs]),
                    future: flat(&w[t_obs..]),
                    context: None,
                });
                start += stride;
            }
            run_start = end;
        }
    }
    if samples.is_empty() {
        return Err(SceneError::NoWindows { window });
    }
    SceneDataset::new(id, t_obs, t_pred, 1, samples)
}

/// Writes a dataset in the text format. Agent `n` of sample `s` becomes agent
/// id `n` on frames `s * (W + 1) ..`, `W = t_obs + t_pred`; the one-frame gap
/// between samples keeps windows from joining when read back.
pub fn to_trajectory_text(data: &SceneDataset) -> String {
    let (to, tp, agents) = (data.t_obs(), data.t_pred(), data.agents());
    let window = to + tp;
    let mut out = String::new();
    for (s, sample) in data.samples().iter().enumerate() {
        for t in 0..window {
            let frame = s * (window + 1) + t;
            for n in 0..agents {
                let (x, y) = if t < to {
                    let i = (n * to + t) * 2;
                    (sample.observed[i], sample.observed[i + 1])
                } else {
                    let i = (n * tp + t - to) * 2;
                    (sample.future[i], sample.future[i + 1])
                };
                let _ = writeln!(out, "{frame} {n} {x} {y}");
            }
        }
    }
    out
}
