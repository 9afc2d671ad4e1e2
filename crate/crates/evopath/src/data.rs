//! Loading scenario datasets from trajectory files and config entries.

use std::path::{Path, PathBuf};

use evopath_core::scene::parse_trajectory_text;
use evopath_core::{gen_scene, SceneDataset, SceneError};

use crate::config::{RunConfig, ScenarioConfig, Source};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: SceneError },
    #[error("scenario '{id}': {source}")]
    Scene { id: String, source: SceneError },
    #[error("{0}")]
    Evo(String),
}

/// Reads a `frame_id agent_id x y` file into single-agent windows. The
/// dataset id is the file stem.
pub fn load_trajectory_file(
    path: &Path,
    t_obs: usize,
    t_pred: usize,
    stride: usize,
) -> Result<SceneDataset, DataError> {
    let id = path.file_stem().map_or_else(|| "trajectories".into(), |s| s.to_string_lossy());
    load_as(path, &id, t_obs, t_pred, stride)
}

fn load_as(path: &Path, id: &str, t_obs: usize, t_pred: usize, stride: usize) -> Result<SceneDataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trajectory_text(&text, id, t_obs, t_pred, stride).map_err(|source| DataError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Builds and splits the dataset for one configured scenario.
pub fn scenario_dataset(cfg: &RunConfig, scenario: &ScenarioConfig) -> Result<SceneDataset, DataError> {
    let raw = match scenario.source(cfg.seed, &cfg.model) {
        Source::Synthetic(spec) => gen_scene(&spec).map_err(|source| DataError::Scene {
            id: scenario.id.clone(),
            source,
        })?,
        Source::File { path, stride } => load_as(&path, &scenario.id, cfg.model.t_obs, cfg.model.t_pred, stride)?,
    };
    split(cfg, raw, &scenario.id)
}

/// Loads `path` under the id `id` and splits it like a configured scenario.
pub fn file_dataset(cfg: &RunConfig, id: &str, path: &Path) -> Result<SceneDataset, DataError> {
    let raw = load_as(path, id, cfg.model.t_obs, cfg.model.t_pred, 1)?;
    split(cfg, raw, id)
}

fn split(cfg: &RunConfig, raw: SceneDataset, id: &str) -> Result<SceneDataset, DataError> {
    let renamed = if raw.id() == id {
        raw
    } else {
        SceneDataset::new(id, raw.t_obs(), raw.t_pred(), raw.agents(), raw.samples().to_vec()).map_err(
            |source| DataError::Scene {
                id: id.into(),
                source,
            },
        )?
    };
    renamed
        .split(cfg.split_fractions(), cfg.seed)
        .map_err(|source| DataError::Scene { id: id.into(), source })
}

/// All configured scenarios, in config order.
pub fn all_datasets(cfg: &RunConfig) -> Result<Vec<SceneDataset>, DataError> {
    cfg.scenarios.iter().map(|s| scenario_dataset(cfg, s)).collect()
}
