//! The evolutionary engine: the knowledge pool, parent selection, structural
//! mutation, knowledge transfer, scoring and the generation loop.

mod engine;
mod mutate;
mod pool;
mod score;

pub use engine::{
    assemble_path, run_generation, select_parent, train_msnet, Assembled, CandidateSummary,
    GenerationOutcome, Sequential, Executor,
};
pub use mutate::{
    apply_mutations, knowledge_transfer, model_evolution, mutation_branch, transfer_coin, Birth,
    Mutation,
};
pub use pool::{additional_param_count, KnowledgePool, ModelRecord};
pub use score::{evaluation_score, rank};

use alloc::string::String;

use crate::model::{ModelError, ModelId};
use crate::param::BlockId;
use crate::scene::SceneError;
use crate::train::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct EvoConfig {
    /// Structural mutation rate: insert below `rho1 / 2`, delete below `rho1`.
    pub rho1: f64,
    /// Probability that an inherited layer becomes a trainable copy.
    pub rho2: f64,
    /// Hyperparameter walk rate.
    pub rho_h: f64,
    /// Penalty base for additional parameters.
    pub penalty_a: f64,
    pub generations: usize,
    pub submodels: usize,
    /// Parameters per penalty unit; `None` uses the meta-model size.
    pub param_unit: Option<usize>,
    pub rank_decay: f64,
    pub min_layers: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            rho1: 0.2,
            rho2: 0.2,
            rho_h: 0.2,
            penalty_a: 0.8,
            generations: 3,
            submodels: 3,
            param_unit: None,
            rank_decay: 0.9,
            min_layers: 1,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvoError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.rho1) {
            return Err(EvoError::Config("rho1 must lie in [0, 1]"));
        }
        if !unit(self.rho2) {
            return Err(EvoError::Config("rho2 must lie in [0, 1]"));
        }
        if !unit(self.rho_h) {
            return Err(EvoError::Config("rho_h must lie in [0, 1]"));
        }
        if !unit(self.penalty_a) {
            return Err(EvoError::Config("penalty_a must lie in [0, 1]"));
        }
        if !(self.rank_decay > 0.0 && self.rank_decay <= 1.0) {
            return Err(EvoError::Config("rank_decay must lie in (0, 1]"));
        }
        if self.generations == 0 || self.submodels == 0 {
            return Err(EvoError::Config("generations and submodels must be at least 1"));
        }
        if self.param_unit == Some(0) {
            return Err(EvoError::Config("param_unit must be at least 1"));
        }
        if self.min_layers == 0 {
            return Err(EvoError::Config("min_layers must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvoError {
    #[error("invalid evolution config: {0}")]
    Config(&'static str),
    #[error("no scenarios given")]
    NoScenarios,
    #[error("scenario '{0}' appears twice")]
    DuplicateScenario(String),
    #[error("scenario '{scenario}' does not fit the model: {reason}")]
    Incompatible { scenario: String, reason: &'static str },
    #[error("model {0} is already in the pool")]
    DuplicateModel(ModelId),
    #[error("model {0} is not in the pool")]
    UnknownModel(ModelId),
    #[error("parameter block {0} is missing from the store or differs from it")]
    MissingBlock(BlockId),
    #[error("model {0}: {1}")]
    Corrupt(ModelId, &'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] SceneError),
}
