//! Evolutionary multi-path sparse forecasting models.
//!
//! A single meta forecasting model seeds a [`KnowledgePool`]. For every
//! scenario the pool grows by one sub-model per generation: a parent is
//! picked by decayed score, mutated structurally, split into tuned copies and
//! frozen shared layers, trained, and scored against the number of new
//! parameters it would add. Inference for a scenario runs only the layers on
//! that scenario's path.
//!
//! The crate is `no_std` and only needs `alloc`. File IO, persistence and the
//! command-line driver live in the `evopath` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod evo;
pub mod grad;
pub mod hash;
pub mod hyper;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod param;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use evo::{
    assemble_path, evaluation_score, knowledge_transfer, model_evolution, run_generation,
    select_parent, train_msnet, EvoConfig, EvoError, Executor, KnowledgePool, ModelRecord,
    Sequential,
};
pub use grad::{count_params, grad_check, ParamFilter};
pub use hash::Hash256;
pub use hyper::{tune_hyperparams, HyperGrid, HyperState};
pub use layer::{Layer, LayerError, LayerGrads, LayerKind};
pub use metrics::{ade_k, evaluate, fde_k, min_joint_ade, miss_rate, DisplacementNorm, EvalReport, Quality};
pub use model::{
    build_meta_model, effective_param_count, predict, wta_loss, ComponentKind, ComponentStack,
    ForecastModel, Horizon, LayerMode, LayerSlot, ModelError, ModelId, TrajectoryBatch,
};
pub use param::{BlockId, Origin, ParamBlock, Scope};
pub use scene::{gen_scene, SceneDataset, SceneError, SceneKind, SceneSpec};
pub use tensor::{ShapeError, Tensor};
pub use train::{train, TrainConfig, TrainError, Trained};
