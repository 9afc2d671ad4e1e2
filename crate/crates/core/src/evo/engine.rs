//! Parent selection, the per-scenario generation step and the outer loop.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::hyper::tune_hyperparams;
use crate::metrics::validation_ade;
use crate::model::{ForecastModel, ModelId};
use crate::param::Scope;
use crate::rng;
use crate::scene::SceneDataset;
use crate::train::{train, TrainConfig, TrainError};

use super::mutate::{knowledge_transfer, model_evolution, Birth};
use super::pool::{additional_param_count, KnowledgePool, ModelRecord};
use super::score::{evaluation_score, rank};
use super::{EvoConfig, EvoError};

/// Runs independent jobs `0..n` and returns their results in index order.
pub trait Executor: Sync {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

fn check_compatible(model: &ForecastModel, data: &SceneDataset) -> Result<(), EvoError> {
    let incompatible = |reason| EvoError::Incompatible {
        scenario: data.id().into(),
        reason,
    };
    if model.horizon().obs != data.t_obs() || model.horizon().pred != data.t_pred() {
        return Err(incompatible("observation or prediction horizon differs"));
    }
    if model.context_dim() != data.context_dim() {
        return Err(incompatible("context width differs"));
    }
    Ok(())
}

/// Scores every record not yet evaluated on `data`'s scenario, then returns
/// the index of the record with the highest `score * decay^children`. Ties
/// go to fewer children, then to the earlier record.
pub fn select_parent(pool: &mut KnowledgePool, data: &SceneDataset, cfg: &EvoConfig) -> Result<usize, EvoError> {
    let scenario = data.id();
    let unit = pool.param_unit();
    for r in pool.records_mut() {
        if r.scores.contains_key(scenario) {
            continue;
        }
        check_compatible(&r.model, data)?;
        let q = validation_ade(&r.model, data)?;
        let s = evaluation_score(q, r.additional_params, cfg.penalty_a, unit);
        r.scores.insert(scenario.into(), s);
        r.quality.insert(scenario.into(), q);
    }
    let mut best: Option<(usize, f64, u32)> = None;
    for (i, r) in pool.records().iter().enumerate() {
        let rk = rank(r.scores[scenario], r.children, cfg.rank_decay);
        let better = match best {
            None => true,
            Some((_, brk, bg)) => rk > brk || (rk == brk && r.children < bg),
        };
        if better {
            best = Some((i, rk, r.children));
        }
    }
    Ok(best.expect("pool always holds the meta-model").0)
}

/// One trained (or diverged) candidate of a generation.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSummary {
    pub index: usize,
    pub model: ModelId,
    /// Validation ADE; infinite when training diverged.
    pub q: f64,
    pub additional_params: usize,
    pub score: f64,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub scenario: String,
    pub generation: u32,
    pub parent: ModelId,
    /// Record index of the appended winner; `None` if every candidate
    /// diverged.
    pub appended: Option<usize>,
    /// Position of the winner in `candidates`.
    pub winner: Option<usize>,
    pub candidates: Vec<CandidateSummary>,
}

/// Selects a parent for `data`'s scenario, derives `cfg.submodels`
/// candidates from it, trains and scores them against a snapshot of the
/// pool, and appends the best-scoring one.
///
/// Candidate `j` draws from a stream keyed by `(generation, scenario_index,
/// j)`, so the outcome does not depend on how `exec` schedules the jobs.
pub fn run_generation<E: Executor>(
    pool: &mut KnowledgePool,
    data: &SceneDataset,
    scenario_index: usize,
    generation: u32,
    cfg: &EvoConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    exec: &E,
) -> Result<GenerationOutcome, EvoError> {
    cfg.validate()?;
    data.require_trainable()?;
    let parent_index = select_parent(pool, data, cfg)?;
    let birth = Birth {
        scope: Scope::scenario(data.id()),
        generation,
    };
    let snapshot: &KnowledgePool = pool;
    let parent = &snapshot.records()[parent_index].model;
    let key = |j: usize| [u64::from(generation), scenario_index as u64, j as u64];

    let results = exec.map(cfg.submodels, |j| {
        let mut rng = rng::derive(seed, "candidate", &key(j));
        let evolved = model_evolution(parent, cfg.rho1, cfg.min_layers, &birth, &mut rng);
        let child = knowledge_transfer(&evolved, parent, cfg.rho2, &birth, &mut rng);
        let hyper = tune_hyperparams(parent.hyper(), cfg.rho_h, &mut rng);
        let train_seed: u64 = rng::derive(seed, "candidate-train", &key(j)).random();
        match train(&child, data, train_cfg, &hyper, train_seed) {
            Ok(t) => {
                let p = additional_param_count(&t.model, snapshot);
                let score = evaluation_score(t.q, p, cfg.penalty_a, snapshot.param_unit());
                let summary = CandidateSummary {
                    index: j,
                    model: t.model.id(),
                    q: t.q,
                    additional_params: p,
                    score,
                    diverged_at: None,
                };
                Ok((Some(t.model), summary))
            }
            Err(TrainError::Diverged { step }) => {
                let mut child = child;
                child.set_hyper(hyper);
                child.seal();
                let summary = CandidateSummary {
                    index: j,
                    model: child.id(),
                    q: f64::INFINITY,
                    additional_params: additional_param_count(&child, snapshot),
                    score: 0.0,
                    diverged_at: Some(step),
                };
                Ok((None, summary))
            }
            Err(e) => Err(EvoError::from(e)),
        }
    });

    let parent_id = parent.id();
    let mut best: Option<(ForecastModel, usize)> = None;
    let mut candidates: Vec<CandidateSummary> = Vec::with_capacity(results.len());
    for r in results {
        let (model, summary) = r?;
        if let Some(model) = model {
            if best.as_ref().is_none_or(|(_, w)| summary.score > candidates[*w].score) {
                best = Some((model, candidates.len()));
            }
        }
        candidates.push(summary);
    }
    let winner = best.as_ref().map(|(_, w)| *w);
    let appended = match best {
        Some((model, w)) => {
            let c = &candidates[w];
            Some(pool.append(model, Some((data.id(), c.score, c.q)))?)
        }
        None => None,
    };
    pool.records_mut()[parent_index].children += 1;
    Ok(GenerationOutcome {
        scenario: data.id().into(),
        generation,
        parent: parent_id,
        appended,
        winner,
        candidates,
    })
}

/// Seeds a pool with `meta` and runs `cfg.generations` rounds over the
/// scenarios in order. `observe` sees the pool after each generation.
pub fn train_msnet<E: Executor>(
    meta: ForecastModel,
    scenarios: &[SceneDataset],
    cfg: &EvoConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    exec: &E,
    mut observe: impl FnMut(&KnowledgePool, &GenerationOutcome),
) -> Result<KnowledgePool, EvoError> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(EvoError::NoScenarios);
    }
    let mut seen = BTreeSet::new();
    for data in scenarios {
        if !seen.insert(data.id()) {
            return Err(EvoError::DuplicateScenario(data.id().into()));
        }
        check_compatible(&meta, data)?;
        data.require_trainable()?;
    }
    let mut pool = KnowledgePool::new(meta, cfg.param_unit)?;
    for generation in 1..=cfg.generations {
        for (si, data) in scenarios.iter().enumerate() {
            let outcome = run_generation(&mut pool, data, si, generation as u32, cfg, train_cfg, seed, exec)?;
            observe(&pool, &outcome);
        }
    }
    Ok(pool)
}

/// Inference path for a scenario.
#[derive(Debug, Clone, Copy)]
pub struct Assembled<'a> {
    pub record: &'a ModelRecord,
    /// True when no record was ever scored on the scenario and the
    /// meta-model is returned instead.
    pub fallback: bool,
}

/// The record with the highest cached score on `scenario` (earliest on
/// ties), or the meta-model when the scenario was never evaluated.
pub fn assemble_path<'a>(pool: &'a KnowledgePool, scenario: &str) -> Assembled<'a> {
    let mut best: Option<(&ModelRecord, f64)> = None;
    for r in pool.records() {
        if let Some(s) = r.score(scenario) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((r, s));
            }
        }
    }
    match best {
        Some((record, _)) => Assembled {
            record,
            fallback: false,
        },
        None => Assembled {
            record: pool.meta(),
            fallback: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evo::ModelRecord;
    use crate::model::{build_meta_model, effective_param_count, Horizon};
    use crate::param::{BlockId, ParamBlock};
    use crate::scene::{gen_scene, SceneKind, SceneSpec};
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn scene(kind: SceneKind, count: usize) -> SceneDataset {
        let mut spec = SceneSpec::new(kind, 11);
        spec.count = count;
        gen_scene(&spec).unwrap().split((0.8, 0.1, 0.1), 11).unwrap()
    }

    fn meta() -> ForecastModel {
        build_meta_model(&[16, 16], 2, Horizon::default(), 0, 5).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 20,
            ..TrainConfig::default()
        }
    }

    /// Pool whose records all score `scores[i]` on scenario `x` with
    /// `children[i]` selections.
    fn ranked_pool(scores: &[f64], children: &[u32]) -> (KnowledgePool, SceneDataset) {
        let data = scene(SceneKind::Straight, 20);
        let m = meta();
        let mut pool = KnowledgePool::new(m.clone(), None).unwrap();
        let birth = Birth {
            scope: Scope::scenario(data.id()),
            generation: 1,
        };
        for i in 1..scores.len() {
            let parent = pool.records()[i - 1].model.clone();
            let c = knowledge_transfer(
                &model_evolution(&parent, 0.0, 1, &birth, &mut rng::seeded(i as u64)),
                &parent,
                0.0,
                &birth,
                &mut rng::seeded(i as u64),
            );
            pool.append(c, None).unwrap();
        }
        for (i, r) in pool.records_mut().iter_mut().enumerate() {
            r.scores.insert(data.id().into(), scores[i]);
            r.children = children[i];
        }
        (pool, data)
    }

    #[test]
    fn selection_uses_decayed_rank() {
        let cfg = EvoConfig::default();
        let (mut pool, data) = ranked_pool(&[0.5, 0.6], &[0, 3]);
        assert_eq!(select_parent(&mut pool, &data, &cfg).unwrap(), 0);
        let (mut pool, data) = ranked_pool(&[0.5, 0.6], &[0, 0]);
        assert_eq!(select_parent(&mut pool, &data, &cfg).unwrap(), 1);
    }

    #[test]
    fn selection_ties_prefer_fewer_children_then_earlier() {
        let cfg = EvoConfig {
            rank_decay: 1.0,
            ..EvoConfig::default()
        };
        let (mut pool, data) = ranked_pool(&[0.5, 0.5, 0.5], &[2, 1, 1]);
        assert_eq!(select_parent(&mut pool, &data, &cfg).unwrap(), 1);
    }

    #[test]
    fn singleton_pool_selects_meta_and_caches_score() {
        let data = scene(SceneKind::Turn, 20);
        let mut pool = KnowledgePool::new(meta(), None).unwrap();
        assert_eq!(select_parent(&mut pool, &data, &EvoConfig::default()).unwrap(), 0);
        let s = pool.meta().score(data.id()).unwrap();
        let q = validation_ade(&pool.meta().model, &data).unwrap();
        assert_eq!(s, evaluation_score(q, effective_param_count(&pool.meta().model), 0.8, pool.param_unit()));
        assert_eq!(pool.meta().additional_params, pool.param_unit());
    }

    fn frozen_hashes(pool: &KnowledgePool) -> BTreeMap<BlockId, ParamBlock> {
        pool.store().clone()
    }

    #[test]
    fn degenerate_generation_shares_everything() {
        let data = scene(SceneKind::Straight, 30);
        let m = meta();
        let mut pool = KnowledgePool::new(m.clone(), None).unwrap();
        let cfg = EvoConfig {
            rho1: 0.0,
            rho2: 0.0,
            submodels: 1,
            ..EvoConfig::default()
        };
        let tc = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let out = run_generation(&mut pool, &data, 0, 1, &cfg, &tc, 1, &Sequential).unwrap();
        let child = &pool.records()[out.appended.unwrap()];
        assert_eq!(child.additional_params, m.head().param_count());
        for (a, b) in m.components().iter().zip(child.model.components()) {
            assert_eq!(a.len(), b.len());
            assert!(b.slots().iter().all(|s| s.mode.is_shared()));
        }
        assert_eq!(pool.meta().children, 1);
    }

    #[test]
    fn generation_appends_one_record_and_accounts_params() {
        let data = scene(SceneKind::Roundabout, 40);
        let mut pool = KnowledgePool::new(meta(), None).unwrap();
        let cfg = EvoConfig {
            rho2: 0.5,
            ..EvoConfig::default()
        };
        let before = frozen_hashes(&pool);
        let total = pool.total_params();
        let out = run_generation(&mut pool, &data, 0, 1, &cfg, &quick(), 9, &Sequential).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(out.candidates.len(), 3);
        let rec = &pool.records()[1];
        // independent set difference over block ids
        let ids: BTreeMap<BlockId, usize> = rec
            .model
            .layers()
            .flat_map(|l| l.params().iter().map(|p| (p.id(), p.size())))
            .collect();
        let fresh: usize = ids.iter().filter(|(id, _)| !before.contains_key(id)).map(|(_, s)| s).sum();
        assert_eq!(pool.total_params() - total, fresh);
        assert_eq!(rec.additional_params, fresh);
        for (id, b) in &before {
            assert_eq!(&pool.store()[id], b);
            assert!(pool.store()[id].verify());
        }
        let w = &out.candidates[out.winner.unwrap()];
        assert!(out.candidates.iter().all(|c| c.score <= w.score));
        assert_eq!(rec.score(data.id()), Some(w.score));
    }

    #[test]
    fn all_diverged_appends_nothing() {
        let data = scene(SceneKind::Straight, 30);
        let mut m = meta();
        let mut hyper = m.hyper().clone();
        hyper.learning_rate = crate::HyperGrid::new(vec![1e30], 1).unwrap();
        m.set_hyper(hyper);
        m.seal();
        let mut pool = KnowledgePool::new(m, None).unwrap();
        let out = run_generation(&mut pool, &data, 0, 1, &EvoConfig::default(), &quick(), 2, &Sequential).unwrap();
        assert_eq!(out.appended, None);
        assert!(out.candidates.iter().all(|c| c.diverged_at.is_some() && c.score == 0.0));
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.meta().children, 1);
    }

    struct Reversed;

    impl Executor for Reversed {
        fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
            let mut out: Vec<(usize, T)> = (0..n).rev().map(|i| (i, f(i))).collect();
            out.sort_by_key(|(i, _)| *i);
            out.into_iter().map(|(_, t)| t).collect()
        }
    }

    fn manifest(pool: &KnowledgePool) -> Vec<(ModelId, Vec<(String, u64)>, u32)> {
        pool.records()
            .iter()
            .map(|r: &ModelRecord| {
                (
                    r.id(),
                    r.scores.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect(),
                    r.children,
                )
            })
            .collect()
    }

    #[test]
    fn outer_loop_counts_and_determinism() {
        let scenes = [scene(SceneKind::Straight, 30), scene(SceneKind::Turn, 30)];
        let cfg = EvoConfig {
            generations: 2,
            submodels: 2,
            ..EvoConfig::default()
        };
        let mut log = Vec::new();
        let a = train_msnet(meta(), &scenes, &cfg, &quick(), 3, &Sequential, |_, o| {
            log.push((o.scenario.clone(), o.generation))
        })
        .unwrap();
        assert_eq!(a.len(), 1 + 4);
        assert_eq!(log[1], ("turn".into(), 1));
        let b = train_msnet(meta(), &scenes, &cfg, &quick(), 3, &Reversed, |_, _| {}).unwrap();
        assert_eq!(manifest(&a), manifest(&b));
        let c = train_msnet(meta(), &scenes, &cfg, &quick(), 4, &Sequential, |_, _| {}).unwrap();
        assert_ne!(manifest(&a), manifest(&c));
    }

    #[test]
    fn single_generation_single_scenario() {
        let scenes = [scene(SceneKind::Merging, 30)];
        let cfg = EvoConfig {
            generations: 1,
            ..EvoConfig::default()
        };
        let pool = train_msnet(meta(), &scenes, &cfg, &quick(), 1, &Sequential, |_, _| {}).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn best_score_never_drops() {
        let scenes = [scene(SceneKind::Straight, 30), scene(SceneKind::Roundabout, 30)];
        let cfg = EvoConfig {
            generations: 3,
            submodels: 2,
            ..EvoConfig::default()
        };
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        train_msnet(meta(), &scenes, &cfg, &quick(), 8, &Sequential, |pool, o| {
            let now = pool
                .records()
                .iter()
                .filter_map(|r| r.score(&o.scenario))
                .fold(0.0, f64::max);
            let prev = best.insert(o.scenario.clone(), now).unwrap_or(0.0);
            assert!(now >= prev);
        })
        .unwrap();
    }

    #[test]
    fn path_assembly_and_fallback() {
        let pool = KnowledgePool::new(meta(), None).unwrap();
        let a = assemble_path(&pool, "nowhere");
        assert!(a.fallback);
        assert_eq!(a.record.id(), pool.meta().id());

        let scenes = [scene(SceneKind::Straight, 30)];
        let pool = train_msnet(meta(), &scenes, &EvoConfig::default(), &quick(), 2, &Sequential, |_, _| {}).unwrap();
        let a = assemble_path(&pool, "straight");
        assert!(!a.fallback);
        let max = pool.records().iter().filter_map(|r| r.score("straight")).fold(0.0, f64::max);
        assert_eq!(a.record.score("straight"), Some(max));
        assert!(effective_param_count(&a.record.model) <= pool.total_params());
    }

    #[test]
    fn mismatched_scenarios_rejected() {
        let scenes = [scene(SceneKind::Straight, 30), scene(SceneKind::Straight, 30)];
        let r = train_msnet(meta(), &scenes, &EvoConfig::default(), &quick(), 2, &Sequential, |_, _| {});
        assert!(matches!(r, Err(EvoError::DuplicateScenario(_))));
        let mut spec = SceneSpec::new(SceneKind::Turn, 1);
        spec.t_obs = 5;
        let short = gen_scene(&spec).unwrap().split((0.8, 0.1, 0.1), 1).unwrap();
        let r = train_msnet(meta(), &[short], &EvoConfig::default(), &quick(), 2, &Sequential, |_, _| {});
        assert!(matches!(r, Err(EvoError::Incompatible { .. })));
        let r = train_msnet(meta(), &[], &EvoConfig::default(), &quick(), 2, &Sequential, |_, _| {});
        assert_eq!(r.unwrap_err(), EvoError::NoScenarios);
    }

    #[test]
    fn config_validation() {
        let bad = [
            EvoConfig { rho1: 1.5, ..EvoConfig::default() },
            EvoConfig { penalty_a: -0.1, ..EvoConfig::default() },
            EvoConfig { generations: 0, ..EvoConfig::default() },
            EvoConfig { param_unit: Some(0), ..EvoConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(EvoConfig::default().validate().is_ok());
    }

    #[test]
    fn pool_round_trips_through_parts() {
        let scenes = [scene(SceneKind::Straight, 30)];
        let pool = train_msnet(meta(), &scenes, &EvoConfig::default(), &quick(), 2, &Sequential, |_, _| {}).unwrap();
        let again = KnowledgePool::from_parts(pool.records().to_vec(), pool.store().clone(), pool.param_unit()).unwrap();
        assert_eq!(again, pool);
        let mut store = pool.store().clone();
        let (id, _) = store.pop_first().unwrap();
        assert!(matches!(
            KnowledgePool::from_parts(pool.records().to_vec(), store, pool.param_unit()),
            Err(EvoError::MissingBlock(m)) if m == id
        ));
    }
}
