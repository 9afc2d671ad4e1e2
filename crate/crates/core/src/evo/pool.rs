//! The append-only knowledge pool.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{effective_param_count, ComponentKind, ForecastModel, LayerMode, ModelId};
use crate::param::{BlockId, ParamBlock, Scope};

use super::EvoError;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model: ForecastModel,
    /// Score per scenario id, filled when first evaluated there.
    pub scores: BTreeMap<String, f64>,
    /// Validation ADE per scenario id, alongside `scores`.
    pub quality: BTreeMap<String, f64>,
    /// Times this record has been picked as a parent.
    pub children: u32,
    /// New parameters this model added to the pool when appended.
    pub additional_params: usize,
}

impl ModelRecord {
    pub fn id(&self) -> ModelId {
        self.model.id()
    }

    pub fn scope(&self) -> &Scope {
        &self.model.lineage().scope
    }

    pub fn generation(&self) -> u32 {
        self.model.lineage().generation
    }

    pub fn score(&self, scenario: &str) -> Option<f64> {
        self.scores.get(scenario).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgePool {
    records: Vec<ModelRecord>,
    index: BTreeMap<ModelId, usize>,
    store: BTreeMap<BlockId, ParamBlock>,
    param_unit: usize,
}

/// Owned blocks of `model` whose ids the pool does not hold yet, each id
/// counted once.
pub fn additional_param_count(model: &ForecastModel, pool: &KnowledgePool) -> usize {
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for layer in owned_layers(model) {
        for p in layer.params() {
            if p.is_trainable() && !pool.store.contains_key(&p.id()) && seen.insert(p.id()) {
                total += p.size();
            }
        }
    }
    total
}

fn owned_layers(model: &ForecastModel) -> impl Iterator<Item = &crate::layer::Layer> {
    model
        .components()
        .iter()
        .flat_map(|c| c.slots().iter().filter(|s| s.mode == LayerMode::Owned).map(|s| &s.layer))
        .chain(core::iter::once(model.head()))
}

impl KnowledgePool {
    /// A pool holding only `meta`. `param_unit` defaults to its size.
    pub fn new(meta: ForecastModel, param_unit: Option<usize>) -> Result<Self, EvoError> {
        if meta.lineage().parent.is_some() || meta.lineage().scope != Scope::Meta {
            return Err(EvoError::Corrupt(meta.id(), "the first record must be a meta-model"));
        }
        if meta.components().iter().any(|c| c.slots().iter().any(|s| s.mode != LayerMode::Owned)) {
            return Err(EvoError::Corrupt(meta.id(), "a meta-model cannot share layers"));
        }
        let size = effective_param_count(&meta);
        let mut pool = KnowledgePool {
            records: Vec::new(),
            index: BTreeMap::new(),
            store: BTreeMap::new(),
            param_unit: param_unit.unwrap_or(size).max(1),
        };
        pool.append(meta, None)?;
        Ok(pool)
    }

    /// Rebuilds a pool from persisted records and blocks, checking that
    /// every reference resolves and every id matches its content.
    pub fn from_parts(
        records: Vec<ModelRecord>,
        store: BTreeMap<BlockId, ParamBlock>,
        param_unit: usize,
    ) -> Result<Self, EvoError> {
        for (id, block) in &store {
            if *id != block.id() || !block.verify() {
                return Err(EvoError::MissingBlock(*id));
            }
        }
        let mut pool = KnowledgePool {
            records: Vec::with_capacity(records.len()),
            index: BTreeMap::new(),
            store,
            param_unit: param_unit.max(1),
        };
        for (i, r) in records.into_iter().enumerate() {
            let m = &r.model;
            if m.compute_id() != m.id() {
                return Err(EvoError::Corrupt(m.id(), "model id does not match its contents"));
            }
            if (i == 0) != m.lineage().parent.is_none() {
                return Err(EvoError::Corrupt(m.id(), "only the first record may lack a parent"));
            }
            if let Some(parent) = m.lineage().parent {
                if !pool.index.contains_key(&parent) {
                    return Err(EvoError::UnknownModel(parent));
                }
            }
            pool.check_references(m)?;
            for layer in m.layers() {
                for p in layer.params() {
                    match pool.store.get(&p.id()) {
                        Some(b) if b.tensor() == p.tensor() => {}
                        _ => return Err(EvoError::MissingBlock(p.id())),
                    }
                }
            }
            if pool.index.insert(m.id(), i).is_some() {
                return Err(EvoError::DuplicateModel(m.id()));
            }
            pool.records.push(r);
        }
        if pool.records.is_empty() {
            return Err(EvoError::Config("a pool needs at least the meta-model"));
        }
        Ok(pool)
    }

    /// Every shared slot must point at an existing record whose layer at
    /// that position has the same blocks.
    fn check_references(&self, model: &ForecastModel) -> Result<(), EvoError> {
        for (ci, c) in model.components().iter().enumerate() {
            for s in c.slots() {
                if let LayerMode::Shared { model: owner, index } = s.mode {
                    let rec = self.get(owner).ok_or(EvoError::UnknownModel(owner))?;
                    let target = rec.model.components()[ci]
                        .slots()
                        .get(index)
                        .ok_or(EvoError::Corrupt(model.id(), "shared reference out of range"))?;
                    let same = target.layer.params().len() == s.layer.params().len()
                        && target.layer.params().iter().zip(s.layer.params()).all(|(a, b)| a.id() == b.id());
                    if !same || s.layer.params().iter().any(|p| p.is_trainable()) {
                        return Err(EvoError::Corrupt(model.id(), "shared layer differs from its source"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends `model` and stores its new blocks. `scored` caches the home
    /// scenario score and validation error. Returns the record index.
    pub fn append(&mut self, model: ForecastModel, scored: Option<(&str, f64, f64)>) -> Result<usize, EvoError> {
        if self.index.contains_key(&model.id()) {
            return Err(EvoError::DuplicateModel(model.id()));
        }
        if let Some(parent) = model.lineage().parent {
            if !self.index.contains_key(&parent) {
                return Err(EvoError::UnknownModel(parent));
            }
        }
        self.check_references(&model)?;
        for layer in model.layers() {
            for p in layer.params() {
                if !p.is_trainable() && !self.store.contains_key(&p.id()) {
                    return Err(EvoError::MissingBlock(p.id()));
                }
            }
        }
        let additional_params = additional_param_count(&model, self);
        for layer in model.layers() {
            for p in layer.params() {
                self.store.entry(p.id()).or_insert_with(|| p.frozen());
            }
        }
        let mut record = ModelRecord {
            model,
            scores: BTreeMap::new(),
            quality: BTreeMap::new(),
            children: 0,
            additional_params,
        };
        if let Some((scenario, score, q)) = scored {
            record.scores.insert(scenario.into(), score);
            record.quality.insert(scenario.into(), q);
        }
        let i = self.records.len();
        self.index.insert(record.id(), i);
        self.records.push(record);
        Ok(i)
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub(crate) fn records_mut(&mut self) -> &mut [ModelRecord] {
        &mut self.records
    }

    pub fn get(&self, id: ModelId) -> Option<&ModelRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: ModelId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn meta(&self) -> &ModelRecord {
        &self.records[0]
    }

    pub fn store(&self) -> &BTreeMap<BlockId, ParamBlock> {
        &self.store
    }

    pub fn contains_block(&self, id: &BlockId) -> bool {
        self.store.contains_key(id)
    }

    pub fn param_unit(&self) -> usize {
        self.param_unit
    }

    /// Sum of the sizes of all distinct stored blocks.
    pub fn total_params(&self) -> usize {
        self.store.values().map(ParamBlock::size).sum()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Scenario ids with at least one cached score, sorted.
    pub fn scenarios(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .flat_map(|r| r.scores.keys().map(String::as_str))
            .collect()
    }

    /// Distinct layer instances across all records: the set of block-id
    /// tuples, keyed with the component they appear in (`None` for heads).
    pub fn layer_instances(&self) -> BTreeSet<(Option<ComponentKind>, Vec<BlockId>)> {
        let mut out = BTreeSet::new();
        for r in &self.records {
            for c in r.model.components() {
                for l in c.layers() {
                    out.insert((Some(c.kind()), l.params().iter().map(ParamBlock::id).collect()));
                }
            }
            out.insert((None, r.model.head().params().iter().map(ParamBlock::id).collect()));
        }
        out
    }
}
