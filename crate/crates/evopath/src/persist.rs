//! Pool directories: `manifest.json` plus `blocks/<id>.bin`.
//!
//! Blobs are written first and the manifest last, through a temporary file
//! and a rename, so a directory that has a manifest always has every block
//! the manifest names. Loading recomputes every block and model id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evopath_core::param::{decode_blob, encode_blob};
use evopath_core::{
    BlockId, ComponentKind, ComponentStack, ForecastModel, HyperGrid, HyperState, KnowledgePool, Layer,
    LayerKind, LayerMode, LayerSlot, ModelId, ModelRecord, Origin, ParamBlock, Scope, Tensor,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GridSection;

pub const MANIFEST: &str = "manifest.json";
pub const BLOCKS: &str = "blocks";
const FORMAT: &str = "evopath-pool/1";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt pool: {0}")]
    Corrupt(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(msg: impl Into<String>) -> PersistError {
    PersistError::Corrupt(msg.into())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    seed: u64,
    param_unit: usize,
    config: serde_json::Value,
    records: Vec<RecordEntry>,
    blocks: BTreeMap<String, BlockEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordEntry {
    id: String,
    parent: Option<String>,
    scope: String,
    generation: u32,
    modes_k: usize,
    t_obs: usize,
    t_pred: usize,
    /// Non-finite values are stored as `null`.
    scores: BTreeMap<String, Option<f64>>,
    quality: BTreeMap<String, Option<f64>>,
    children: u32,
    additional_params: usize,
    learning_rate: GridSection,
    weight_decay: GridSection,
    components: Vec<ComponentEntry>,
    head: LayerEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentEntry {
    name: String,
    input: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    kind: String,
    input: usize,
    output: usize,
    mode: ModeEntry,
    blocks: Vec<String>,
    trainable: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum ModeEntry {
    Owned,
    Shared { model: String, index: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    shape: Vec<usize>,
    scope: String,
    generation: u32,
    label: String,
}

/// A pool read back from disk.
#[derive(Debug)]
pub struct LoadedPool {
    pub pool: KnowledgePool,
    /// The config echo stored with the pool.
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of the manifest bytes, lowercase hex.
    pub manifest_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn scope_of(name: &str) -> Scope {
    if name == "meta" {
        Scope::Meta
    } else {
        Scope::scenario(name)
    }
}

fn grid(g: &HyperGrid) -> GridSection {
    GridSection {
        values: g.values().to_vec(),
        index: g.index(),
    }
}

fn layer_entry(layer: &Layer, mode: &LayerMode) -> LayerEntry {
    LayerEntry {
        kind: layer.kind().name().into(),
        input: layer.input_width(),
        output: layer.output_width(),
        mode: match *mode {
            LayerMode::Owned => ModeEntry::Owned,
            LayerMode::Shared { model, index } => ModeEntry::Shared {
                model: model.to_hex(),
                index,
            },
        },
        blocks: layer.params().iter().map(|p| p.id().to_hex()).collect(),
        trainable: layer.params().iter().map(ParamBlock::is_trainable).collect(),
    }
}

fn record_entry(r: &ModelRecord) -> RecordEntry {
    let m = &r.model;
    RecordEntry {
        id: m.id().to_hex(),
        parent: m.lineage().parent.map(|p| p.to_hex()),
        scope: m.lineage().scope.name().into(),
        generation: m.lineage().generation,
        modes_k: m.modes_k(),
        t_obs: m.horizon().obs,
        t_pred: m.horizon().pred,
        scores: r.scores.iter().map(|(k, &v)| (k.clone(), finite(v))).collect(),
        quality: r.quality.iter().map(|(k, &v)| (k.clone(), finite(v))).collect(),
        children: r.children,
        additional_params: r.additional_params,
        learning_rate: grid(&m.hyper().learning_rate),
        weight_decay: grid(&m.hyper().weight_decay),
        components: m
            .components()
            .iter()
            .map(|c| ComponentEntry {
                name: c.kind().name().into(),
                input: c.input_width(),
                layers: c.slots().iter().map(|s| layer_entry(&s.layer, &s.mode)).collect(),
            })
            .collect(),
        head: layer_entry(m.head(), &LayerMode::Owned),
    }
}

/// Serialized manifest for `pool`. Byte-identical for identical pools.
pub fn manifest_bytes(pool: &KnowledgePool, config: &serde_json::Value, seed: u64) -> Vec<u8> {
    let manifest = Manifest {
        format: FORMAT.into(),
        seed,
        param_unit: pool.param_unit(),
        config: config.clone(),
        records: pool.records().iter().map(record_entry).collect(),
        blocks: pool
            .store()
            .iter()
            .map(|(id, b)| {
                let o = b.origin();
                (
                    id.to_hex(),
                    BlockEntry {
                        shape: b.tensor().shape().to_vec(),
                        scope: o.scope.name().into(),
                        generation: o.generation,
                        label: o.label.clone(),
                    },
                )
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    bytes
}

pub fn blob_path(dir: &Path, id: &BlockId) -> PathBuf {
    dir.join(BLOCKS).join(format!("{}.bin", id.to_hex()))
}

/// Writes `pool` under `dir` and returns the manifest digest.
pub fn save_pool(
    dir: &Path,
    pool: &KnowledgePool,
    config: &serde_json::Value,
    seed: u64,
) -> Result<String, PersistError> {
    let blocks = dir.join(BLOCKS);
    std::fs::create_dir_all(&blocks).map_err(io(&blocks))?;
    for (id, b) in pool.store() {
        let path = blob_path(dir, id);
        let bytes = encode_blob(b.tensor().data());
        if std::fs::read(&path).is_ok_and(|old| old == bytes) {
            continue;
        }
        std::fs::write(&path, &bytes).map_err(io(&path))?;
    }
    let bytes = manifest_bytes(pool, config, seed);
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let dest = dir.join(MANIFEST);
    std::fs::write(&tmp, &bytes).map_err(io(&tmp))?;
    std::fs::rename(&tmp, &dest).map_err(io(&dest))?;
    Ok(sha256_hex(&bytes))
}

fn parse_id(s: &str, what: &str) -> Result<ModelId, PersistError> {
    s.parse().map_err(|_| corrupt(format!("{what} '{s}' is not a 64-digit hex id")))
}

fn grid_from(g: &GridSection, what: &str) -> Result<HyperGrid, PersistError> {
    HyperGrid::new(g.values.clone(), g.index).map_err(|e| corrupt(format!("{what}: {e}")))
}

/// Reads and fully verifies the pool under `dir`.
pub fn load_pool(dir: &Path) -> Result<LoadedPool, PersistError> {
    let path = dir.join(MANIFEST);
    let bytes = std::fs::read(&path).map_err(io(&path))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unsupported format '{}'", manifest.format)));
    }

    let mut store = BTreeMap::new();
    for (hex, entry) in &manifest.blocks {
        let id = parse_id(hex, "block")?;
        let blob = blob_path(dir, &id);
        let raw = std::fs::read(&blob).map_err(|e| corrupt(format!("{}: {e}", blob.display())))?;
        let values = decode_blob(&raw).map_err(|e| corrupt(format!("{}: {e}", blob.display())))?;
        let tensor = Tensor::new(entry.shape.clone(), values)
            .map_err(|e| corrupt(format!("{}: {e}", blob.display())))?;
        let origin = Origin::new(scope_of(&entry.scope), entry.generation, entry.label.clone());
        let block = ParamBlock::new(tensor, origin, false);
        if block.id() != id {
            return Err(corrupt(format!("block {hex} does not match its content")));
        }
        store.insert(id, block);
    }

    let mut records = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let model = rebuild_model(entry, &store)?;
        if model.id().to_hex() != entry.id {
            return Err(corrupt(format!("record {} does not match its content", entry.id)));
        }
        let restore = |m: &BTreeMap<String, Option<f64>>| {
            m.iter().map(|(k, v)| (k.clone(), v.unwrap_or(f64::INFINITY))).collect()
        };
        records.push(ModelRecord {
            model,
            scores: restore(&entry.scores),
            quality: restore(&entry.quality),
            children: entry.children,
            additional_params: entry.additional_params,
        });
    }
    let pool = KnowledgePool::from_parts(records, store, manifest.param_unit).map_err(|e| corrupt(e.to_string()))?;
    Ok(LoadedPool {
        pool,
        config: manifest.config,
        seed: manifest.seed,
        manifest_sha256: sha256_hex(&bytes),
    })
}

fn rebuild_layer(
    e: &LayerEntry,
    store: &BTreeMap<BlockId, ParamBlock>,
) -> Result<(Layer, LayerMode), PersistError> {
    let kind = LayerKind::from_name(&e.kind).ok_or_else(|| corrupt(format!("unknown layer kind '{}'", e.kind)))?;
    if e.blocks.len() != e.trainable.len() {
        return Err(corrupt("layer block and trainable lists differ in length"));
    }
    let mut params = Vec::with_capacity(e.blocks.len());
    for (hex, &trainable) in e.blocks.iter().zip(&e.trainable) {
        let id = parse_id(hex, "block")?;
        let b = store.get(&id).ok_or_else(|| corrupt(format!("missing block {hex}")))?;
        params.push(ParamBlock::new(b.tensor().clone(), b.origin().clone(), trainable));
    }
    let layer = Layer::from_params(kind, e.input, e.output, params).map_err(|err| corrupt(err.to_string()))?;
    let mode = match &e.mode {
        ModeEntry::Owned => LayerMode::Owned,
        ModeEntry::Shared { model, index } => LayerMode::Shared {
            model: parse_id(model, "model")?,
            index: *index,
        },
    };
    Ok((layer, mode))
}

fn rebuild_model(e: &RecordEntry, store: &BTreeMap<BlockId, ParamBlock>) -> Result<ForecastModel, PersistError> {
    if e.components.len() != 3 {
        return Err(corrupt(format!("record {} needs three components", e.id)));
    }
    let mut stacks = Vec::with_capacity(3);
    for (c, kind) in e.components.iter().zip(ComponentKind::ALL) {
        if ComponentKind::from_name(&c.name) != Some(kind) {
            return Err(corrupt(format!("record {}: expected component '{}'", e.id, kind.name())));
        }
        let slots = c
            .layers
            .iter()
            .map(|l| rebuild_layer(l, store).map(|(layer, mode)| LayerSlot { layer, mode }))
            .collect::<Result<Vec<_>, _>>()?;
        stacks.push(ComponentStack::new(kind, c.input, slots).map_err(|err| corrupt(err.to_string()))?);
    }
    let components: [ComponentStack; 3] = stacks.try_into().expect("three components");
    let (head, _) = rebuild_layer(&e.head, store)?;
    let parent = e.parent.as_deref().map(|p| parse_id(p, "parent")).transpose()?;
    let hyper = HyperState {
        learning_rate: grid_from(&e.learning_rate, "learning_rate")?,
        weight_decay: grid_from(&e.weight_decay, "weight_decay")?,
    };
    ForecastModel::new(
        components,
        head,
        e.modes_k,
        evopath_core::Horizon {
            obs: e.t_obs,
            pred: e.t_pred,
        },
        parent,
        scope_of(&e.scope),
        e.generation,
        hyper,
    )
    .map_err(|err| corrupt(format!("record {}: {err}", e.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use evopath_core::{build_meta_model, Horizon};

    fn meta_pool() -> KnowledgePool {
        let meta = build_meta_model(&[8, 8], 2, Horizon::default(), 0, 3).unwrap();
        KnowledgePool::new(meta, None).unwrap()
    }

    #[test]
    fn meta_pool_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pool = meta_pool();
        let echo = serde_json::json!({"seed": 3});
        let digest = save_pool(dir.path(), &pool, &echo, 3).unwrap();
        let loaded = load_pool(dir.path()).unwrap();
        assert_eq!(loaded.pool, pool);
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.config, echo);
        assert_eq!(loaded.manifest_sha256, digest);
        assert!(!dir.path().join("manifest.json.tmp").exists());
        assert_eq!(std::fs::read_dir(dir.path().join(BLOCKS)).unwrap().count(), pool.store().len());
    }

    #[test]
    fn infinite_quality_survives() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = meta_pool();
        let unit = pool.param_unit();
        let meta = pool.meta().model.clone();
        let mut records = pool.records().to_vec();
        records[0].quality.insert("x".into(), f64::INFINITY);
        records[0].scores.insert("x".into(), 0.0);
        pool = KnowledgePool::from_parts(records, pool.store().clone(), unit).unwrap();
        save_pool(dir.path(), &pool, &serde_json::Value::Null, 0).unwrap();
        let loaded = load_pool(dir.path()).unwrap().pool;
        assert_eq!(loaded.meta().quality["x"], f64::INFINITY);
        assert_eq!(loaded.meta().model, meta);
    }

    #[test]
    fn tampered_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pool = meta_pool();
        save_pool(dir.path(), &pool, &serde_json::Value::Null, 0).unwrap();
        let id = *pool.store().keys().next().unwrap();
        let path = blob_path(dir.path(), &id);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[9] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_pool(dir.path()), Err(PersistError::Corrupt(_))));
    }

    #[test]
    fn missing_or_truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pool = meta_pool();
        save_pool(dir.path(), &pool, &serde_json::Value::Null, 0).unwrap();
        let mut ids = pool.store().keys();
        let a = blob_path(dir.path(), ids.next().unwrap());
        std::fs::remove_file(&a).unwrap();
        assert!(matches!(load_pool(dir.path()), Err(PersistError::Corrupt(_))));
        save_pool(dir.path(), &pool, &serde_json::Value::Null, 0).unwrap();
        let b = blob_path(dir.path(), ids.next().unwrap());
        let bytes = std::fs::read(&b).unwrap();
        std::fs::write(&b, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_pool(dir.path()), Err(PersistError::Corrupt(_))));
    }

    #[test]
    fn edited_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pool = meta_pool();
        save_pool(dir.path(), &pool, &serde_json::Value::Null, 0).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"generation\": 0", "\"generation\": 1", 1)).unwrap();
        assert!(matches!(load_pool(dir.path()), Err(PersistError::Corrupt(_))));
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pool(dir.path()), Err(PersistError::Io { .. })));
    }
}
