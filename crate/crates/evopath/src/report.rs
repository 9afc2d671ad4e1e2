//! Test-split reports for assembled scenario paths.

use evopath_core::scene::Split;
use evopath_core::{
    assemble_path, evaluate, evaluation_score, effective_param_count, EvalReport, KnowledgePool, ModelError,
    SceneDataset,
};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("scenario '{0}' has no path in the pool (pass --allow-meta to use the meta-model)")]
    UnknownScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Evaluates the path for `data`'s scenario on its test split.
///
/// The score is the cached selection score, or for the meta-model fallback
/// the score it would get on this scenario's validation split.
pub fn scenario_report(
    pool: &KnowledgePool,
    data: &SceneDataset,
    cfg: &RunConfig,
    allow_meta: bool,
) -> Result<EvalReport, ReportError> {
    let path = assemble_path(pool, data.id());
    if path.fallback && !allow_meta {
        return Err(ReportError::UnknownScenario(data.id().into()));
    }
    let record = path.record;
    let model = &record.model;
    let q = evaluate(model, data, Split::Test, cfg.metrics.miss_threshold, cfg.norm())?;
    let score = match record.score(data.id()) {
        Some(s) => s,
        None => {
            let v = evopath_core::metrics::validation_ade(model, data)?;
            evaluation_score(v, record.additional_params, cfg.evo.penalty_a, pool.param_unit())
        }
    };
    Ok(EvalReport {
        scenario: data.id().into(),
        split: Split::Test.name(),
        samples: q.samples,
        ade_k: q.ade_k,
        fde_k: q.fde_k,
        min_joint_ade: q.min_joint_ade,
        miss_rate: q.miss_rate,
        modes_k: model.modes_k(),
        effective_params: effective_param_count(model),
        additional_params: record.additional_params,
        score,
    })
}

#[derive(Serialize)]
struct ReportJson<'a> {
    scenario: &'a str,
    split: &'a str,
    samples: usize,
    ade_k: Option<f64>,
    fde_k: Option<f64>,
    min_joint_ade: Option<f64>,
    miss_rate: Option<f64>,
    modes_k: usize,
    effective_params: usize,
    additional_params: usize,
    score: Option<f64>,
}

/// JSON form of a report; non-finite metrics become `null`.
pub fn report_json(r: &EvalReport) -> serde_json::Value {
    let f = |v: f64| v.is_finite().then_some(v);
    serde_json::to_value(ReportJson {
        scenario: &r.scenario,
        split: r.split,
        samples: r.samples,
        ade_k: f(r.ade_k),
        fde_k: f(r.fde_k),
        min_joint_ade: f(r.min_joint_ade),
        miss_rate: f(r.miss_rate),
        modes_k: r.modes_k,
        effective_params: r.effective_params,
        additional_params: r.additional_params,
        score: f(r.score),
    })
    .expect("report serializes")
}

/// The final reports of an evolve run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub manifest_sha256: String,
    pub records: usize,
    pub total_params: usize,
    pub meta_params: usize,
    pub scenarios: Vec<EvalReport>,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "manifest_sha256={}\nrecords={}\ntotal_params={}\nmeta_params={}\n",
            self.manifest_sha256, self.records, self.total_params, self.meta_params
        );
        for r in &self.scenarios {
            s.push('\n');
            s.push_str(&r.to_text());
        }
        s
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "manifest_sha256": self.manifest_sha256,
            "records": self.records,
            "total_params": self.total_params,
            "meta_params": self.meta_params,
            "scenarios": self.scenarios.iter().map(report_json).collect::<Vec<_>>(),
        });
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}
