//! Pluggable parameter-proposal strategies: black-box optimizers, an
//! external VLM queried over HTTP, and a scripted replay double for tests.

mod bo;
mod cmaes;
mod golden;
mod nelder_mead;
mod random;
mod scripted;
mod vlm;

pub use bo::BoRecommender;
pub use cmaes::{reflect_unit, CmaEsRecommender};
pub use golden::GoldenCdRecommender;
pub use nelder_mead::NelderMeadRecommender;
pub use random::RandomRecommender;
pub use scripted::ScriptedRecommender;
pub use vlm::{build_prompt, SchemaRecommendation, SchemaResponse, VlmConfig, VlmRecommender};

use crate::control::ControlProfile;
use crate::error::Result;
use crate::param_space::{ParameterBounds, ParameterVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Ablation switches; all on reproduces the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub include_video: bool,
    pub include_history: bool,
    pub chain_of_thought: bool,
    pub tune_control: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            include_video: true,
            include_history: true,
            chain_of_thought: true,
            tune_control: true,
        }
    }
}

/// One completed loop iteration, as fed back to recommenders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub params: ParameterVector,
    pub control: ControlProfile,
    pub error: f64,
    pub confidence: f64,
    pub rationale: String,
}

/// Chronological record of a calibration run; indices contiguous from 1.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
}

impl RunHistory {
    pub fn push(&mut self, rec: IterationRecord) {
        debug_assert_eq!(rec.iteration, self.records.len() + 1, "history indices contiguous");
        self.records.push(rec);
    }

    /// Record with the lowest finite error; earliest on ties.
    pub fn best(&self) -> Option<&IterationRecord> {
        self.records
            .iter()
            .filter(|r| r.error.is_finite())
            .min_by(|a, b| a.error.total_cmp(&b.error).then(a.iteration.cmp(&b.iteration)))
    }
}

/// Recordings attached to a VLM request.
#[derive(Debug, Clone, Default)]
pub struct MediaRefs {
    pub sim: Option<PathBuf>,
    pub real: Option<PathBuf>,
}

/// Everything a recommender may condition on for one proposal.
#[derive(Debug, Clone)]
pub struct RecommendationRequest {
    pub current_params: ParameterVector,
    pub current_control: ControlProfile,
    pub current_error: f64,
    pub bounds: ParameterBounds,
    pub history: RunHistory,
    pub media: MediaRefs,
    pub flags: Flags,
}

/// A proposed candidate; values are pre-clamp, the loop clamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendationResponse {
    pub params: ParameterVector,
    pub control: ControlProfile,
    pub confidence: f64,
    pub rationale: String,
    pub analysis: String,
}

/// A proposal strategy. `propose` returns the next candidate batch (one
/// entry for everything except CMA-ES, which returns a full generation);
/// `observe` feeds back the evaluated errors for that batch plus the run's
/// initial point.
pub trait Recommender {
    fn name(&self) -> &'static str;

    fn observe(&mut self, evaluated: &[(ParameterVector, f64)]);

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>>;
}

/// Normalized coordinates of the searchable (non-control) entries.
pub(crate) fn to_unit(bounds: &ParameterBounds, params: &ParameterVector) -> Vec<f64> {
    let sub = bounds.searchable();
    let vals: Vec<(String, f64)> = sub
        .names()
        .map(|n| (n.to_string(), params.get(n).expect("searchable entry present")))
        .collect();
    sub.normalize(&ParameterVector::new(vals)).expect("matching layout").coords
}

/// Rebuild a full parameter vector from searchable unit coordinates,
/// copying control entries from `template`.
pub(crate) fn from_unit(
    bounds: &ParameterBounds,
    coords: &[f64],
    template: &ParameterVector,
) -> Result<ParameterVector> {
    let sub = bounds.searchable();
    let v = sub.denormalize(coords)?;
    let mut out = template.clone();
    for n in sub.names() {
        out.set(n, v.get(n).expect("just denormalized"));
    }
    Ok(out)
}

/// Wrap a searchable-space proposal into the standard response shape with
/// the control profile passed through unchanged.
pub(crate) fn plain_response(
    req: &RecommendationRequest,
    params: ParameterVector,
    confidence: f64,
    rationale: &str,
) -> RecommendationResponse {
    RecommendationResponse {
        params,
        control: req.current_control.clone(),
        confidence,
        rationale: rationale.to_string(),
        analysis: String::new(),
    }
}
