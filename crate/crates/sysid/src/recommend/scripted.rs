//! Scripted recommender: replays a fixed JSON array of schema responses in
//! order. Deterministic stand-in for the network-backed recommender in
//! end-to-end tests.

use super::vlm::{apply_schema, SchemaResponse};
use super::{Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::{Result, SysidError};
use crate::param_space::ParameterVector;
use std::path::Path;

pub struct ScriptedRecommender {
    entries: Vec<SchemaResponse>,
    next: usize,
}

impl ScriptedRecommender {
    pub fn new(entries: Vec<SchemaResponse>) -> Result<Self> {
        if entries.is_empty() {
            return Err(SysidError::Config("scripted recommender needs at least one entry".into()));
        }
        Ok(Self { entries, next: 0 })
    }

    /// Load a JSON array of schema responses.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<SchemaResponse> = serde_json::from_str(&text)
            .map_err(|e| SysidError::ParseFailure(format!("{}: {e}", path.display())))?;
        Self::new(entries)
    }
}

impl Recommender for ScriptedRecommender {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn observe(&mut self, _evaluated: &[(ParameterVector, f64)]) {}

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        let idx = if self.next < self.entries.len() {
            self.next
        } else {
            log::warn!("script exhausted after {} entries, repeating the last one", self.entries.len());
            self.entries.len() - 1
        };
        self.next += 1;
        Ok(vec![apply_schema(req, &self.entries[idx])])
    }
}
