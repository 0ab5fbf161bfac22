//! External vision-language recommender: assembles the structured prompt,
//! sends it to a chat-completion-style HTTP endpoint, and parses the strict
//! response schema.

use super::{Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::{Result, SysidError};
use crate::param_space::{ParamKind, ParameterVector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

pub const API_KEY_ENV: &str = "SYSID_API_KEY";

/// How video attachments travel: path references for local endpoints,
/// base64-inline for remote ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaMode {
    Paths,
    Inline,
}

#[derive(Debug, Clone)]
pub struct VlmConfig {
    pub url: String,
    pub model: Option<String>,
    /// Decoding settings forwarded opaquely when set.
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub media_mode: MediaMode,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl VlmConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            temperature: None,
            top_p: None,
            media_mode: MediaMode::Paths,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

/// The strict response schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaRecommendation {
    pub name: String,
    pub current_value: f64,
    pub suggested_value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub analysis: String,
    pub parameter_recommendations: Vec<SchemaRecommendation>,
    pub confidence: f64,
    #[serde(default)]
    pub additional_notes: String,
}

const SYSTEM_PROMPT: &str = "You are an expert in robotics sim-to-real transfer and dynamic \
calibration. Compare the simulation against a real hardware capture to diagnose dynamic \
mismatches. Use visual cues plus the history table to reason about parameter updates. Treat \
the actuation amplitude as a controllable probe: vary it (within bounds) to expose differences \
in the physical parameters, not just to cosmetically match one clip. The real hardware clip is \
ground truth; the simulation clip is what you are tuning.";

const COT_LINE: &str = "Let's think step by step.";

const OUTPUT_SCHEMA: &str = r#"{
  "analysis": "Brief summary of mismatch",
  "parameter_recommendations": [
    {"name": "damping",
     "current_value": 100.0,
     "suggested_value": 70.0,
     "reason": "..."}
  ],
  "confidence": 0.75,
  "additional_notes": "..."
}"#;

/// Assemble the prompt: `(system, user_sections, media)`. Section content
/// and delimiters follow the fixed wire contract; ablation flags drop whole
/// sections.
pub fn build_prompt(req: &RecommendationRequest) -> (String, Vec<String>, Vec<String>) {
    let mut system = SYSTEM_PROMPT.to_string();
    if req.flags.chain_of_thought {
        system.push(' ');
        system.push_str(COT_LINE);
    }

    let mut sections = Vec::new();
    let mut media = Vec::new();
    if req.flags.include_video {
        let mut lines = Vec::new();
        for p in [&req.media.sim, &req.media.real].into_iter().flatten() {
            lines.push(format!("[VIDEO: {}]", p.display()));
            media.push(p.display().to_string());
        }
        if !lines.is_empty() {
            sections.push(lines.join("\n"));
        }
    }

    let profile: serde_json::Map<String, serde_json::Value> = req
        .current_params
        .values
        .iter()
        .map(|(n, v)| (n.clone(), json!(v)))
        .collect();
    sections.push(format!(
        "--- CANDIDATE PROFILE (JSON) ---\n{}",
        serde_json::Value::Object(profile)
    ));

    sections.push(format!(
        "--- METRICS (JSON) ---\n{}",
        json!({ "mean_abs_px": req.current_error })
    ));

    let bounds_lines: Vec<String> = req
        .bounds
        .entries
        .iter()
        .map(|b| format!("{}: [{}, {}]", b.name, b.min, b.max))
        .collect();
    sections.push(format!("--- PARAMETER BOUNDS ---\n{}", bounds_lines.join("\n")));

    if req.flags.include_history {
        let names: Vec<&str> = req.bounds.names().collect();
        let mut table = format!("Iter | {} | error_px", names.join(" | "));
        for r in &req.history.records {
            let vals: Vec<String> = names
                .iter()
                .map(|n| format!("{:.4}", r.params.get(n).unwrap_or(f64::NAN)))
                .collect();
            table.push_str(&format!("\n{:>4} | {} | {:.2}", r.iteration, vals.join(" | "), r.error));
        }
        sections.push(format!("--- PARAMETER HISTORY ---\n{table}"));
    }

    sections.push(
        "--- TASK ---\n1. Describe key discrepancies between sim and real.\n2. Propose updated \
         values for all parameters."
            .to_string(),
    );
    sections.push(format!("--- OUTPUT JSON SCHEMA (strict) ---\n{OUTPUT_SCHEMA}"));
    (system, sections, media)
}

/// Turn a schema response into a proposal: named parameters override the
/// current vector, control-kind entries also update the control profile
/// (only when control tuning is enabled), confidence is clamped into [0, 1].
pub(crate) fn apply_schema(
    req: &RecommendationRequest,
    schema: &SchemaResponse,
) -> RecommendationResponse {
    let mut params = req.current_params.clone();
    let mut control = req.current_control.clone();
    let control_names: Vec<&str> = req
        .bounds
        .entries
        .iter()
        .filter(|b| b.kind == ParamKind::Control)
        .map(|b| b.name.as_str())
        .collect();
    let mut seen = Vec::new();
    for rec in &schema.parameter_recommendations {
        if params.get(&rec.name).is_none() {
            log::warn!("recommender proposed unknown parameter {:?}, ignored", rec.name);
            continue;
        }
        if let Some(channel) = control_names.iter().position(|n| *n == rec.name) {
            if !req.flags.tune_control {
                log::warn!(
                    "control tuning disabled, ignoring proposed {} = {}",
                    rec.name,
                    rec.suggested_value
                );
                continue;
            }
            // control amplitudes arrive in bounds order, matching channels
            control.channels[channel].amplitude = rec.suggested_value;
        }
        params.set(&rec.name, rec.suggested_value);
        seen.push(rec.name.clone());
    }
    for (n, _) in &req.current_params.values {
        if !seen.contains(n) {
            log::warn!("recommender response missing {n}, keeping current value");
        }
    }
    let confidence = if (0.0..=1.0).contains(&schema.confidence) {
        schema.confidence
    } else {
        log::warn!("confidence {} outside [0, 1], clamped", schema.confidence);
        schema.confidence.clamp(0.0, 1.0)
    };
    let rationale = schema
        .parameter_recommendations
        .iter()
        .map(|r| format!("{}: {}", r.name, r.reason))
        .collect::<Vec<_>>()
        .join("; ");
    RecommendationResponse { params, control, confidence, rationale, analysis: schema.analysis.clone() }
}

pub struct VlmRecommender {
    cfg: VlmConfig,
    agent: ureq::Agent,
}

impl VlmRecommender {
    pub fn new(cfg: VlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self { cfg, agent }
    }

    fn encode_media(&self, paths: &[String]) -> Result<Vec<serde_json::Value>> {
        paths
            .iter()
            .map(|p| match self.cfg.media_mode {
                MediaMode::Paths => Ok(json!({ "path": p })),
                MediaMode::Inline => {
                    let bytes = std::fs::read(p)?;
                    Ok(json!({ "name": p, "data_base64": base64(&bytes) }))
                }
            })
            .collect()
    }

    /// One HTTP round trip; retries transport failures with exponential
    /// backoff before giving up.
    fn call(&self, body: &serde_json::Value) -> Result<String> {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            let result = self
                .agent
                .post(&self.cfg.url)
                .header("authorization", &format!("Bearer {key}"))
                .send_json(body);
            match result {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| SysidError::RecommenderUnavailable(e.to_string()));
                }
                Err(ureq::Error::StatusCode(code)) if code < 500 => {
                    return Err(SysidError::RecommenderUnavailable(format!(
                        "endpoint returned status {code}"
                    )));
                }
                Err(e) => {
                    last_err = e.to_string();
                    log::warn!("vlm request attempt {} failed: {last_err}", attempt + 1);
                }
            }
        }
        Err(SysidError::RecommenderUnavailable(format!(
            "{} attempts failed: {last_err}",
            self.cfg.max_retries + 1
        )))
    }

    fn request_body(
        &self,
        system: &str,
        sections: &[String],
        media: &[String],
    ) -> Result<serde_json::Value> {
        let mut body = json!({
            "system": system,
            "user_sections": sections,
            "media": self.encode_media(media)?,
        });
        let obj = body.as_object_mut().expect("object literal");
        if let Some(m) = &self.cfg.model {
            obj.insert("model".into(), json!(m));
        }
        if let Some(t) = self.cfg.temperature {
            obj.insert("temperature".into(), json!(t));
        }
        if let Some(t) = self.cfg.top_p {
            obj.insert("top_p".into(), json!(t));
        }
        Ok(body)
    }
}

impl Recommender for VlmRecommender {
    fn name(&self) -> &'static str {
        "vlm"
    }

    fn observe(&mut self, _evaluated: &[(ParameterVector, f64)]) {}

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        let (system, sections, media) = build_prompt(req);
        let body = self.request_body(&system, &sections, &media)?;
        let text = self.call(&body)?;
        let schema: SchemaResponse = match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(first) => {
                log::warn!("malformed recommender JSON ({first}), re-prompting with the schema");
                let mut retry_sections = sections.clone();
                retry_sections.push(format!(
                    "Your previous reply was not valid JSON ({first}). Respond with exactly \
                     this schema and nothing else:\n{OUTPUT_SCHEMA}"
                ));
                let body = self.request_body(&system, &retry_sections, &media)?;
                let text = self.call(&body)?;
                serde_json::from_str(&text)
                    .map_err(|e| SysidError::ParseFailure(e.to_string()))?
            }
        };
        Ok(vec![apply_schema(req, &schema)])
    }
}

fn base64(data: &[u8]) -> String {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(data.len().div_ceil(3) * 4);
    for chunk in data.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = u32::from_be_bytes([0, b[0], b[1], b[2]]);
        out.push(TABLE[(n >> 18) as usize & 63] as char);
        out.push(TABLE[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 { TABLE[(n >> 6) as usize & 63] as char } else { '=' });
        out.push(if chunk.len() > 2 { TABLE[n as usize & 63] as char } else { '=' });
    }
    out
}
