//! Named, bounded parameter vectors: clamping, uniform sampling, unit-cube
//! normalization, and ground-truth recovery metrics.

use crate::error::{Result, SysidError};
use rand::{Rng, RngExt};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// What a parameter controls. Optimizers search `Physics` and `Environment`
/// dimensions; `Control` dimensions map onto actuation amplitudes and are
/// only touched by recommenders with control tuning enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Physics,
    Environment,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub unit: String,
    pub kind: ParamKind,
}

/// Ordered list of named `[min, max]` intervals. The ordering is stable and
/// defines the vector layout used by every optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub entries: Vec<BoundEntry>,
}

impl ParameterBounds {
    pub fn new(entries: Vec<BoundEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !(e.min < e.max) {
                return Err(SysidError::InvalidBounds(format!(
                    "{}: min {} must be strictly below max {}",
                    e.name, e.min, e.max
                )));
            }
            if !seen.insert(e.name.clone()) {
                return Err(SysidError::InvalidBounds(format!("duplicate name {}", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Indices of the entries an optimizer searches (everything but control).
    pub fn searchable_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind != ParamKind::Control)
            .map(|(i, _)| i)
            .collect()
    }

    /// Bounds restricted to non-control entries.
    pub fn searchable(&self) -> ParameterBounds {
        ParameterBounds {
            entries: self
                .entries
                .iter()
                .filter(|e| e.kind != ParamKind::Control)
                .cloned()
                .collect(),
        }
    }

    fn check_layout(&self, params: &ParameterVector) -> Result<()> {
        if params.values.len() != self.entries.len() {
            return Err(SysidError::LayoutMismatch(format!(
                "vector has {} entries, bounds have {}",
                params.values.len(),
                self.entries.len()
            )));
        }
        for (v, b) in params.values.iter().zip(&self.entries) {
            if v.0 != b.name {
                return Err(SysidError::LayoutMismatch(format!(
                    "vector entry {:?} does not match bound entry {:?}",
                    v.0, b.name
                )));
            }
        }
        Ok(())
    }

    /// Project each value onto its `[min, max]` interval. In-bounds values
    /// pass through unchanged; the projection is idempotent.
    pub fn clamp(&self, params: &ParameterVector) -> Result<ParameterVector> {
        self.check_layout(params)?;
        let values = params
            .values
            .iter()
            .zip(&self.entries)
            .map(|((n, v), b)| (n.clone(), v.clamp(b.min, b.max)))
            .collect();
        Ok(ParameterVector { values })
    }

    /// Draw each coordinate independently uniform in `[min, max]`. The same
    /// seed always yields the identical vector.
    pub fn sample_uniform(&self, seed: u64) -> ParameterVector {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> ParameterVector {
        let values = self
            .entries
            .iter()
            .map(|b| (b.name.clone(), rng.random_range(b.min..=b.max)))
            .collect();
        ParameterVector { values }
    }

    /// Map into the unit cube: coordinate i becomes `(v - min) / (max - min)`.
    /// Out-of-bounds inputs are clamped first and the flag in the result is
    /// set.
    pub fn normalize(&self, params: &ParameterVector) -> Result<Normalized> {
        self.check_layout(params)?;
        let mut clamped = false;
        let coords = params
            .values
            .iter()
            .zip(&self.entries)
            .map(|((_, v), b)| {
                let vv = v.clamp(b.min, b.max);
                if vv != *v {
                    clamped = true;
                }
                (vv - b.min) / (b.max - b.min)
            })
            .collect();
        Ok(Normalized { coords, clamped })
    }

    /// Inverse of [`normalize`](Self::normalize) for in-cube coordinates.
    pub fn denormalize(&self, coords: &[f64]) -> Result<ParameterVector> {
        if coords.len() != self.entries.len() {
            return Err(SysidError::LayoutMismatch(format!(
                "{} coordinates for {} bounds",
                coords.len(),
                self.entries.len()
            )));
        }
        let values = coords
            .iter()
            .zip(&self.entries)
            .map(|(c, b)| (b.name.clone(), b.min + c * (b.max - b.min)))
            .collect();
        Ok(ParameterVector { values })
    }

    /// Euclidean norm of the normalized difference between two vectors.
    pub fn normalized_distance(
        &self,
        estimate: &ParameterVector,
        ground_truth: &ParameterVector,
    ) -> Result<f64> {
        let a = self.normalize(estimate)?;
        let b = self.normalize(ground_truth)?;
        Ok(a.coords
            .iter()
            .zip(&b.coords)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            parameter: Vec<BoundEntry>,
        }
        let f: File = toml::from_str(text).map_err(|e| SysidError::Config(e.to_string()))?;
        ParameterBounds::new(f.parameter)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Unit-cube image of a parameter vector. `clamped` records whether any
/// input coordinate had to be projected into bounds first.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub coords: Vec<f64>,
    pub clamped: bool,
}

/// Ordered `(name, value)` pairs laid out to match a [`ParameterBounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<(String, f64)>,
}

impl ParameterVector {
    pub fn new(values: Vec<(String, f64)>) -> Self {
        Self { values }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        for (n, v) in &mut self.values {
            if n == name {
                *v = value;
                return true;
            }
        }
        false
    }

    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-parameter recovery percentages. Parameters whose ground truth is
/// exactly zero are reported as `None` and excluded from the mean.
#[derive(Debug, Clone, Serialize)]
pub struct RelativeErrorReport {
    pub per_param: Vec<(String, Option<f64>)>,
    pub mean_percent: Option<f64>,
}

/// `|(est - gt) / gt| * 100` per parameter, plus the arithmetic mean over
/// the defined entries.
pub fn relative_error(
    estimate: &ParameterVector,
    ground_truth: &ParameterVector,
) -> Result<RelativeErrorReport> {
    if estimate.values.len() != ground_truth.values.len() {
        return Err(SysidError::LayoutMismatch(
            "estimate and ground truth differ in length".into(),
        ));
    }
    let mut per_param = Vec::new();
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((name, est), (gname, gt)) in estimate.values.iter().zip(&ground_truth.values) {
        if name != gname {
            return Err(SysidError::LayoutMismatch(format!(
                "entry {name:?} vs {gname:?}"
            )));
        }
        if *gt == 0.0 {
            log::warn!("relative_error: ground truth for {name} is zero, excluded from mean");
            per_param.push((name.clone(), None));
        } else {
            let pct = ((est - gt) / gt).abs() * 100.0;
            per_param.push((name.clone(), Some(pct)));
            sum += pct;
            n += 1;
        }
    }
    let mean_percent = if n > 0 { Some(sum / n as f64) } else { None };
    Ok(RelativeErrorReport { per_param, mean_percent })
}
