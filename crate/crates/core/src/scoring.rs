//! Compensatory baseline: weighted sum of features against a threshold.

use serde::{Deserialize, Serialize};

use crate::decision::DecisionObject;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("MISSING_FEATURE: {0}")]
    MissingFeature(String),
    #[error("NEGATIVE_WEIGHT: {name} = {weight}")]
    NegativeWeight { name: String, weight: f64 },
    #[error("INVALID_MODEL: {0}")]
    InvalidModel(String),
}

impl ScoringError {
    pub fn code(&self) -> &'static str {
        match self {
            ScoringError::MissingFeature(_) => "MISSING_FEATURE",
            ScoringError::NegativeWeight { .. } => "NEGATIVE_WEIGHT",
            ScoringError::InvalidModel(_) => "INVALID_MODEL",
        }
    }
}

fn default_clamp() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    feature_names: Vec<String>,
    weights: Vec<f64>,
    theta: f64,
    #[serde(default = "default_clamp")]
    clamp: bool,
}

/// `S(d) = Σ w_i·x_i(d)`, allowed iff `S ≥ θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ScoringModel {
    feature_names: Vec<String>,
    weights: Vec<f64>,
    theta: f64,
    clamp: bool,
}

impl TryFrom<ModelFile> for ScoringModel {
    type Error = ScoringError;

    fn try_from(f: ModelFile) -> Result<Self, ScoringError> {
        ScoringModel::new(f.feature_names, f.weights, f.theta, f.clamp)
    }
}

impl From<ScoringModel> for ModelFile {
    fn from(m: ScoringModel) -> Self {
        ModelFile {
            feature_names: m.feature_names,
            weights: m.weights,
            theta: m.theta,
            clamp: m.clamp,
        }
    }
}

impl ScoringModel {
    pub fn new(feature_names: Vec<String>, weights: Vec<f64>, theta: f64, clamp: bool) -> Result<Self, ScoringError> {
        if feature_names.len() != weights.len() {
            return Err(ScoringError::InvalidModel(format!(
                "{} feature names but {} weights",
                feature_names.len(),
                weights.len()
            )));
        }
        for (i, name) in feature_names.iter().enumerate() {
            if feature_names[..i].contains(name) {
                return Err(ScoringError::InvalidModel(format!("duplicate feature name {name}")));
            }
        }
        for (name, &w) in feature_names.iter().zip(&weights) {
            if !w.is_finite() {
                return Err(ScoringError::InvalidModel(format!("weight for {name} is not finite")));
            }
            if w < 0.0 {
                return Err(ScoringError::NegativeWeight {
                    name: name.clone(),
                    weight: w,
                });
            }
        }
        if !theta.is_finite() {
            return Err(ScoringError::InvalidModel("theta is not finite".into()));
        }
        Ok(ScoringModel {
            feature_names,
            weights,
            theta,
            clamp,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ScoringError> {
        let file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| ScoringError::InvalidModel(e.to_string()))?;
        file.try_into()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn clamp(&self) -> bool {
        self.clamp
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    pub threshold: f64,
    pub allowed: bool,
    pub contributions: Vec<Contribution>,
}

/// Score `x` (already in feature order) by sequential summation.
pub fn weighted_sum(model: &ScoringModel, x: &[f64]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(x.len());
    for (&w, &xi) in model.weights.iter().zip(x) {
        let xi = if model.clamp { xi.clamp(0.0, 1.0) } else { xi };
        let c = w * xi;
        total += c;
        parts.push(c);
    }
    (total, parts)
}

pub fn score(model: &ScoringModel, d: &DecisionObject) -> Result<ScoreReport, ScoringError> {
    let mut x = Vec::with_capacity(model.len());
    for name in &model.feature_names {
        match d.features.get(name) {
            Some(v) => x.push(*v),
            None => return Err(ScoringError::MissingFeature(name.clone())),
        }
    }
    let (s, parts) = weighted_sum(model, &x);
    Ok(ScoreReport {
        score: s,
        threshold: model.theta,
        allowed: s >= model.theta,
        contributions: model
            .feature_names
            .iter()
            .zip(parts)
            .map(|(f, value)| Contribution {
                feature: f.clone(),
                value,
            })
            .collect(),
    })
}
