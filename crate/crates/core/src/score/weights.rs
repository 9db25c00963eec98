use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::model::AttributeKind;

/// Per-attribute importance used by the structural component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeWeights(BTreeMap<AttributeKind, f64>);

const DEFAULT_WEIGHTS: [(AttributeKind, f64); 16] = [
    (AttributeKind::DxStatus, 0.50),
    (AttributeKind::DxCertainty, 0.10),
    (AttributeKind::Location, 0.20),
    (AttributeKind::Severity, 0.15),
    (AttributeKind::Onset, 0.15),
    (AttributeKind::Improved, 0.15),
    (AttributeKind::Worsened, 0.15),
    (AttributeKind::Placement, 0.15),
    (AttributeKind::NoChange, 0.10),
    (AttributeKind::Morphology, 0.05),
    (AttributeKind::Distribution, 0.05),
    (AttributeKind::Measurement, 0.05),
    (AttributeKind::Comparison, 0.03),
    (AttributeKind::PastHx, 0.01),
    (AttributeKind::OtherSource, 0.01),
    (AttributeKind::AssessmentLimitations, 0.01),
];

impl Default for AttributeWeights {
    fn default() -> Self {
        AttributeWeights(DEFAULT_WEIGHTS.into_iter().collect())
    }
}

impl AttributeWeights {
    /// Builds a table from explicit values; kinds not listed weigh 0.
    pub fn new(weights: BTreeMap<AttributeKind, f64>) -> Result<Self, ScoreError> {
        let mut full: BTreeMap<AttributeKind, f64> = AttributeKind::ALL.into_iter().map(|k| (k, 0.0)).collect();
        full.extend(weights);
        let w = AttributeWeights(full);
        w.validate()?;
        Ok(w)
    }

    pub fn get(&self, kind: AttributeKind) -> f64 {
        self.0.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AttributeKind, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    /// Applies a JSON map of overrides (`{"location": 0.3, ...}`) on top of
    /// this table.
    pub fn with_overrides_json(&self, text: &str) -> Result<Self, ScoreError> {
        let raw: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| ScoreError::InvalidWeights(e.to_string()))?;
        let mut table = self.0.clone();
        for (key, value) in raw {
            let kind = AttributeKind::from_key(&key)
                .ok_or_else(|| ScoreError::InvalidWeights(format!("unknown attribute `{key}`")))?;
            table.insert(kind, value);
        }
        let w = AttributeWeights(table);
        w.validate()?;
        Ok(w)
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ScoreError> {
        let w = AttributeWeights(self.0.iter().map(|(k, v)| (*k, v * factor)).collect());
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if let Some((k, v)) = self.0.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(ScoreError::InvalidWeights(format!(
                "weight for {k} must be finite and >= 0, got {v}"
            )));
        }
        if self.get(AttributeKind::DxStatus) <= 0.0 {
            return Err(ScoreError::InvalidWeights("dx_status weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Weights of the study-timepoint and episode indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalWeights {
    pub w_study: f64,
    pub w_group: f64,
}

impl Default for TemporalWeights {
    fn default() -> Self {
        TemporalWeights {
            w_study: 0.5,
            w_group: 0.5,
        }
    }
}

impl TemporalWeights {
    pub fn new(w_study: f64, w_group: f64) -> Result<Self, ScoreError> {
        let ok = w_study >= 0.0 && w_group >= 0.0 && ((w_study + w_group) - 1.0).abs() < 1e-9;
        if !ok {
            return Err(ScoreError::InvalidWeights(format!(
                "temporal weights must be non-negative and sum to 1, got {w_study} + {w_group}"
            )));
        }
        Ok(TemporalWeights { w_study, w_group })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table() {
        let w = AttributeWeights::default();
        assert_eq!(w.get(AttributeKind::DxStatus), 0.50);
        assert_eq!(w.get(AttributeKind::Location), 0.20);
        assert_eq!(w.get(AttributeKind::AssessmentLimitations), 0.01);
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        assert!((total - 1.86).abs() < 1e-12);
    }

    #[test]
    fn overrides_and_validation() {
        let w = AttributeWeights::default()
            .with_overrides_json(r#"{"location": 0.3}"#)
            .unwrap();
        assert_eq!(w.get(AttributeKind::Location), 0.3);
        assert_eq!(w.get(AttributeKind::Severity), 0.15);
        assert!(AttributeWeights::default()
            .with_overrides_json(r#"{"texture": 1}"#)
            .is_err());
        assert!(AttributeWeights::default()
            .with_overrides_json(r#"{"location": -1}"#)
            .is_err());
        assert!(AttributeWeights::default()
            .with_overrides_json(r#"{"dx_status": 0}"#)
            .is_err());
        assert!(AttributeWeights::new(BTreeMap::new()).is_err());
    }

    #[test]
    fn temporal_weights_sum_to_one() {
        assert!(TemporalWeights::new(0.3, 0.7).is_ok());
        assert!(TemporalWeights::new(0.5, 0.6).is_err());
        assert!(TemporalWeights::new(-0.5, 1.5).is_err());
    }
}
