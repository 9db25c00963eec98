//! The three per-pair similarity components and their product.

use serde::Serialize;

use super::{AttributeWeights, ScoreError, TemporalWeights};
use crate::embed::SimilarityEnsemble;
use crate::model::{AttributeKind, Finding};

/// Attribute kinds that make up the linearized phrase, in phrase order.
pub const PHRASE_ATTRIBUTES: [AttributeKind; 10] = [
    AttributeKind::Location,
    AttributeKind::Morphology,
    AttributeKind::Distribution,
    AttributeKind::Measurement,
    AttributeKind::Severity,
    AttributeKind::Onset,
    AttributeKind::Improved,
    AttributeKind::Worsened,
    AttributeKind::NoChange,
    AttributeKind::Placement,
];

/// Entity text followed by its descriptive attribute values.
///
/// Multi-valued attributes are joined by `", "`; diagnostic status,
/// certainty and the contextual attributes are left out.
pub fn linearize_single(f: &Finding) -> String {
    let mut parts: Vec<String> = vec![f.entity_text.clone()];
    for kind in PHRASE_ATTRIBUTES {
        if let Some(values) = f.attribute(kind) {
            parts.push(values.join(", "));
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

/// Value string compared for one non-binary attribute; empty when absent.
pub fn attribute_text(f: &Finding, kind: AttributeKind) -> String {
    f.attribute(kind).map(|v| v.join(", ")).unwrap_or_default()
}

/// Similarity of two semantic representations (linearized phrases or group
/// names).
pub fn semantic_score(ensemble: &SimilarityEnsemble, pred: &str, gold: &str) -> Result<f64, ScoreError> {
    Ok(ensemble.similarity(pred, gold)?)
}

/// Study/episode position of a finding for the temporal component. A
/// finding outside any group has no episode, which never matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalPosition {
    pub study_idx: usize,
    pub episode: Option<u32>,
}

pub fn temporal_score(weights: &TemporalWeights, pred: TemporalPosition, gold: TemporalPosition) -> f64 {
    let same_study = pred.study_idx == gold.study_idx;
    let same_episode = pred.episode.is_some() && pred.episode == gold.episode;
    weights.w_study * f64::from(u8::from(same_study)) + weights.w_group * f64::from(u8::from(same_episode))
}

/// Attribute kinds compared between two findings: both binary kinds plus
/// every free-text kind present on either side.
pub fn compared_kinds(pred: &Finding, gold: &Finding) -> Vec<AttributeKind> {
    AttributeKind::ALL
        .into_iter()
        .filter(|&k| k.is_binary() || pred.attribute(k).is_some() || gold.attribute(k).is_some())
        .collect()
}

/// Weighted attribute agreement, normalized by the total weight of the
/// compared kinds.
pub fn structural_score(
    weights: &AttributeWeights,
    ensemble: &SimilarityEnsemble,
    pred: &Finding,
    gold: &Finding,
) -> Result<f64, ScoreError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for kind in compared_kinds(pred, gold) {
        let w = weights.get(kind);
        let sim = match kind {
            AttributeKind::DxStatus => f64::from(u8::from(pred.dx_status == gold.dx_status)),
            AttributeKind::DxCertainty => f64::from(u8::from(pred.dx_certainty == gold.dx_certainty)),
            _ => ensemble.similarity(&attribute_text(pred, kind), &attribute_text(gold, kind))?,
        };
        num += w * sim;
        den += w;
    }
    // den >= weight of dx_status > 0
    Ok(num / den)
}

/// Components of one pair's match score. `temporal` is `None` in
/// single-report mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Components {
    pub semantic: f64,
    pub temporal: Option<f64>,
    pub structural: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.semantic * self.temporal.unwrap_or(1.0) * self.structural
    }
}
