//! Patient-level scoring of predicted against reference structured findings.
//!
//! Every predicted finding is compared with every reference finding, pooled
//! over all studies of the patient. A pair's match score is the product of
//! semantic, temporal (sequences of more than one study only) and structural
//! similarity. An optimal one-to-one assignment on those scores yields
//! partial-credit TP/FP/FN counts:
//!
//! * a matched pair with score `s` adds `s` to TP and `1 - s` to both FP and FN;
//! * an unmatched predicted finding adds `1 - max_j s_uj` to FP;
//! * an unmatched reference finding adds `1 - max_i s_iv` to FN.

mod assign;
mod components;
mod weights;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{assign, total as assignment_total, Assignment};
pub use components::{
    attribute_text, compared_kinds, linearize_single, semantic_score, structural_score, temporal_score, Components,
    TemporalPosition, PHRASE_ATTRIBUTES,
};
pub use weights::{AttributeWeights, TemporalWeights};

use crate::embed::{EmbedError, SimilarityEnsemble};
use crate::model::{AttributeKind, Finding, MemberRef, PatientSequence, StructuredReport};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{side} finding `{finding_id}` in study {study_idx} belongs to no entity group")]
    UngroupedFinding {
        side: &'static str,
        study_idx: usize,
        finding_id: String,
    },
    #[error("sequence lengths differ: {pred} predicted vs {gold} reference studies")]
    SequenceLengthMismatch { pred: usize, gold: usize },
    #[error("assignment does not fit a {rows}x{cols} matrix")]
    AssignmentMatrixMismatch { rows: usize, cols: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

impl ScoreError {
    pub fn is_provider_error(&self) -> bool {
        matches!(self, ScoreError::Embed(EmbedError::ProviderUnavailable { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub attribute_weights: AttributeWeights,
    pub temporal_weights: TemporalWeights,
    /// Pairs scoring at or below this value are never matched.
    pub match_threshold: f64,
    /// In sequential mode, score findings outside any entity group on their
    /// linearized phrase instead of failing.
    pub allow_ungrouped: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            attribute_weights: AttributeWeights::default(),
            temporal_weights: TemporalWeights::default(),
            match_threshold: 0.0,
            allow_ungrouped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Sequential,
}

/// A finding prepared for comparison.
#[derive(Debug, Clone)]
struct Entry<'a> {
    label: String,
    finding: &'a Finding,
    /// Linearized phrase or entity-group name.
    representation: String,
    position: TemporalPosition,
}

/// Pairwise scores with their components. Rows are predicted findings and
/// columns reference findings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchMatrix {
    pub pred_ids: Vec<String>,
    pub gold_ids: Vec<String>,
    pub cells: Vec<Vec<Components>>,
}

impl MatchMatrix {
    /// Builds a matrix from bare scores, for callers that bring their own
    /// similarity values.
    pub fn from_scores(scores: Vec<Vec<f64>>) -> Self {
        let rows = scores.len();
        let cols = scores.first().map_or(0, Vec::len);
        MatchMatrix {
            pred_ids: (0..rows).map(|i| format!("p{i}")).collect(),
            gold_ids: (0..cols).map(|j| format!("g{j}")).collect(),
            cells: scores
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|s| Components {
                            semantic: s,
                            temporal: None,
                            structural: 1.0,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.pred_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.gold_ids.len()
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col].total()
    }

    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(Components::total).collect())
            .collect()
    }

    pub fn assign(&self, threshold: f64) -> Assignment {
        assign(&self.scores(), threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: String,
    pub gold: String,
    pub score: f64,
    pub semantic: f64,
    pub temporal: Option<f64>,
    pub structural: f64,
}

/// Precision/recall/F1 from fractional counts. Ratios with a zero
/// denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        ratio(2.0 * p * r, p + r)
    }

    pub fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn summary(&self) -> Summary {
        Summary {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Counts with derived precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: Vec<MatchedPair>,
    pub unmatched_pred: Vec<String>,
    pub unmatched_gold: Vec<String>,
}

impl ScoreBreakdown {
    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Partial-credit TP/FP/FN for an assignment on `matrix`.
///
/// The best-alternative term for an unmatched finding uses its full row or
/// column, including cells whose counterpart is matched elsewhere; an empty
/// opposing side contributes a maximum of 0.
pub fn aggregate(matrix: &MatchMatrix, assignment: &[(usize, usize)]) -> Result<ScoreBreakdown, ScoreError> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let mismatch = || ScoreError::AssignmentMatrixMismatch { rows, cols };
    if matrix.cells.len() != rows || matrix.cells.iter().any(|r| r.len() != cols) {
        return Err(mismatch());
    }
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in assignment {
        if r >= rows || c >= cols || row_used[r] || col_used[c] {
            return Err(mismatch());
        }
        row_used[r] = true;
        col_used[c] = true;
    }
    let scores = matrix.scores();

    let mut counts = Counts::default();
    let mut matched = Vec::with_capacity(assignment.len());
    for &(r, c) in assignment {
        let s = scores[r][c];
        counts.tp += s;
        counts.fp += 1.0 - s;
        counts.fn_ += 1.0 - s;
        let comp = matrix.cells[r][c];
        matched.push(MatchedPair {
            pred: matrix.pred_ids[r].clone(),
            gold: matrix.gold_ids[c].clone(),
            score: s,
            semantic: comp.semantic,
            temporal: comp.temporal,
            structural: comp.structural,
        });
    }
    let mut unmatched_pred = Vec::new();
    for r in (0..rows).filter(|&r| !row_used[r]) {
        let best = scores[r].iter().copied().fold(0.0, f64::max);
        counts.fp += 1.0 - best;
        unmatched_pred.push(matrix.pred_ids[r].clone());
    }
    let mut unmatched_gold = Vec::new();
    for c in (0..cols).filter(|&c| !col_used[c]) {
        let best = scores.iter().map(|row| row[c]).fold(0.0, f64::max);
        counts.fn_ += 1.0 - best;
        unmatched_gold.push(matrix.gold_ids[c].clone());
    }

    let s = counts.summary();
    Ok(ScoreBreakdown {
        tp: s.tp,
        fp: s.fp,
        fn_: s.fn_,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        matched,
        unmatched_pred,
        unmatched_gold,
    })
}

/// Scores `pred` against `gold` with an ensemble and configuration.
pub struct Scorer<'a> {
    pub ensemble: &'a SimilarityEnsemble,
    pub config: &'a ScoreConfig,
}

impl<'a> Scorer<'a> {
    pub fn new(ensemble: &'a SimilarityEnsemble, config: &'a ScoreConfig) -> Self {
        Scorer { ensemble, config }
    }

    /// Semantic × structural for one pair, plus temporal when given.
    pub fn match_score(
        &self,
        pred: &Finding,
        gold: &Finding,
        representations: (&str, &str),
        positions: Option<(TemporalPosition, TemporalPosition)>,
    ) -> Result<Components, ScoreError> {
        let semantic = semantic_score(self.ensemble, representations.0, representations.1)?;
        let temporal = positions.map(|(p, g)| temporal_score(&self.config.temporal_weights, p, g));
        let structural = structural_score(&self.config.attribute_weights, self.ensemble, pred, gold)?;
        Ok(Components {
            semantic,
            temporal,
            structural,
        })
    }

    fn matrix(&self, pred: &[Entry<'_>], gold: &[Entry<'_>], sequential: bool) -> Result<MatchMatrix, ScoreError> {
        self.prefetch(pred, gold)?;
        let cells = pred
            .par_iter()
            .map(|p| {
                gold.iter()
                    .map(|g| {
                        let positions = sequential.then_some((p.position, g.position));
                        self.match_score(p.finding, g.finding, (&p.representation, &g.representation), positions)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MatchMatrix {
            pred_ids: pred.iter().map(|e| e.label.clone()).collect(),
            gold_ids: gold.iter().map(|e| e.label.clone()).collect(),
            cells,
        })
    }

    fn prefetch(&self, pred: &[Entry<'_>], gold: &[Entry<'_>]) -> Result<(), ScoreError> {
        let mut texts: Vec<String> = Vec::new();
        for e in pred.iter().chain(gold) {
            texts.push(e.representation.clone());
            for kind in AttributeKind::ALL.into_iter().filter(|k| !k.is_binary()) {
                if e.finding.attribute(kind).is_some() {
                    texts.push(attribute_text(e.finding, kind));
                }
            }
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        self.ensemble.prefetch(&refs)?;
        Ok(())
    }

    fn finish(&self, matrix: MatchMatrix) -> Result<ScoreBreakdown, ScoreError> {
        let assignment = matrix.assign(self.config.match_threshold);
        aggregate(&matrix, &assignment)
    }

    /// Single-report scoring over linearized phrases.
    pub fn score_single(&self, pred: &StructuredReport, gold: &StructuredReport) -> Result<ScoreBreakdown, ScoreError> {
        let matrix = self.single_matrix(pred, gold)?;
        self.finish(matrix)
    }

    pub fn single_matrix(&self, pred: &StructuredReport, gold: &StructuredReport) -> Result<MatchMatrix, ScoreError> {
        self.matrix(&single_entries(pred), &single_entries(gold), false)
    }

    /// Patient-level scoring pooled over all studies.
    ///
    /// Studies are aligned by chronological index. With a single study on
    /// each side this is exactly [`Scorer::score_single`].
    pub fn score_sequence(&self, pred: &PatientSequence, gold: &PatientSequence) -> Result<ScoreBreakdown, ScoreError> {
        if pred.reports.len() != gold.reports.len() {
            return Err(ScoreError::SequenceLengthMismatch {
                pred: pred.reports.len(),
                gold: gold.reports.len(),
            });
        }
        if gold.reports.len() == 1 {
            return self.score_single(&pred.reports[0], &gold.reports[0]);
        }
        let matrix = self.sequence_matrix(pred, gold)?;
        self.finish(matrix)
    }

    pub fn sequence_matrix(&self, pred: &PatientSequence, gold: &PatientSequence) -> Result<MatchMatrix, ScoreError> {
        let p = self.sequence_entries(pred, "pred")?;
        let g = self.sequence_entries(gold, "gold")?;
        self.matrix(&p, &g, true)
    }

    fn sequence_entries<'s>(&self, seq: &'s PatientSequence, side: &'static str) -> Result<Vec<Entry<'s>>, ScoreError> {
        let index = seq.group_index();
        let mut out = Vec::with_capacity(seq.finding_count());
        for (t, report) in seq.reports.iter().enumerate() {
            for f in &report.findings {
                let slot = index.get(&MemberRef::new(t, f.id.clone()));
                let (representation, episode) = match slot {
                    Some(slot) => (slot.group.group_name.clone(), Some(slot.episode_ordinal)),
                    None if self.config.allow_ungrouped => (linearize_single(f), None),
                    None => {
                        return Err(ScoreError::UngroupedFinding {
                            side,
                            study_idx: t,
                            finding_id: f.id.clone(),
                        })
                    }
                };
                out.push(Entry {
                    label: format!("{}/{}", report.study_id, f.id),
                    finding: f,
                    representation,
                    position: TemporalPosition { study_idx: t, episode },
                });
            }
        }
        Ok(out)
    }
}

fn single_entries(report: &StructuredReport) -> Vec<Entry<'_>> {
    report
        .findings
        .iter()
        .map(|f| Entry {
            label: f.id.clone(),
            finding: f,
            representation: linearize_single(f),
            position: TemporalPosition {
                study_idx: 0,
                episode: None,
            },
        })
        .collect()
}

/// Convenience wrapper around [`Scorer::score_single`].
pub fn score_single(
    ensemble: &SimilarityEnsemble,
    config: &ScoreConfig,
    pred: &StructuredReport,
    gold: &StructuredReport,
) -> Result<ScoreBreakdown, ScoreError> {
    Scorer::new(ensemble, config).score_single(pred, gold)
}

/// Convenience wrapper around [`Scorer::score_sequence`].
pub fn score_sequence(
    ensemble: &SimilarityEnsemble,
    config: &ScoreConfig,
    pred: &PatientSequence,
    gold: &PatientSequence,
) -> Result<ScoreBreakdown, ScoreError> {
    Scorer::new(ensemble, config).score_sequence(pred, gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_partial_match() {
        // TP = 0.6, FP = FN = 1 - 0.6, F1 = 2PR/(P+R) with P = R = 0.6
        let m = MatchMatrix::from_scores(vec![vec![0.6]]);
        let b = aggregate(&m, &m.assign(0.0)).unwrap();
        assert!((b.tp - 0.6).abs() < 1e-12);
        assert!((b.fp - 0.4).abs() < 1e-12);
        assert!((b.fn_ - 0.4).abs() < 1e-12);
        assert!((b.f1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn aggregate_empty_prediction() {
        let m = MatchMatrix {
            pred_ids: vec![],
            gold_ids: vec!["g0".into()],
            cells: vec![],
        };
        let b = aggregate(&m, &[]).unwrap();
        assert_eq!((b.tp, b.fp, b.fn_, b.f1), (0.0, 0.0, 1.0, 0.0));
        assert_eq!(b.unmatched_gold, ["g0"]);
    }

    #[test]
    fn aggregate_perfect() {
        let m = MatchMatrix::from_scores(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = aggregate(&m, &m.assign(0.0)).unwrap();
        assert_eq!((b.tp, b.fp, b.fn_, b.f1), (2.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn unmatched_penalty_uses_full_row() {
        // Row 1 loses column 0 to row 0 but its best alternative is still 0.5.
        let m = MatchMatrix::from_scores(vec![vec![0.9], vec![0.5]]);
        let b = aggregate(&m, &m.assign(0.0)).unwrap();
        assert_eq!(b.unmatched_pred, ["p1"]);
        assert!((b.fp - (0.1 + 0.5)).abs() < 1e-12);
        assert!((b.fn_ - 0.1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_bad_assignment() {
        let m = MatchMatrix::from_scores(vec![vec![0.5, 0.5]]);
        assert!(matches!(
            aggregate(&m, &[(0, 0), (0, 1)]),
            Err(ScoreError::AssignmentMatrixMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&m, &[(3, 0)]),
            Err(ScoreError::AssignmentMatrixMismatch { .. })
        ));
    }

    #[test]
    fn zero_denominators() {
        let c = Counts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    use crate::embed::PairTable;
    use crate::model::{DxStatus, EntityCategory, EntityGroup, TemporalGroup};
    use proptest::prelude::*;

    fn report(id: &str, day: u32, findings: Vec<Finding>) -> StructuredReport {
        StructuredReport {
            study_id: id.into(),
            study_day: day,
            findings,
            source_text: None,
        }
    }

    fn two_study_sequence(second_episode: u32) -> PatientSequence {
        let f = || Finding::new("f1", "effusion", EntityCategory::Pf);
        let episodes = if second_episode == 1 {
            vec![TemporalGroup {
                episode_ordinal: 1,
                member_study_idxs: vec![0, 1],
            }]
        } else {
            vec![
                TemporalGroup {
                    episode_ordinal: 1,
                    member_study_idxs: vec![0],
                },
                TemporalGroup {
                    episode_ordinal: 2,
                    member_study_idxs: vec![1],
                },
            ]
        };
        PatientSequence {
            patient_id: "p".into(),
            reports: vec![report("s0", 0, vec![f()]), report("s1", 5, vec![f()])],
            entity_groups: vec![EntityGroup {
                group_id: "g1".into(),
                group_name: "pleural effusion".into(),
                members: vec![MemberRef::new(0, "f1"), MemberRef::new(1, "f1")],
                episodes,
            }],
        }
    }

    #[test]
    fn identical_sequence_is_perfect() {
        let e = SimilarityEnsemble::deterministic(3, 32);
        let seq = two_study_sequence(2);
        let b = score_sequence(&e, &ScoreConfig::default(), &seq, &seq).unwrap();
        assert_eq!((b.tp, b.fp, b.fn_, b.f1), (2.0, 0.0, 0.0, 1.0));
        assert_eq!(b.matched[0].pred, "s0/f1");
        assert_eq!(b.matched[0].temporal, Some(1.0));
    }

    #[test]
    fn episode_disagreement_halves_temporal() {
        // Same study, different episode: 0.5 * 1 + 0.5 * 0.
        let e = SimilarityEnsemble::deterministic(3, 32);
        let b = score_sequence(
            &e,
            &ScoreConfig::default(),
            &two_study_sequence(1),
            &two_study_sequence(2),
        )
        .unwrap();
        let s1 = b.matched.iter().find(|m| m.pred == "s1/f1").unwrap();
        assert_eq!(s1.temporal, Some(0.5));
        assert!((s1.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_study_sequence_equals_single_mode() {
        let e = SimilarityEnsemble::deterministic(9, 32);
        let a = report("s", 0, vec![Finding::new("a", "opacity", EntityCategory::Pf)]);
        let b = report("s", 0, vec![Finding::new("b", "consolidation", EntityCategory::Pf)]);
        let cfg = ScoreConfig::default();
        let single = score_single(&e, &cfg, &a, &b).unwrap();
        let seq = score_sequence(
            &e,
            &cfg,
            &PatientSequence::from_report(a),
            &PatientSequence::from_report(b),
        )
        .unwrap();
        assert_eq!(single, seq);
    }

    #[test]
    fn ungrouped_findings() {
        let e = SimilarityEnsemble::deterministic(3, 32);
        let mut seq = two_study_sequence(1);
        seq.entity_groups.clear();
        let err = score_sequence(&e, &ScoreConfig::default(), &seq, &seq).unwrap_err();
        assert!(matches!(err, ScoreError::UngroupedFinding { study_idx: 0, .. }));
        let cfg = ScoreConfig {
            allow_ungrouped: true,
            ..ScoreConfig::default()
        };
        let b = score_sequence(&e, &cfg, &seq, &seq).unwrap();
        // study matches, missing episode never does
        assert!(b.matched.iter().all(|m| m.temporal == Some(0.5)));
    }

    #[test]
    fn length_mismatch() {
        let e = SimilarityEnsemble::deterministic(3, 32);
        let one = PatientSequence::from_report(report("s", 0, vec![]));
        assert!(matches!(
            score_sequence(&e, &ScoreConfig::default(), &one, &two_study_sequence(1)),
            Err(ScoreError::SequenceLengthMismatch { pred: 1, gold: 2 })
        ));
    }

    #[test]
    fn example_two_total() {
        let gold = Finding::new("g", "opacification", EntityCategory::Pf)
            .with_attribute(AttributeKind::Location, ["left retrocardiac"]);
        let pred = Finding::new("p", "pleural effusion", EntityCategory::Pf)
            .with_attribute(AttributeKind::Location, ["left"])
            .with_attribute(AttributeKind::Severity, ["moderate"]);
        let table = PairTable::from_pairs([
            (("left", "left retrocardiac"), 0.60),
            (
                ("pleural effusion left moderate", "opacification left retrocardiac"),
                0.447,
            ),
        ]);
        let e = SimilarityEnsemble::single(table);
        let cfg = ScoreConfig::default();
        let c = Scorer::new(&e, &cfg)
            .match_score(&pred, &gold, (&linearize_single(&pred), &linearize_single(&gold)), None)
            .unwrap();
        assert!((c.total() - 0.447 * 0.72 / 0.95).abs() < 1e-12);
        assert!((c.total() - 0.339).abs() < 1e-3);
    }

    /// Exhaustive maximum over all partial matchings of a small matrix.
    fn brute_force(scores: &[Vec<f64>]) -> f64 {
        fn go(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == scores.len() {
                return 0.0;
            }
            let mut best = go(scores, row + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(scores[row][c] + go(scores, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let cols = scores.first().map_or(0, Vec::len);
        go(scores, 0, &mut vec![false; cols])
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (0usize..5, 0usize..5).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0.0f64..=1.0, c), r))
    }

    fn finding_strategy() -> impl Strategy<Value = Finding> {
        let words = prop::sample::select(vec!["opacity", "effusion", "left", "right", "small", "stable", "base"]);
        (
            words.clone(),
            prop::option::of(words.clone()),
            prop::option::of(words),
            any::<bool>(),
        )
            .prop_map(|(entity, loc, sev, neg)| {
                let mut f = Finding::new("f", entity, EntityCategory::Pf);
                if let Some(l) = loc {
                    f = f.with_attribute(AttributeKind::Location, [l]);
                }
                if let Some(s) = sev {
                    f = f.with_attribute(AttributeKind::Severity, [s]);
                }
                if neg {
                    f = f.with_status(DxStatus::Negative);
                }
                f
            })
    }

    fn report_strategy() -> impl Strategy<Value = StructuredReport> {
        prop::collection::vec(finding_strategy(), 0..5).prop_map(|mut fs| {
            for (i, f) in fs.iter_mut().enumerate() {
                f.id = format!("f{i}");
            }
            report("s", 0, fs)
        })
    }

    proptest! {
        #[test]
        fn assignment_is_optimal(m in matrix_strategy()) {
            let a = assign(&m, 0.0);
            prop_assert!((assignment_total(&m, &a) - brute_force(&m)).abs() < 1e-9);
            let mut rows: Vec<_> = a.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = a.iter().map(|p| p.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(rows.len(), a.len());
            prop_assert_eq!(cols.len(), a.len());
        }

        #[test]
        fn counts_are_bounded(m in matrix_strategy()) {
            let mm = MatchMatrix::from_scores(m.clone());
            let b = aggregate(&mm, &mm.assign(0.0)).unwrap();
            let (rows, cols) = (mm.rows() as f64, mm.cols() as f64);
            prop_assert!(b.tp >= 0.0 && b.fp >= 0.0 && b.fn_ >= 0.0);
            prop_assert!(b.tp + b.fp <= rows + 1e-9);
            prop_assert!(b.tp + b.fn_ <= cols + 1e-9);
            prop_assert!(b.tp <= rows.min(cols) + 1e-9);
            prop_assert!((0.0..=1.0).contains(&b.f1));
        }

        #[test]
        fn swapping_sides_swaps_precision_and_recall(m in matrix_strategy()) {
            let cols = m.first().map_or(0, Vec::len);
            // a row-major empty matrix has no column count to transpose
            prop_assume!(cols > 0);
            let t: Vec<Vec<f64>> = (0..cols).map(|j| m.iter().map(|row| row[j]).collect()).collect();
            let a = MatchMatrix::from_scores(m);
            let b = MatchMatrix::from_scores(t);
            let x = aggregate(&a, &a.assign(0.0)).unwrap();
            let y = aggregate(&b, &b.assign(0.0)).unwrap();
            prop_assert!((x.tp - y.tp).abs() < 1e-9);
            prop_assert!((x.fp - y.fn_).abs() < 1e-9);
            prop_assert!((x.f1 - y.f1).abs() < 1e-9);
        }

        #[test]
        fn identity_scores_one(r in report_strategy(), seed in 0u64..3) {
            let e = SimilarityEnsemble::deterministic(seed, 16);
            let b = score_single(&e, &ScoreConfig::default(), &r, &r).unwrap();
            prop_assert_eq!(b.tp, r.findings.len() as f64);
            prop_assert_eq!(b.fp, 0.0);
            prop_assert_eq!(b.fn_, 0.0);
        }

        #[test]
        fn structural_invariant_to_weight_scale(p in finding_strategy(), g in finding_strategy(), k in 0.1f64..10.0) {
            let e = SimilarityEnsemble::deterministic(5, 16);
            let w = AttributeWeights::default();
            let a = structural_score(&w, &e, &p, &g).unwrap();
            let b = structural_score(&w.scaled(k).unwrap(), &e, &p, &g).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn extra_prediction_never_raises_precision(r in report_strategy(), extra in finding_strategy()) {
            let e = SimilarityEnsemble::deterministic(2, 16);
            let cfg = ScoreConfig::default();
            let base = score_single(&e, &cfg, &r, &r).unwrap();
            let mut more = r.clone();
            let mut extra = extra;
            extra.id = "extra".into();
            more.findings.push(extra);
            let b = score_single(&e, &cfg, &more, &r).unwrap();
            prop_assert!(b.precision <= base.precision + 1e-12);
            prop_assert!(b.fp >= base.fp);
        }

        #[test]
        fn total_is_product(s in 0.0f64..=1.0, t in 0.0f64..=1.0, st in 0.0f64..=1.0) {
            let c = Components { semantic: s, temporal: Some(t), structural: st };
            prop_assert!((c.total() - s * t * st).abs() < 1e-15);
            prop_assert!(c.total() <= s.min(t).min(st) + 1e-15);
        }
    }
}
