//! Controlled perturbations of reference data and the Effect Rate they cause.
//!
//! Effect Rate = (1 - score) / changes × 100, the score drop per perturbed
//! attribute in percent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AttributeKind, EntityCategory, EntityGroup, Finding, ModelError, PatientSequence, TemporalGroup};
use crate::score::{Counts, ScoreError, Scorer};

const DEFAULT_ANTONYMS: &str = include_str!("../data/antonyms.json");

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("antonym map: {0}")]
    Antonyms(String),
    #[error("perturbation {kind} needs {what}")]
    MissingPayload { kind: PerturbationKind, what: &'static str },
    #[error("perturbed sequence `{patient_id}` is invalid: {error}")]
    Invalid { patient_id: String, error: ModelError },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("report output: {0}")]
    Output(String),
}

/// Word-level antonym pairs, applied in both directions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AntonymMap(HashMap<String, String>);

impl AntonymMap {
    /// The shipped radiology change terms.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_ANTONYMS).expect("builtin antonyms are valid")
    }

    /// Reads a JSON list of `[word, antonym]` pairs. A word may appear in
    /// only one pair.
    pub fn from_json(text: &str) -> Result<Self, PerturbError> {
        let pairs: Vec<(String, String)> =
            serde_json::from_str(text).map_err(|e| PerturbError::Antonyms(e.to_string()))?;
        let mut map = AntonymMap::default();
        map.extend(pairs)?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PerturbError::Antonyms(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn extend<I: IntoIterator<Item = (String, String)>>(&mut self, pairs: I) -> Result<(), PerturbError> {
        for (a, b) in pairs {
            let (a, b) = (a.to_lowercase(), b.to_lowercase());
            for w in [&a, &b] {
                if self.0.contains_key(w) {
                    return Err(PerturbError::Antonyms(format!("`{w}` appears in more than one pair")));
                }
            }
            if a == b {
                return Err(PerturbError::Antonyms(format!("`{a}` paired with itself")));
            }
            self.0.insert(a.clone(), b.clone());
            self.0.insert(b, a);
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.0.get(&word.to_lowercase()).map(String::as_str)
    }

    /// Replaces every mapped word of `phrase`, keeping a leading capital.
    pub fn invert_phrase(&self, phrase: &str) -> String {
        phrase
            .split(' ')
            .map(|w| match self.get(w) {
                Some(a) if w.starts_with(char::is_uppercase) => {
                    let mut c = a.chars();
                    c.next()
                        .map(|f| f.to_uppercase().chain(c).collect())
                        .unwrap_or_default()
                }
                Some(a) => a.to_string(),
                None => w.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Swap every Improved and Worsened value, inverting its wording.
    FlipTemporal,
    DeleteFinding,
    InsertFinding,
    /// Overwrite one attribute's values.
    EditAttribute,
    NegateStatus,
    ChangeSeverity,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 6] = [
        PerturbationKind::FlipTemporal,
        PerturbationKind::DeleteFinding,
        PerturbationKind::InsertFinding,
        PerturbationKind::EditAttribute,
        PerturbationKind::NegateStatus,
        PerturbationKind::ChangeSeverity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::FlipTemporal => "flip-temporal",
            PerturbationKind::DeleteFinding => "delete-finding",
            PerturbationKind::InsertFinding => "insert-finding",
            PerturbationKind::EditAttribute => "edit-attribute",
            PerturbationKind::NegateStatus => "negate-status",
            PerturbationKind::ChangeSeverity => "change-severity",
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown perturbation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    /// Findings to alter for the randomly targeted kinds. `FlipTemporal`
    /// always flips everything.
    pub count: usize,
    /// Attribute rewritten by `EditAttribute`.
    pub attribute: Option<AttributeKind>,
    /// New value for `EditAttribute`; entity text for `InsertFinding`.
    pub value: Option<String>,
    pub seed: u64,
}

impl Perturbation {
    pub fn new(kind: PerturbationKind, seed: u64) -> Self {
        Perturbation {
            kind,
            count: 1,
            attribute: None,
            value: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub sequence: PatientSequence,
    /// Attribute values or findings changed.
    pub changes: usize,
}

/// Severity rewrites; anything else becomes "severe".
const SEVERITY_SWAPS: [(&str, &str); 8] = [
    ("mild", "severe"),
    ("severe", "mild"),
    ("small", "large"),
    ("large", "small"),
    ("minimal", "extensive"),
    ("extensive", "minimal"),
    ("moderate", "severe"),
    ("trace", "large"),
];

/// Every Improved value moves to Worsened and vice versa, with its words
/// inverted. Returns the number of values moved.
pub fn flip_temporal_attributes(seq: &PatientSequence, antonyms: &AntonymMap) -> Applied {
    let mut out = seq.clone();
    let mut changes = 0;
    for f in out.reports.iter_mut().flat_map(|r| r.findings.iter_mut()) {
        let improved = f.attributes.remove(&AttributeKind::Improved).unwrap_or_default();
        let worsened = f.attributes.remove(&AttributeKind::Worsened).unwrap_or_default();
        changes += improved.len() + worsened.len();
        let flip = |v: Vec<String>| -> Vec<String> { v.iter().map(|s| antonyms.invert_phrase(s)).collect() };
        let (to_worsened, to_improved) = (flip(improved), flip(worsened));
        if !to_worsened.is_empty() {
            f.attributes.insert(AttributeKind::Worsened, to_worsened);
        }
        if !to_improved.is_empty() {
            f.attributes.insert(AttributeKind::Improved, to_improved);
        }
    }
    Applied { sequence: out, changes }
}

fn case_rng(seed: u64, patient_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = patient_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    rng.set_stream(stream);
    rng
}

/// Positions `(study_idx, finding_idx)` of findings satisfying `keep`.
fn positions(seq: &PatientSequence, keep: impl Fn(&Finding) -> bool) -> Vec<(usize, usize)> {
    seq.reports
        .iter()
        .enumerate()
        .flat_map(|(t, r)| r.findings.iter().enumerate().map(move |(i, f)| (t, i, f)))
        .filter(|(_, _, f)| keep(f))
        .map(|(t, i, _)| (t, i))
        .collect()
}

fn choose(rng: &mut ChaCha8Rng, pool: Vec<(usize, usize)>, count: usize) -> Vec<(usize, usize)> {
    let n = count.min(pool.len());
    let mut picked: Vec<(usize, usize)> = sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Drops group members that no longer exist, then empty episodes and
/// groups, renumbering what remains.
fn prune_groups(seq: &mut PatientSequence) {
    let existing: BTreeSet<(usize, String)> = seq
        .reports
        .iter()
        .enumerate()
        .flat_map(|(t, r)| r.findings.iter().map(move |f| (t, f.id.clone())))
        .collect();
    for g in &mut seq.entity_groups {
        g.members
            .retain(|m| existing.contains(&(m.study_idx, m.finding_id.clone())));
        let studies: BTreeSet<usize> = g.members.iter().map(|m| m.study_idx).collect();
        for e in &mut g.episodes {
            e.member_study_idxs.retain(|t| studies.contains(t));
        }
        g.episodes.retain(|e| !e.member_study_idxs.is_empty());
        for (n, e) in g.episodes.iter_mut().enumerate() {
            e.episode_ordinal = n as u32 + 1;
        }
    }
    seq.entity_groups.retain(|g| !g.members.is_empty());
}

/// Applies one perturbation; the result is re-validated.
pub fn apply(seq: &PatientSequence, p: &Perturbation, antonyms: &AntonymMap) -> Result<Applied, PerturbError> {
    let mut rng = case_rng(p.seed, &seq.patient_id);
    let mut out = seq.clone();
    let changes = match p.kind {
        PerturbationKind::FlipTemporal => {
            let a = flip_temporal_attributes(seq, antonyms);
            out = a.sequence;
            a.changes
        }
        PerturbationKind::DeleteFinding => {
            let picked = choose(&mut rng, positions(seq, |_| true), p.count);
            let mut removed: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
            for &(t, i) in &picked {
                removed
                    .entry(t)
                    .or_default()
                    .insert(seq.reports[t].findings[i].id.clone());
            }
            for (t, ids) in &removed {
                let r = &mut out.reports[*t];
                r.findings.retain(|f| !ids.contains(&f.id));
                for f in &mut r.findings {
                    f.relations.retain(|rel| !ids.contains(&rel.target_id));
                }
            }
            prune_groups(&mut out);
            picked.len()
        }
        PerturbationKind::InsertFinding => {
            if out.reports.is_empty() {
                0
            } else {
                let text = p.value.clone().unwrap_or_else(|| "pneumothorax".to_string());
                for k in 0..p.count {
                    let t = rng.random_range(0..out.reports.len());
                    let r = &mut out.reports[t];
                    let mut n = k;
                    let id = loop {
                        let id = format!("ins{n}");
                        if r.finding(&id).is_none() {
                            break id;
                        }
                        n += 1;
                    };
                    r.findings
                        .push(Finding::new(id.clone(), text.clone(), EntityCategory::Pf));
                    if !out.entity_groups.is_empty() {
                        out.entity_groups.push(EntityGroup {
                            group_id: format!("inserted-{t}-{id}"),
                            group_name: text.clone(),
                            members: vec![crate::model::MemberRef::new(t, id)],
                            episodes: vec![TemporalGroup {
                                episode_ordinal: 1,
                                member_study_idxs: vec![t],
                            }],
                        });
                    }
                }
                p.count
            }
        }
        PerturbationKind::EditAttribute => {
            let kind = p
                .attribute
                .filter(|k| !k.is_binary())
                .ok_or(PerturbError::MissingPayload {
                    kind: p.kind,
                    what: "a non-binary attribute",
                })?;
            let value = p.value.clone().ok_or(PerturbError::MissingPayload {
                kind: p.kind,
                what: "a value",
            })?;
            let picked = choose(&mut rng, positions(seq, |_| true), p.count);
            for &(t, i) in &picked {
                out.reports[t].findings[i].attributes.insert(kind, vec![value.clone()]);
            }
            picked.len()
        }
        PerturbationKind::NegateStatus => {
            let picked = choose(&mut rng, positions(seq, |_| true), p.count);
            for &(t, i) in &picked {
                let f = &mut out.reports[t].findings[i];
                f.dx_status = f.dx_status.negated();
            }
            picked.len()
        }
        PerturbationKind::ChangeSeverity => {
            let pool = positions(seq, |f| f.attribute(AttributeKind::Severity).is_some());
            let picked = choose(&mut rng, pool, p.count);
            for &(t, i) in &picked {
                let values = out.reports[t].findings[i]
                    .attributes
                    .get_mut(&AttributeKind::Severity)
                    .expect("picked findings have a severity");
                for v in values.iter_mut() {
                    let lower = v.to_lowercase();
                    *v = SEVERITY_SWAPS
                        .iter()
                        .find(|(from, _)| *from == lower)
                        .map_or("severe", |(_, to)| *to)
                        .to_string();
                }
            }
            picked.len()
        }
    };
    out.validate().map_err(|error| PerturbError::Invalid {
        patient_id: seq.patient_id.clone(),
        error,
    })?;
    Ok(Applied { sequence: out, changes })
}

/// Score drop per change, in percent. 0 when nothing changed.
pub fn effect_rate(score: f64, changes: usize) -> f64 {
    if changes == 0 {
        0.0
    } else {
        (1.0 - score) / changes as f64 * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub patient_id: String,
    pub flips: usize,
    pub single_score: f64,
    pub single_effect_rate: f64,
    pub seq_score: f64,
    pub seq_effect_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RateStats {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        Some(RateStats {
            mean: values.clone().sum::<f64>() / n as f64,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub perturbation: Perturbation,
    pub cases: Vec<CaseResult>,
    /// Patients left out because the perturbation changed nothing.
    pub skipped: Vec<String>,
    pub single: Option<RateStats>,
    pub sequential: Option<RateStats>,
}

/// Single-report score of a sequence: counts from each study scored on its
/// own, micro-averaged into one F1.
pub fn single_mode_f1(scorer: &Scorer<'_>, pred: &PatientSequence, gold: &PatientSequence) -> Result<f64, ScoreError> {
    if pred.reports.len() != gold.reports.len() {
        return Err(ScoreError::SequenceLengthMismatch {
            pred: pred.reports.len(),
            gold: gold.reports.len(),
        });
    }
    let mut total = Counts::default();
    for (p, g) in pred.reports.iter().zip(&gold.reports) {
        total.add(&scorer.score_single(p, g)?.counts());
    }
    Ok(total.f1())
}

/// Perturbs every gold sequence and scores it against the original in both
/// modes. Cases run in parallel; results keep input order.
pub fn run_sensitivity(
    scorer: &Scorer<'_>,
    golds: &[PatientSequence],
    perturbation: &Perturbation,
    antonyms: &AntonymMap,
) -> Result<SensitivityReport, PerturbError> {
    let outcomes = golds
        .par_iter()
        .map(|gold| -> Result<Option<CaseResult>, PerturbError> {
            let applied = apply(gold, perturbation, antonyms)?;
            if applied.changes == 0 {
                return Ok(None);
            }
            let single_score = single_mode_f1(scorer, &applied.sequence, gold)?;
            let seq_score = scorer.score_sequence(&applied.sequence, gold)?.f1;
            Ok(Some(CaseResult {
                patient_id: gold.patient_id.clone(),
                flips: applied.changes,
                single_score,
                single_effect_rate: effect_rate(single_score, applied.changes),
                seq_score,
                seq_effect_rate: effect_rate(seq_score, applied.changes),
            }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for (gold, outcome) in golds.iter().zip(outcomes) {
        match outcome {
            Some(c) => cases.push(c),
            None => {
                log::info!("{}: no applicable attributes, skipped", gold.patient_id);
                skipped.push(gold.patient_id.clone());
            }
        }
    }
    Ok(SensitivityReport {
        perturbation: perturbation.clone(),
        single: RateStats::of(cases.iter().map(|c| c.single_effect_rate)),
        sequential: RateStats::of(cases.iter().map(|c| c.seq_effect_rate)),
        cases,
        skipped,
    })
}

/// One CSV row per case, header always present.
pub fn write_csv<W: Write>(cases: &[CaseResult], out: W) -> Result<(), PerturbError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let err = |e: csv::Error| PerturbError::Output(e.to_string());
    w.write_record([
        "patient_id",
        "flips",
        "single_score",
        "single_effect_rate",
        "seq_score",
        "seq_effect_rate",
    ])
    .map_err(err)?;
    for c in cases {
        w.serialize(c).map_err(err)?;
    }
    w.flush().map_err(|e| PerturbError::Output(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::SimilarityEnsemble;
    use crate::model::{DxStatus, MemberRef, StructuredReport};
    use crate::score::ScoreConfig;
    use proptest::prelude::*;

    fn sequence(improved: &[&str]) -> PatientSequence {
        let mk = |id: &str, text: &str| {
            let mut f = Finding::new(id, text, EntityCategory::Pf)
                .with_attribute(AttributeKind::Location, ["right lower lobe"]);
            if id == "f1" && !improved.is_empty() {
                f = f.with_attribute(AttributeKind::Improved, improved.iter().copied());
            }
            f
        };
        let report = |sid: &str, day, fs| StructuredReport {
            study_id: sid.into(),
            study_day: day,
            findings: fs,
            source_text: None,
        };
        PatientSequence {
            patient_id: "p1".into(),
            reports: vec![
                report("s0", 0, vec![mk("f0", "opacification"), mk("f9", "effusion")]),
                report("s1", 7, vec![mk("f1", "opacification")]),
            ],
            entity_groups: vec![
                EntityGroup {
                    group_id: "g1".into(),
                    group_name: "opacification right lower lobe".into(),
                    members: vec![MemberRef::new(0, "f0"), MemberRef::new(1, "f1")],
                    episodes: vec![TemporalGroup {
                        episode_ordinal: 1,
                        member_study_idxs: vec![0, 1],
                    }],
                },
                EntityGroup {
                    group_id: "g2".into(),
                    group_name: "effusion".into(),
                    members: vec![MemberRef::new(0, "f9")],
                    episodes: vec![TemporalGroup {
                        episode_ordinal: 1,
                        member_study_idxs: vec![0],
                    }],
                },
            ],
        }
    }

    #[test]
    fn flip_example() {
        let a = flip_temporal_attributes(&sequence(&["decreased substantially"]), &AntonymMap::builtin());
        let f = &a.sequence.reports[1].findings[0];
        assert_eq!(a.changes, 1);
        assert_eq!(
            f.attribute(AttributeKind::Worsened).unwrap(),
            ["increased substantially"]
        );
        assert!(f.attribute(AttributeKind::Improved).is_none());
        let two = flip_temporal_attributes(&sequence(&["decreased", "Improved"]), &AntonymMap::builtin());
        assert_eq!(two.changes, 2);
        assert_eq!(
            two.sequence.reports[1].findings[0]
                .attribute(AttributeKind::Worsened)
                .unwrap(),
            ["increased", "Worsened"]
        );
        let none = flip_temporal_attributes(&sequence(&[]), &AntonymMap::builtin());
        assert_eq!(none.changes, 0);
        assert_eq!(none.sequence, sequence(&[]));
    }

    #[test]
    fn antonym_map_rejects_ambiguity() {
        assert!(AntonymMap::from_json(r#"[["a","b"],["b","c"]]"#).is_err());
        assert!(AntonymMap::from_json(r#"[["a","a"]]"#).is_err());
        let m = AntonymMap::builtin();
        assert_eq!(m.get("Increased"), Some("decreased"));
    }

    #[test]
    fn effect_rates_from_published_pairs() {
        assert!((effect_rate(0.992, 1) - 0.80).abs() < 0.005);
        assert!((effect_rate(0.968, 15) - 0.21).abs() < 0.005);
        assert_eq!(effect_rate(1.0, 3), 0.0);
        assert_eq!(effect_rate(0.5, 0), 0.0);
    }

    #[test]
    fn every_kind_revalidates_and_is_reproducible() {
        let antonyms = AntonymMap::builtin();
        let seq = sequence(&["decreased"]);
        for kind in PerturbationKind::ALL {
            let mut p = Perturbation::new(kind, 7);
            p.attribute = Some(AttributeKind::Location);
            p.value = Some("left apex".into());
            let a = apply(&seq, &p, &antonyms).unwrap();
            a.sequence.validate().unwrap();
            assert_eq!(a, apply(&seq, &p, &antonyms).unwrap(), "{kind}");
        }
        let p = Perturbation::new(PerturbationKind::EditAttribute, 1);
        assert!(matches!(
            apply(&seq, &p, &antonyms),
            Err(PerturbError::MissingPayload { .. })
        ));
    }

    #[test]
    fn delete_prunes_groups() {
        let mut p = Perturbation::new(PerturbationKind::DeleteFinding, 3);
        p.count = 3;
        let a = apply(&sequence(&[]), &p, &AntonymMap::builtin()).unwrap();
        assert_eq!(a.changes, 3);
        assert_eq!(a.sequence.finding_count(), 0);
        assert!(a.sequence.entity_groups.is_empty());
    }

    #[test]
    fn negate_changes_status() {
        let mut p = Perturbation::new(PerturbationKind::NegateStatus, 0);
        p.count = 10;
        let a = apply(&sequence(&[]), &p, &AntonymMap::builtin()).unwrap();
        assert_eq!(a.changes, 3);
        assert!(a
            .sequence
            .reports
            .iter()
            .flat_map(|r| &r.findings)
            .all(|f| f.dx_status == DxStatus::Negative));
    }

    #[test]
    fn flip_strictly_decreases_score() {
        let ensemble = SimilarityEnsemble::deterministic(11, 64);
        let config = ScoreConfig::default();
        let scorer = Scorer::new(&ensemble, &config);
        let golds = vec![sequence(&["decreased substantially"]), {
            let mut s = sequence(&[]);
            s.patient_id = "p2".into();
            s
        }];
        let r = run_sensitivity(
            &scorer,
            &golds,
            &Perturbation::new(PerturbationKind::FlipTemporal, 7),
            &AntonymMap::builtin(),
        )
        .unwrap();
        assert_eq!(r.skipped, ["p2"]);
        let c = &r.cases[0];
        assert!(c.single_score < 1.0 && c.seq_score < 1.0);
        assert!((c.seq_effect_rate - (1.0 - c.seq_score) * 100.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_csv(&r.cases, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("patient_id,flips,single_score,single_effect_rate,seq_score,seq_effect_rate\np1,1,"));
    }

    #[test]
    fn doubled_flips_bound_per_flip_rate() {
        let ensemble = SimilarityEnsemble::deterministic(11, 64);
        let config = ScoreConfig::default();
        let scorer = Scorer::new(&ensemble, &config);
        let one = sequence(&["decreased"]);
        let mut two = one.clone();
        two.reports[0].findings[0]
            .attributes
            .insert(AttributeKind::Improved, vec!["decreased".into()]);
        let p = Perturbation::new(PerturbationKind::FlipTemporal, 0);
        let r = run_sensitivity(&scorer, &[one, two], &p, &AntonymMap::builtin()).unwrap();
        let (a, b) = (&r.cases[0], &r.cases[1]);
        assert_eq!((a.flips, b.flips), (1, 2));
        assert!(b.seq_effect_rate <= 2.0 * a.seq_effect_rate + 1e-12);
        assert!(b.single_effect_rate <= 2.0 * a.single_effect_rate + 1e-12);
    }

    #[test]
    fn empty_csv_has_header() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "patient_id,flips,single_score,single_effect_rate,seq_score,seq_effect_rate\n"
        );
    }

    proptest! {
        #[test]
        fn perturbations_never_raise_f1(kind in prop::sample::select(PerturbationKind::ALL.to_vec()), seed in 0u64..50, count in 1usize..3) {
            let ensemble = SimilarityEnsemble::deterministic(5, 32);
            let config = ScoreConfig::default();
            let scorer = Scorer::new(&ensemble, &config);
            let gold = sequence(&["decreased"]);
            let p = Perturbation { kind, count, attribute: Some(AttributeKind::Severity), value: Some("moderate".into()), seed };
            let a = apply(&gold, &p, &AntonymMap::builtin()).unwrap();
            prop_assert!(scorer.score_sequence(&a.sequence, &gold).unwrap().f1 <= 1.0);
            prop_assert!(single_mode_f1(&scorer, &a.sequence, &gold).unwrap() <= 1.0);
            if a.changes > 0 {
                prop_assert!(scorer.score_sequence(&a.sequence, &gold).unwrap().f1 < 1.0);
            }
        }
    }
}
