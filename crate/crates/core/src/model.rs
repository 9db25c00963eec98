//! Schema-aligned data model for single and sequential structured reports.
//!
//! Documents are parsed into loosely typed raw records first and then
//! validated into the typed model, so that every failure can be classified
//! (unknown category, dangling relation, overlapping episodes, ...) and
//! reported together with the JSON path that caused it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Clinical category of a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    /// Perceptual finding, visible on the image.
    Pf,
    /// Contextual finding, inferred from context.
    Cf,
    /// Other objects such as devices.
    Oth,
    /// Clinical objective finding, e.g. lab values.
    Cof,
    /// Non-CXR diagnosis.
    Ncd,
    PatientInfo,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 6] = [
        EntityCategory::Pf,
        EntityCategory::Cf,
        EntityCategory::Oth,
        EntityCategory::Cof,
        EntityCategory::Ncd,
        EntityCategory::PatientInfo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityCategory::Pf => "pf",
            EntityCategory::Cf => "cf",
            EntityCategory::Oth => "oth",
            EntityCategory::Cof => "cof",
            EntityCategory::Ncd => "ncd",
            EntityCategory::PatientInfo => "patient_info",
        }
    }
}

impl FromStr for EntityCategory {
    type Err = ();

    /// Accepts the canonical lower-case names and their upper-case forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        EntityCategory::ALL.into_iter().find(|c| c.as_str() == lower).ok_or(())
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The sixteen attribute kinds that take part in structural scoring.
///
/// `DxStatus` and `DxCertainty` are binary and live in dedicated fields of
/// [`Finding`]; all other kinds carry free-text values in
/// [`Finding::attributes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    DxStatus,
    DxCertainty,
    Location,
    Severity,
    Onset,
    Improved,
    Worsened,
    Placement,
    NoChange,
    Morphology,
    Distribution,
    Measurement,
    Comparison,
    PastHx,
    OtherSource,
    AssessmentLimitations,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 16] = [
        AttributeKind::DxStatus,
        AttributeKind::DxCertainty,
        AttributeKind::Location,
        AttributeKind::Severity,
        AttributeKind::Onset,
        AttributeKind::Improved,
        AttributeKind::Worsened,
        AttributeKind::Placement,
        AttributeKind::NoChange,
        AttributeKind::Morphology,
        AttributeKind::Distribution,
        AttributeKind::Measurement,
        AttributeKind::Comparison,
        AttributeKind::PastHx,
        AttributeKind::OtherSource,
        AttributeKind::AssessmentLimitations,
    ];

    /// Lower-snake-case key used in JSON documents.
    pub fn key(self) -> &'static str {
        match self {
            AttributeKind::DxStatus => "dx_status",
            AttributeKind::DxCertainty => "dx_certainty",
            AttributeKind::Location => "location",
            AttributeKind::Severity => "severity",
            AttributeKind::Onset => "onset",
            AttributeKind::Improved => "improved",
            AttributeKind::Worsened => "worsened",
            AttributeKind::Placement => "placement",
            AttributeKind::NoChange => "no_change",
            AttributeKind::Morphology => "morphology",
            AttributeKind::Distribution => "distribution",
            AttributeKind::Measurement => "measurement",
            AttributeKind::Comparison => "comparison",
            AttributeKind::PastHx => "past_hx",
            AttributeKind::OtherSource => "other_source",
            AttributeKind::AssessmentLimitations => "assessment_limitations",
        }
    }

    pub fn from_key(key: &str) -> Option<AttributeKind> {
        AttributeKind::ALL.into_iter().find(|k| k.key() == key)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, AttributeKind::DxStatus | AttributeKind::DxCertainty)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DxStatus {
    Positive,
    Negative,
}

impl DxStatus {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "positive" => Some(DxStatus::Positive),
            "negative" => Some(DxStatus::Negative),
            _ => None,
        }
    }

    pub fn negated(self) -> Self {
        match self {
            DxStatus::Positive => DxStatus::Negative,
            DxStatus::Negative => DxStatus::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DxCertainty {
    Definitive,
    Tentative,
}

impl DxCertainty {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "definitive" => Some(DxCertainty::Definitive),
            "tentative" => Some(DxCertainty::Tentative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Associate,
    Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub target_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    History,
    Findings,
    Impression,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::History, Section::Findings, Section::Impression];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::History => "history",
            Section::Findings => "findings",
            Section::Impression => "impression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Section::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// One structured observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub id: String,
    pub entity_text: String,
    pub category: EntityCategory,
    pub dx_status: DxStatus,
    pub dx_certainty: DxCertainty,
    /// Free-text attribute values. Never holds the two binary kinds.
    pub attributes: BTreeMap<AttributeKind, Vec<String>>,
    pub relations: Vec<Relation>,
    pub sent_idx: u32,
    pub section: Section,
}

impl Finding {
    /// A positive, definitive finding with no attributes or relations.
    pub fn new(id: impl Into<String>, entity_text: impl Into<String>, category: EntityCategory) -> Self {
        Finding {
            id: id.into(),
            entity_text: entity_text.into(),
            category,
            dx_status: DxStatus::Positive,
            dx_certainty: DxCertainty::Definitive,
            attributes: BTreeMap::new(),
            relations: Vec::new(),
            sent_idx: 1,
            section: Section::Findings,
        }
    }

    pub fn with_attribute<I, S>(mut self, kind: AttributeKind, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        assert!(!kind.is_binary(), "{kind} is stored in a dedicated field");
        self.attributes
            .entry(kind)
            .or_default()
            .extend(values.into_iter().map(Into::into));
        self
    }

    pub fn with_status(mut self, status: DxStatus) -> Self {
        self.dx_status = status;
        self
    }

    pub fn with_certainty(mut self, certainty: DxCertainty) -> Self {
        self.dx_certainty = certainty;
        self
    }

    pub fn attribute(&self, kind: AttributeKind) -> Option<&[String]> {
        self.attributes.get(&kind).map(Vec::as_slice).filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuredReport {
    pub study_id: String,
    /// Days since the first study of the patient.
    pub study_day: u32,
    pub findings: Vec<Finding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_text: Option<BTreeMap<Section, String>>,
}

impl StructuredReport {
    pub fn finding(&self, id: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.id == id)
    }
}

/// Position of a finding inside a [`PatientSequence`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MemberRef {
    pub study_idx: usize,
    pub finding_id: String,
}

impl MemberRef {
    pub fn new(study_idx: usize, finding_id: impl Into<String>) -> Self {
        MemberRef {
            study_idx,
            finding_id: finding_id.into(),
        }
    }
}

/// One diagnostic episode of an [`EntityGroup`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemporalGroup {
    pub episode_ordinal: u32,
    pub member_study_idxs: Vec<usize>,
}

/// Findings across studies that denote the same clinical entity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityGroup {
    pub group_id: String,
    pub group_name: String,
    pub members: Vec<MemberRef>,
    pub episodes: Vec<TemporalGroup>,
}

impl EntityGroup {
    /// Episode ordinal of the episode containing `study_idx`.
    pub fn episode_of(&self, study_idx: usize) -> Option<u32> {
        self.episodes
            .iter()
            .find(|e| e.member_study_idxs.contains(&study_idx))
            .map(|e| e.episode_ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientSequence {
    pub patient_id: String,
    pub reports: Vec<StructuredReport>,
    pub entity_groups: Vec<EntityGroup>,
}

/// Group membership of one finding, resolved from a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSlot<'a> {
    pub group: &'a EntityGroup,
    pub episode_ordinal: u32,
}

impl PatientSequence {
    /// Wraps a single report as a one-study sequence without groups.
    pub fn from_report(report: StructuredReport) -> Self {
        PatientSequence {
            patient_id: report.study_id.clone(),
            reports: vec![report],
            entity_groups: Vec::new(),
        }
    }

    pub fn finding_count(&self) -> usize {
        self.reports.iter().map(|r| r.findings.len()).sum()
    }

    /// Maps every grouped finding to its group and episode.
    pub fn group_index(&self) -> HashMap<MemberRef, GroupSlot<'_>> {
        let mut out = HashMap::new();
        for group in &self.entity_groups {
            for member in &group.members {
                if let Some(ordinal) = group.episode_of(member.study_idx) {
                    out.insert(
                        member.clone(),
                        GroupSlot {
                            group,
                            episode_ordinal: ordinal,
                        },
                    );
                }
            }
        }
        out
    }

    /// Runs every sequence-level invariant check.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, report) in self.reports.iter().enumerate() {
            validate_report(report, &format!("$.reports[{i}]"))?;
        }
        validate_sequence_structure(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("{path}: missing or invalid field `{field}`")]
    InvalidField { path: String, field: String },
    #[error("{path}: unknown category `{value}`")]
    UnknownCategory { path: String, value: String },
    #[error("{path}: unknown attribute kind `{value}`")]
    UnknownAttributeKind { path: String, value: String },
    #[error("{path}: `{key}` belongs in its dedicated field, not in attributes")]
    ReservedAttribute { path: String, key: String },
    #[error("{path}: finding `{finding}` has no {field}")]
    MissingDiagnosis {
        path: String,
        finding: String,
        field: String,
    },
    #[error("{path}: invalid value `{value}` for {field}")]
    InvalidValue { path: String, field: String, value: String },
    #[error("{path}: finding `{finding}` relates to unknown target `{target}`")]
    DanglingRelationTarget {
        path: String,
        finding: String,
        target: String,
    },
    #[error("{path}: Evidence link from `{finding}` to `{target}` has no matching Associate link")]
    EvidenceWithoutAssociate {
        path: String,
        finding: String,
        target: String,
    },
    #[error("{path}: duplicate finding id `{id}`")]
    DuplicateFindingId { path: String, id: String },
    #[error("{path}: duplicate study id `{id}`")]
    DuplicateStudyId { path: String, id: String },
    #[error("{path}: study_day {day} does not follow {previous}")]
    UnorderedStudies { path: String, day: i64, previous: i64 },
    #[error("{path}: first study must have study_day 0, found {day}")]
    FirstStudyNotDayZero { path: String, day: i64 },
    #[error("{path}: member ({study_idx}, `{finding_id}`) does not exist")]
    MemberNotFound {
        path: String,
        study_idx: usize,
        finding_id: String,
    },
    #[error("{path}: finding ({study_idx}, `{finding_id}`) belongs to more than one group")]
    FindingInMultipleGroups {
        path: String,
        study_idx: usize,
        finding_id: String,
    },
    #[error("{path}: study {study_idx} appears in more than one episode")]
    OverlappingEpisodes { path: String, study_idx: usize },
    #[error("{path}: study {study_idx} of a member is not covered by any episode")]
    UncoveredMember { path: String, study_idx: usize },
    #[error("{path}: episode references study {study_idx} with no group member")]
    EpisodeStudyNotMember { path: String, study_idx: usize },
    #[error("{path}: episode ordinals must run 1.. in chronological order")]
    BadEpisodeOrdinal { path: String },
    #[error("sequence has no reports")]
    EmptySequence,
}

impl ModelError {
    fn field(path: &str, field: &str) -> Self {
        ModelError::InvalidField {
            path: path.to_string(),
            field: field.to_string(),
        }
    }
}

// Raw records mirror the JSON layout with unvalidated strings.

#[derive(Deserialize)]
struct RawRelation {
    kind: String,
    target_id: String,
}

#[derive(Deserialize)]
struct RawFinding {
    id: String,
    entity_text: String,
    category: String,
    dx_status: Option<String>,
    dx_certainty: Option<String>,
    #[serde(default)]
    attributes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    relations: Vec<RawRelation>,
    sent_idx: i64,
    section: String,
}

#[derive(Deserialize)]
struct RawReport {
    study_id: String,
    study_day: i64,
    findings: Vec<RawFinding>,
    #[serde(default)]
    source_text: Option<BTreeMap<String, String>>,
}

#[derive(Deserialize)]
struct RawMember {
    study_idx: i64,
    finding_id: String,
}

#[derive(Deserialize)]
struct RawEpisode {
    episode_ordinal: i64,
    member_study_idxs: Vec<i64>,
}

#[derive(Deserialize)]
struct RawGroup {
    group_id: String,
    group_name: String,
    members: Vec<RawMember>,
    episodes: Vec<RawEpisode>,
}

#[derive(Deserialize)]
struct RawSequence {
    patient_id: String,
    reports: Vec<Value>,
    #[serde(default)]
    entity_groups: Vec<RawGroup>,
}

fn from_value<T: serde::de::DeserializeOwned>(value: Value, path: &str) -> Result<T, ModelError> {
    serde_json::from_value(value).map_err(|e| ModelError::MalformedJson(format!("{path}: {e}")))
}

fn parse_json(text: &str) -> Result<Value, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::MalformedJson(e.to_string()))
}

/// Parses and validates a single report document.
pub fn parse_report(json_text: &str) -> Result<StructuredReport, ModelError> {
    report_from_value(parse_json(json_text)?, "$")
}

/// Validates an already-decoded JSON value as a report.
pub fn report_from_value(value: Value, path: &str) -> Result<StructuredReport, ModelError> {
    let raw: RawReport = from_value(value, path)?;
    let report = convert_report(raw, path)?;
    validate_report(&report, path)?;
    Ok(report)
}

fn convert_report(raw: RawReport, path: &str) -> Result<StructuredReport, ModelError> {
    let study_day = u32::try_from(raw.study_day).map_err(|_| ModelError::InvalidValue {
        path: path.to_string(),
        field: "study_day".into(),
        value: raw.study_day.to_string(),
    })?;
    let findings = raw
        .findings
        .into_iter()
        .enumerate()
        .map(|(i, f)| convert_finding(f, &format!("{path}.findings[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let source_text = match raw.source_text {
        None => None,
        Some(map) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let section = Section::parse(&k).ok_or_else(|| ModelError::InvalidValue {
                    path: format!("{path}.source_text"),
                    field: "section".into(),
                    value: k.clone(),
                })?;
                out.insert(section, v);
            }
            Some(out)
        }
    };
    Ok(StructuredReport {
        study_id: raw.study_id,
        study_day,
        findings,
        source_text,
    })
}

fn convert_finding(raw: RawFinding, path: &str) -> Result<Finding, ModelError> {
    let category = raw
        .category
        .parse::<EntityCategory>()
        .map_err(|_| ModelError::UnknownCategory {
            path: format!("{path}.category"),
            value: raw.category.clone(),
        })?;
    let dx_status = match raw.dx_status.as_deref() {
        None => {
            return Err(ModelError::MissingDiagnosis {
                path: path.to_string(),
                finding: raw.id,
                field: "dx_status".into(),
            })
        }
        Some(s) => DxStatus::parse(s).ok_or_else(|| ModelError::InvalidValue {
            path: format!("{path}.dx_status"),
            field: "dx_status".into(),
            value: s.to_string(),
        })?,
    };
    let dx_certainty = match raw.dx_certainty.as_deref() {
        None => {
            return Err(ModelError::MissingDiagnosis {
                path: path.to_string(),
                finding: raw.id,
                field: "dx_certainty".into(),
            })
        }
        Some(s) => DxCertainty::parse(s).ok_or_else(|| ModelError::InvalidValue {
            path: format!("{path}.dx_certainty"),
            field: "dx_certainty".into(),
            value: s.to_string(),
        })?,
    };
    let mut attributes = BTreeMap::new();
    for (key, values) in raw.attributes {
        let kind = AttributeKind::from_key(&key).ok_or_else(|| ModelError::UnknownAttributeKind {
            path: format!("{path}.attributes"),
            value: key.clone(),
        })?;
        if kind.is_binary() {
            return Err(ModelError::ReservedAttribute {
                path: format!("{path}.attributes"),
                key,
            });
        }
        if !values.is_empty() {
            attributes.insert(kind, values);
        }
    }
    let relations = raw
        .relations
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let kind = match r.kind.to_ascii_lowercase().as_str() {
                "associate" => RelationKind::Associate,
                "evidence" => RelationKind::Evidence,
                _ => {
                    return Err(ModelError::InvalidValue {
                        path: format!("{path}.relations[{i}].kind"),
                        field: "relation kind".into(),
                        value: r.kind,
                    })
                }
            };
            Ok(Relation {
                kind,
                target_id: r.target_id,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sent_idx = u32::try_from(raw.sent_idx)
        .ok()
        .filter(|&s| s >= 1)
        .ok_or_else(|| ModelError::InvalidValue {
            path: format!("{path}.sent_idx"),
            field: "sent_idx".into(),
            value: raw.sent_idx.to_string(),
        })?;
    let section = Section::parse(&raw.section).ok_or_else(|| ModelError::InvalidValue {
        path: format!("{path}.section"),
        field: "section".into(),
        value: raw.section.clone(),
    })?;
    if raw.id.is_empty() {
        return Err(ModelError::field(path, "id"));
    }
    Ok(Finding {
        id: raw.id,
        entity_text: raw.entity_text,
        category,
        dx_status,
        dx_certainty,
        attributes,
        relations,
        sent_idx,
        section,
    })
}

/// Report-level invariants: unique ids, resolvable relations, and the
/// Evidence-implies-Associate rule.
pub fn validate_report(report: &StructuredReport, path: &str) -> Result<(), ModelError> {
    let mut ids = HashSet::new();
    for (i, f) in report.findings.iter().enumerate() {
        if !ids.insert(f.id.as_str()) {
            return Err(ModelError::DuplicateFindingId {
                path: format!("{path}.findings[{i}]"),
                id: f.id.clone(),
            });
        }
        if f.attributes.keys().any(|k| k.is_binary()) {
            return Err(ModelError::ReservedAttribute {
                path: format!("{path}.findings[{i}].attributes"),
                key: "dx_status/dx_certainty".into(),
            });
        }
    }
    let mut associated: HashSet<(&str, &str)> = HashSet::new();
    for f in &report.findings {
        for r in &f.relations {
            if r.kind == RelationKind::Associate {
                associated.insert((f.id.as_str(), r.target_id.as_str()));
                associated.insert((r.target_id.as_str(), f.id.as_str()));
            }
        }
    }
    for (i, f) in report.findings.iter().enumerate() {
        for (j, r) in f.relations.iter().enumerate() {
            let rpath = format!("{path}.findings[{i}].relations[{j}]");
            if !ids.contains(r.target_id.as_str()) {
                return Err(ModelError::DanglingRelationTarget {
                    path: rpath,
                    finding: f.id.clone(),
                    target: r.target_id.clone(),
                });
            }
            if r.kind == RelationKind::Evidence && !associated.contains(&(f.id.as_str(), r.target_id.as_str())) {
                return Err(ModelError::EvidenceWithoutAssociate {
                    path: rpath,
                    finding: f.id.clone(),
                    target: r.target_id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Parses and validates a patient sequence document.
pub fn parse_sequence(json_text: &str) -> Result<PatientSequence, ModelError> {
    sequence_from_value(parse_json(json_text)?)
}

pub fn sequence_from_value(value: Value) -> Result<PatientSequence, ModelError> {
    let raw: RawSequence = from_value(value, "$")?;
    let mut reports = Vec::with_capacity(raw.reports.len());
    for (i, r) in raw.reports.into_iter().enumerate() {
        let path = format!("$.reports[{i}]");
        let raw_report: RawReport = from_value(r, &path)?;
        let report = convert_report(raw_report, &path)?;
        validate_report(&report, &path)?;
        reports.push(report);
    }
    let mut entity_groups = Vec::with_capacity(raw.entity_groups.len());
    for (gi, g) in raw.entity_groups.into_iter().enumerate() {
        let path = format!("$.entity_groups[{gi}]");
        let members = g
            .members
            .into_iter()
            .enumerate()
            .map(|(mi, m)| {
                let study_idx = usize::try_from(m.study_idx).map_err(|_| ModelError::MemberNotFound {
                    path: format!("{path}.members[{mi}]"),
                    study_idx: usize::MAX,
                    finding_id: m.finding_id.clone(),
                })?;
                Ok(MemberRef::new(study_idx, m.finding_id))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let episodes = g
            .episodes
            .into_iter()
            .map(|e| {
                let ordinal = u32::try_from(e.episode_ordinal)
                    .ok()
                    .filter(|&o| o >= 1)
                    .ok_or_else(|| ModelError::BadEpisodeOrdinal { path: path.clone() })?;
                let idxs = e
                    .member_study_idxs
                    .into_iter()
                    .map(|s| {
                        usize::try_from(s).map_err(|_| ModelError::EpisodeStudyNotMember {
                            path: path.clone(),
                            study_idx: usize::MAX,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TemporalGroup {
                    episode_ordinal: ordinal,
                    member_study_idxs: idxs,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        entity_groups.push(EntityGroup {
            group_id: g.group_id,
            group_name: g.group_name,
            members,
            episodes,
        });
    }
    let seq = PatientSequence {
        patient_id: raw.patient_id,
        reports,
        entity_groups,
    };
    validate_sequence_structure(&seq)?;
    Ok(seq)
}

fn validate_sequence_structure(seq: &PatientSequence) -> Result<(), ModelError> {
    if seq.reports.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let first = seq.reports[0].study_day;
    if first != 0 {
        return Err(ModelError::FirstStudyNotDayZero {
            path: "$.reports[0]".into(),
            day: i64::from(first),
        });
    }
    let mut study_ids = HashSet::new();
    for (i, r) in seq.reports.iter().enumerate() {
        if !study_ids.insert(r.study_id.as_str()) {
            return Err(ModelError::DuplicateStudyId {
                path: format!("$.reports[{i}]"),
                id: r.study_id.clone(),
            });
        }
        if i > 0 && r.study_day <= seq.reports[i - 1].study_day {
            return Err(ModelError::UnorderedStudies {
                path: format!("$.reports[{i}]"),
                day: i64::from(r.study_day),
                previous: i64::from(seq.reports[i - 1].study_day),
            });
        }
    }

    let mut seen: HashSet<&MemberRef> = HashSet::new();
    for (gi, g) in seq.entity_groups.iter().enumerate() {
        let path = format!("$.entity_groups[{gi}]");
        let mut member_studies = BTreeSet::new();
        for (mi, m) in g.members.iter().enumerate() {
            let exists = seq
                .reports
                .get(m.study_idx)
                .is_some_and(|r| r.finding(&m.finding_id).is_some());
            if !exists {
                return Err(ModelError::MemberNotFound {
                    path: format!("{path}.members[{mi}]"),
                    study_idx: m.study_idx,
                    finding_id: m.finding_id.clone(),
                });
            }
            if !seen.insert(m) {
                return Err(ModelError::FindingInMultipleGroups {
                    path: format!("{path}.members[{mi}]"),
                    study_idx: m.study_idx,
                    finding_id: m.finding_id.clone(),
                });
            }
            member_studies.insert(m.study_idx);
        }

        let mut covered = BTreeSet::new();
        for e in &g.episodes {
            for &s in &e.member_study_idxs {
                if !member_studies.contains(&s) {
                    return Err(ModelError::EpisodeStudyNotMember {
                        path: path.clone(),
                        study_idx: s,
                    });
                }
                if !covered.insert(s) {
                    return Err(ModelError::OverlappingEpisodes {
                        path: path.clone(),
                        study_idx: s,
                    });
                }
            }
        }
        if let Some(&s) = member_studies.difference(&covered).next() {
            return Err(ModelError::UncoveredMember {
                path: path.clone(),
                study_idx: s,
            });
        }

        // Ordinals 1..=n, increasing with the earliest study of each episode.
        let mut by_start: Vec<(usize, u32)> = g
            .episodes
            .iter()
            .map(|e| {
                let start = e.member_study_idxs.iter().copied().min().unwrap_or(usize::MAX);
                (start, e.episode_ordinal)
            })
            .collect();
        by_start.sort_unstable();
        let ordered = by_start
            .iter()
            .enumerate()
            .all(|(i, &(start, ordinal))| start != usize::MAX && ordinal as usize == i + 1);
        if !ordered {
            return Err(ModelError::BadEpisodeOrdinal { path });
        }
    }
    Ok(())
}

/// Serializes a report to its canonical JSON text.
pub fn report_to_json(report: &StructuredReport) -> String {
    serde_json::to_string(report).expect("report serialization is infallible")
}

pub fn sequence_to_json(seq: &PatientSequence) -> String {
    serde_json::to_string(seq).expect("sequence serialization is infallible")
}

/// Parses a corpus entry that is either a sequence or a bare report.
///
/// A bare report becomes a one-study sequence whose patient id is the
/// study id.
pub fn parse_corpus_entry(json_text: &str) -> Result<PatientSequence, ModelError> {
    let value = parse_json(json_text)?;
    if value.get("reports").is_some() {
        sequence_from_value(value)
    } else {
        let report = report_from_value(value, "$")?;
        let seq = PatientSequence::from_report(report);
        validate_sequence_structure(&seq)?;
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Any invalid entry fails the whole load.
    #[default]
    Strict,
    /// Invalid entries are skipped and reported.
    Lenient,
}

/// Validation failure of one corpus entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryError {
    pub source: PathBuf,
    /// 1-based line number for JSON-Lines files, `None` for per-file entries.
    pub line: Option<usize>,
    pub error: ModelError,
}

impl fmt::Display for EntryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source.display(), line, self.error),
            None => write!(f, "{}: {}", self.source.display(), self.error),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid entr{}; first: {}", .0.len(), if .0.len() == 1 { "y" } else { "ies" }, .0[0])]
    Invalid(Vec<EntryError>),
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sequences: Vec<PatientSequence>,
    /// Entries skipped in lenient mode.
    pub skipped: Vec<EntryError>,
}

/// Loads a JSON-Lines file or a directory of per-patient `.json` files.
///
/// Blank lines are ignored. Directory entries are read in file-name order.
pub fn load_corpus(path: &Path, strictness: Strictness) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut entries: Vec<(PathBuf, Option<usize>, Result<PatientSequence, ModelError>)> = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
                path: file.clone(),
                source,
            })?;
            let parsed = parse_corpus_entry(&text);
            entries.push((file, None, parsed));
        }
    } else {
        let text = fs::read_to_string(path).map_err(io_err)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push((path.to_path_buf(), Some(i + 1), parse_corpus_entry(line)));
        }
    }

    let mut corpus = Corpus::default();
    for (source, line, parsed) in entries {
        match parsed {
            Ok(seq) => corpus.sequences.push(seq),
            Err(error) => corpus.skipped.push(EntryError { source, line, error }),
        }
    }
    if strictness == Strictness::Strict && !corpus.skipped.is_empty() {
        return Err(CorpusError::Invalid(corpus.skipped));
    }
    Ok(corpus)
}
