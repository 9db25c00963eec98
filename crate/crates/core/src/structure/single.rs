//! Stage one: one report at a time.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    extract_json, report_text, run_with_repairs, CompletionProvider, FewShotIndex, RepairOptions, ReportInput,
    StructureError, Structured, ValidationIssue,
};
use crate::model::{report_from_value, AttributeKind, RelationKind, Section, StructuredReport};
use crate::vocab::{candidates, match_sentence, PeriodSplitter, SentenceSplitter, Vocabulary};

pub const SINGLE_TEMPLATE: &str = include_str!("../../prompts/single_structuring.txt");

/// One sentence with its vocabulary candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRequest {
    pub section: Section,
    pub sent_idx: usize,
    pub sentence: String,
    pub candidates: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuringRequest {
    pub report_sections: Vec<SectionRequest>,
}

/// Splits every section into sentences (numbered from 1 per section) and
/// attaches vocabulary candidates.
pub fn build_request(sections: &BTreeMap<Section, String>, vocab: &Vocabulary) -> StructuringRequest {
    let mut report_sections = Vec::new();
    for (&section, text) in sections {
        for (i, sentence) in PeriodSplitter.split(text).into_iter().enumerate() {
            let matches = match_sentence(vocab, sentence, i + 1);
            report_sections.push(SectionRequest {
                section,
                sent_idx: i + 1,
                sentence: sentence.to_string(),
                candidates: candidates(&matches),
            });
        }
    }
    StructuringRequest { report_sections }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptOptions {
    pub k_shots: usize,
    /// Budget in whitespace tokens for all examples together. Examples are
    /// added best first until the next one would not fit.
    pub max_example_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinglePrompt {
    pub system: String,
    pub user: String,
    /// Index positions of the examples included, best first.
    pub shots: Vec<usize>,
}

/// System prompt and JSON user payload for one report.
///
/// Retrieved examples go under `"examples"` as
/// `{"related_example": <request>, "structured_report": <relation list>}`.
pub fn build_single_prompt(
    input: &ReportInput,
    vocab: &Vocabulary,
    index: &FewShotIndex,
    opts: &PromptOptions,
) -> Result<SinglePrompt, StructureError> {
    let text = report_text(&input.sections);
    if text.is_empty() {
        return Err(StructureError::EmptyReport {
            study_id: input.study_id.clone(),
        });
    }
    let request = build_request(&input.sections, vocab);
    let mut examples = Vec::new();
    let mut shots = Vec::new();
    let mut used_tokens = 0;
    for i in index.retrieve(&text, opts.k_shots) {
        let ex = &index.examples()[i];
        let sections = ex
            .report
            .source_text
            .clone()
            .unwrap_or_else(|| BTreeMap::from([(Section::Findings, ex.text.clone())]));
        let pair = json!({
            "related_example": build_request(&sections, vocab),
            "structured_report": report_to_relation_list(&ex.report),
        });
        if let Some(budget) = opts.max_example_tokens {
            let cost = pair.to_string().split_whitespace().count();
            if used_tokens + cost > budget {
                break;
            }
            used_tokens += cost;
        }
        examples.push(pair);
        shots.push(i);
    }
    let mut payload = serde_json::to_value(&request).expect("request serializes");
    if !examples.is_empty() {
        payload["examples"] = Value::Array(examples);
    }
    Ok(SinglePrompt {
        system: SINGLE_TEMPLATE.to_string(),
        user: serde_json::to_string_pretty(&payload).expect("payload serializes"),
        shots,
    })
}

/// A mentioned span. Subjects of at least one relation become findings;
/// the rest are attribute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub ent_idx: u32,
    pub text: String,
    pub sent_idx: u32,
    #[serde(default = "default_section")]
    pub section: Section,
}

fn default_section() -> Section {
    Section::Findings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub subject_ent: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_cat: Option<String>,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_ent_idx: Option<u32>,
    /// Literal value when there is no object entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_idx: Option<u32>,
}

/// The provider's output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationList {
    pub entities: Vec<EntityRecord>,
    pub relations: Vec<RelationRecord>,
}

enum RelationTarget {
    Category,
    Status,
    Certainty,
    Link(RelationKind),
    Attribute(AttributeKind),
}

fn relation_target(name: &str) -> Option<RelationTarget> {
    let key: String = name
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .collect::<String>()
        .to_ascii_lowercase();
    Some(match key.as_str() {
        "cat" | "category" => RelationTarget::Category,
        "status" | "dxstatus" => RelationTarget::Status,
        "certainty" | "dxcertainty" => RelationTarget::Certainty,
        "associate" => RelationTarget::Link(RelationKind::Associate),
        "evidence" => RelationTarget::Link(RelationKind::Evidence),
        _ => {
            let kind = AttributeKind::ALL
                .into_iter()
                .find(|k| !k.is_binary() && k.key().replace('_', "") == key)?;
            RelationTarget::Attribute(kind)
        }
    })
}

fn relation_name(kind: AttributeKind) -> &'static str {
    match kind {
        AttributeKind::DxStatus => "Status",
        AttributeKind::DxCertainty => "Dx_Certainty",
        AttributeKind::Location => "Location",
        AttributeKind::Severity => "Severity",
        AttributeKind::Onset => "Onset",
        AttributeKind::Improved => "Improved",
        AttributeKind::Worsened => "Worsened",
        AttributeKind::Placement => "Placement",
        AttributeKind::NoChange => "No Change",
        AttributeKind::Morphology => "Morphology",
        AttributeKind::Distribution => "Distribution",
        AttributeKind::Measurement => "Measurement",
        AttributeKind::Comparison => "Comparison",
        AttributeKind::PastHx => "Past Hx",
        AttributeKind::OtherSource => "Other Source",
        AttributeKind::AssessmentLimitations => "Assessment Limitations",
    }
}

fn set_once(slot: &mut Option<String>, value: String, what: &str, subject: u32) -> Result<(), ValidationIssue> {
    match slot {
        Some(old) if !old.eq_ignore_ascii_case(&value) => Err(ValidationIssue::Conversion(format!(
            "entity {subject} has conflicting {what} `{old}` and `{value}`"
        ))),
        _ => {
            *slot = Some(value);
            Ok(())
        }
    }
}

#[derive(Default)]
struct Draft {
    category: Option<String>,
    status: Option<String>,
    certainty: Option<String>,
    attributes: BTreeMap<AttributeKind, Vec<String>>,
    relations: Vec<Value>,
}

/// Converts a relation list into a validated report.
///
/// Each subject entity becomes finding `f<ent_idx>`, in ascending index
/// order. `Cat`/`subject_cat`, `Status` and `Dx_Certainty` fill the
/// finding's category and diagnosis fields; `Associate` and `Evidence`
/// become links to the object's finding; every other relation appends the
/// object's text (or `value`) to the attribute of the same name.
pub fn relation_list_to_report(
    list: &RelationList,
    study_id: &str,
    study_day: u32,
) -> Result<StructuredReport, ValidationIssue> {
    let entities: HashMap<u32, &EntityRecord> = list.entities.iter().map(|e| (e.ent_idx, e)).collect();
    if entities.len() != list.entities.len() {
        return Err(ValidationIssue::Conversion("duplicate ent_idx".into()));
    }
    let mut drafts: BTreeMap<u32, Draft> = BTreeMap::new();
    for (i, r) in list.relations.iter().enumerate() {
        if !entities.contains_key(&r.subject_ent) {
            return Err(ValidationIssue::Conversion(format!(
                "relation {i}: unknown subject_ent {}",
                r.subject_ent
            )));
        }
        let object_text = match r.obj_ent_idx {
            Some(o) => Some(
                entities
                    .get(&o)
                    .map(|e| e.text.clone())
                    .ok_or_else(|| ValidationIssue::Conversion(format!("relation {i}: unknown obj_ent_idx {o}")))?,
            ),
            None => r.value.clone(),
        };
        let draft = drafts.entry(r.subject_ent).or_default();
        if let Some(cat) = &r.subject_cat {
            set_once(&mut draft.category, cat.clone(), "categories", r.subject_ent)?;
        }
        let target = relation_target(&r.relation)
            .ok_or_else(|| ValidationIssue::Conversion(format!("relation {i}: unknown relation `{}`", r.relation)))?;
        let need_value = || {
            object_text.clone().ok_or_else(|| {
                ValidationIssue::Conversion(format!("relation {i} (`{}`) has no object or value", r.relation))
            })
        };
        match target {
            RelationTarget::Category => set_once(&mut draft.category, need_value()?, "categories", r.subject_ent)?,
            RelationTarget::Status => set_once(
                &mut draft.status,
                need_value()?.to_ascii_lowercase(),
                "statuses",
                r.subject_ent,
            )?,
            RelationTarget::Certainty => set_once(
                &mut draft.certainty,
                need_value()?.to_ascii_lowercase(),
                "certainties",
                r.subject_ent,
            )?,
            RelationTarget::Link(kind) => {
                let obj = r.obj_ent_idx.ok_or_else(|| {
                    ValidationIssue::Conversion(format!("relation {i}: `{}` needs obj_ent_idx", r.relation))
                })?;
                let kind = match kind {
                    RelationKind::Associate => "associate",
                    RelationKind::Evidence => "evidence",
                };
                draft
                    .relations
                    .push(json!({"kind": kind, "target_id": format!("f{obj}")}));
            }
            RelationTarget::Attribute(kind) => draft.attributes.entry(kind).or_default().push(need_value()?),
        }
    }

    let findings: Vec<Value> = drafts
        .into_iter()
        .map(|(idx, d)| {
            let e = entities[&idx];
            let mut f = Map::new();
            f.insert("id".into(), json!(format!("f{idx}")));
            f.insert("entity_text".into(), json!(e.text));
            f.insert("category".into(), json!(d.category.unwrap_or_default()));
            if let Some(s) = d.status {
                f.insert("dx_status".into(), json!(s));
            }
            if let Some(c) = d.certainty {
                f.insert("dx_certainty".into(), json!(c));
            }
            let attrs: Map<String, Value> = d
                .attributes
                .into_iter()
                .map(|(k, v)| (k.key().to_string(), json!(v)))
                .collect();
            f.insert("attributes".into(), Value::Object(attrs));
            f.insert("relations".into(), Value::Array(d.relations));
            f.insert("sent_idx".into(), json!(e.sent_idx));
            f.insert("section".into(), json!(e.section));
            Value::Object(f)
        })
        .collect();
    let doc = json!({"study_id": study_id, "study_day": study_day, "findings": findings});
    Ok(report_from_value(doc, "$")?)
}

/// Inverse of [`relation_list_to_report`] for reports whose finding ids are
/// `f1..fn` in order. Findings take entity indices `1..=n`; attribute
/// values follow.
pub fn report_to_relation_list(report: &StructuredReport) -> RelationList {
    let idx_of: HashMap<&str, u32> = report
        .findings
        .iter()
        .enumerate()
        .map(|(i, f)| (f.id.as_str(), i as u32 + 1))
        .collect();
    let mut entities: Vec<EntityRecord> = report
        .findings
        .iter()
        .enumerate()
        .map(|(i, f)| EntityRecord {
            ent_idx: i as u32 + 1,
            text: f.entity_text.clone(),
            sent_idx: f.sent_idx,
            section: f.section,
        })
        .collect();
    let mut relations = Vec::new();
    let mut next = report.findings.len() as u32 + 1;
    for (i, f) in report.findings.iter().enumerate() {
        let subject = i as u32 + 1;
        let cat = Some(f.category.as_str().to_ascii_uppercase());
        let literal = |relation: &str, value: String| RelationRecord {
            subject_ent: subject,
            subject_cat: cat.clone(),
            relation: relation.to_string(),
            obj_ent_idx: None,
            value: Some(value),
            sent_idx: Some(f.sent_idx),
        };
        let status = serde_json::to_value(f.dx_status).expect("status serializes");
        let certainty = serde_json::to_value(f.dx_certainty).expect("certainty serializes");
        relations.push(literal("Status", status.as_str().unwrap_or_default().to_string()));
        relations.push(literal(
            "Dx_Certainty",
            certainty.as_str().unwrap_or_default().to_string(),
        ));
        for (kind, values) in &f.attributes {
            for v in values {
                entities.push(EntityRecord {
                    ent_idx: next,
                    text: v.clone(),
                    sent_idx: f.sent_idx,
                    section: f.section,
                });
                relations.push(RelationRecord {
                    subject_ent: subject,
                    subject_cat: cat.clone(),
                    relation: relation_name(*kind).to_string(),
                    obj_ent_idx: Some(next),
                    value: None,
                    sent_idx: Some(f.sent_idx),
                });
                next += 1;
            }
        }
        for r in &f.relations {
            relations.push(RelationRecord {
                subject_ent: subject,
                subject_cat: cat.clone(),
                relation: match r.kind {
                    RelationKind::Associate => "Associate",
                    RelationKind::Evidence => "Evidence",
                }
                .to_string(),
                obj_ent_idx: idx_of.get(r.target_id.as_str()).copied(),
                value: None,
                sent_idx: Some(f.sent_idx),
            });
        }
    }
    RelationList { entities, relations }
}

/// Parses one provider response for `input`.
///
/// A JSON object with a `"findings"` key is read as a report document
/// directly; anything else must be a [`RelationList`].
pub fn parse_single_output(raw: &str, input: &ReportInput) -> Result<StructuredReport, ValidationIssue> {
    let mut value = extract_json(raw)?;
    let mut report = match value.get("findings") {
        Some(_) => {
            let obj = value.as_object_mut().expect("object with findings");
            obj.entry("study_id").or_insert_with(|| json!(input.study_id));
            obj.entry("study_day").or_insert_with(|| json!(input.study_day));
            obj.remove("source_text");
            report_from_value(value, "$")?
        }
        None => {
            let list: RelationList =
                serde_json::from_value(value).map_err(|e| ValidationIssue::Conversion(e.to_string()))?;
            relation_list_to_report(&list, &input.study_id, input.study_day)?
        }
    };
    report.study_id = input.study_id.clone();
    report.study_day = input.study_day;
    report.source_text = Some(input.sections.clone());
    Ok(report)
}

/// Structures one report, repairing invalid output up to
/// `opts.max_repairs` times.
pub fn structure_single(
    provider: &dyn CompletionProvider,
    prompt: &SinglePrompt,
    input: &ReportInput,
    opts: &RepairOptions,
) -> Result<Structured<StructuredReport>, StructureError> {
    run_with_repairs(provider, &prompt.system, &prompt.user, opts, |raw| {
        parse_single_output(raw, input)
    })
}
