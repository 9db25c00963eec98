//! Free text to structured, grouped findings through a completion provider.
//!
//! The provider here is a small rule-based stand-in that reads the
//! vocabulary candidates in the request. Its first answer is prose, which
//! the repair loop rejects and re-prompts. Swap in `HttpCompletionProvider`
//! to use a real model.
//!
//! cargo run --example structuring_pipeline

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use lunguage::model::Section;
use lunguage::structure::{
    CompletionProvider, DecodingParams, EntityRecord, FewShotIndex, Pipeline, PromptOptions, RelationList,
    RelationRecord, RepairOptions, ReportInput, StructureError, StructuringRequest, SEQUENTIAL_TEMPLATE,
};
use lunguage::vocab::parse_vocabulary_json;
use serde_json::{json, Value};

struct RuleProvider {
    misbehaved: AtomicBool,
}

impl RuleProvider {
    fn structure(&self, user: &str) -> String {
        let payload: Value = serde_json::from_str(user.split("\n\n").next().unwrap()).unwrap();
        let request: StructuringRequest = serde_json::from_value(payload).unwrap();
        let mut list = RelationList {
            entities: vec![],
            relations: vec![],
        };
        for s in &request.report_sections {
            let mut subject = None;
            for (text, cats) in &s.candidates {
                let idx = list.entities.len() as u32 + 1;
                list.entities.push(EntityRecord {
                    ent_idx: idx,
                    text: text.clone(),
                    sent_idx: s.sent_idx as u32,
                    section: s.section,
                });
                let is_finding = cats.iter().any(|c| c == "PF");
                if is_finding {
                    subject = Some(idx);
                }
                let rel = |relation: &str, obj: Option<u32>, value: Option<&str>| RelationRecord {
                    subject_ent: subject.unwrap_or(idx),
                    subject_cat: None,
                    relation: relation.into(),
                    obj_ent_idx: obj,
                    value: value.map(String::from),
                    sent_idx: Some(s.sent_idx as u32),
                };
                if is_finding {
                    let negated = s.sentence.starts_with("No ");
                    list.relations.push(rel("Cat", None, Some("PF")));
                    list.relations
                        .push(rel("Status", None, Some(if negated { "negative" } else { "positive" })));
                    list.relations.push(rel("Dx_Certainty", None, Some("definitive")));
                } else if let (Some(_), Some(cat)) = (subject, cats.first()) {
                    // attribute of the sentence's last finding
                    list.relations.push(rel(cat, Some(idx), None));
                }
            }
        }
        serde_json::to_string(&list).unwrap()
    }

    /// Groups findings that share their first word, as one episode.
    fn group(&self, user: &str) -> String {
        let payload: Value = serde_json::from_str(user).unwrap();
        let mut groups: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for f in payload["findings"].as_array().unwrap() {
            let head = f["finding"].as_str().unwrap().split(' ').next().unwrap().to_string();
            groups.entry(head).or_default().push(f.clone());
        }
        let results: Vec<Value> = groups
            .into_iter()
            .map(|(name, findings)| json!({"group_name": name, "findings": findings}))
            .collect();
        json!({ "results": results }).to_string()
    }
}

impl CompletionProvider for RuleProvider {
    fn name(&self) -> &str {
        "rules"
    }

    fn complete(&self, system: &str, user: &str, _: &DecodingParams) -> Result<String, StructureError> {
        if system == SEQUENTIAL_TEMPLATE {
            return Ok(self.group(user));
        }
        if !self.misbehaved.swap(true, Ordering::SeqCst) {
            return Ok("Here is the structured report you asked for.".into());
        }
        Ok(self.structure(user))
    }
}

fn main() {
    let vocab = parse_vocabulary_json(
        r#"{"pleural effusion": ["PF"], "pneumothorax": ["PF"], "left": ["Location"],
            "small": ["Severity"], "moderate": ["Severity"]}"#,
    )
    .unwrap();
    let input = |id: &str, day, text: &str| ReportInput {
        patient_id: Some("p1".into()),
        study_id: id.into(),
        study_day: day,
        sections: BTreeMap::from([(Section::Findings, text.to_string())]),
    };
    let inputs = [
        input(
            "s0",
            0,
            "There is a moderate left pleural effusion on the frontal view. No pneumothorax is seen.",
        ),
        input(
            "s1",
            2,
            "The small left pleural effusion has decreased. No pneumothorax is seen.",
        ),
    ];
    let provider = RuleProvider {
        misbehaved: AtomicBool::new(false),
    };
    let index = FewShotIndex::default();
    let pipeline = Pipeline {
        provider: &provider,
        vocab: &vocab,
        index: &index,
        prompt: PromptOptions::default(),
        repair: RepairOptions::default(),
    };
    let run = pipeline.structure_patient("p1", &inputs).unwrap();
    println!("repairs needed: {}", run.repairs);
    for r in &run.sequence.reports {
        for f in &r.findings {
            let attrs: Vec<String> = f
                .attributes
                .iter()
                .map(|(k, v)| format!("{k}={}", v.join("|")))
                .collect();
            println!(
                "day {:>2} {} {:?} {:?} {}",
                r.study_day,
                f.entity_text,
                f.dx_status,
                f.category,
                attrs.join(" ")
            );
        }
    }
    for g in &run.sequence.entity_groups {
        println!("group {} '{}': {} members", g.group_id, g.group_name, g.members.len());
    }
}
