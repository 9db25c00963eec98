use std::collections::HashMap;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{
    build_single_prompt, grouping_lines, grouping_payload, prompt_hash, report_to_relation_list, structure_sequence,
    structure_single, CompletionProvider, FewShotIndex, PromptOptions, RepairOptions, ReportInput, StructureError,
    Transcript, SEQUENTIAL_TEMPLATE,
};
use crate::model::{MemberRef, PatientSequence};
use crate::vocab::Vocabulary;

/// Everything needed to structure reports end to end.
pub struct Pipeline<'a> {
    pub provider: &'a dyn CompletionProvider,
    pub vocab: &'a Vocabulary,
    pub index: &'a FewShotIndex,
    pub prompt: PromptOptions,
    pub repair: RepairOptions,
}

/// A structured patient with every exchange that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRun {
    pub sequence: PatientSequence,
    pub repairs: u32,
    pub transcripts: Vec<Transcript>,
}

impl Pipeline<'_> {
    /// Structures each report independently, in parallel, keeping input
    /// order.
    pub fn structure_reports(&self, inputs: &[ReportInput]) -> Result<PatientRun, StructureError> {
        let results = inputs
            .par_iter()
            .map(|input| {
                let prompt = build_single_prompt(input, self.vocab, self.index, &self.prompt)?;
                structure_single(self.provider, &prompt, input, &self.repair)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut run = PatientRun {
            sequence: PatientSequence {
                patient_id: String::new(),
                reports: Vec::with_capacity(results.len()),
                entity_groups: Vec::new(),
            },
            repairs: 0,
            transcripts: Vec::new(),
        };
        for r in results {
            run.repairs += r.repairs;
            run.transcripts.push(r.transcript);
            run.sequence.reports.push(r.value);
        }
        Ok(run)
    }

    /// Structures one patient's reports, sorted by day, then groups their
    /// findings.
    pub fn structure_patient(&self, patient_id: &str, inputs: &[ReportInput]) -> Result<PatientRun, StructureError> {
        let mut sorted = inputs.to_vec();
        sorted.sort_by_key(|r| r.study_day);
        let mut run = self.structure_reports(&sorted)?;
        run.sequence.patient_id = patient_id.to_string();
        run.sequence
            .validate()
            .map_err(|e| StructureError::InvalidInput(format!("patient `{patient_id}`: {e}")))?;
        let grouped = structure_sequence(self.provider, &run.sequence, &self.repair)?;
        run.repairs += grouped.repairs;
        if !grouped.transcript.turns.is_empty() {
            run.transcripts.push(grouped.transcript);
        }
        run.sequence = grouped.value;
        Ok(run)
    }

    /// Replay table under which [`Pipeline::structure_patient`] reproduces
    /// each annotated sequence. Reports need `source_text`; finding ids
    /// must be `f1..fn` in order so relation lists convert back unchanged.
    pub fn reference_transcript(&self, golds: &[PatientSequence]) -> Result<HashMap<String, String>, StructureError> {
        let mut table = HashMap::new();
        for gold in golds {
            for input in reference_inputs(gold)? {
                let prompt = build_single_prompt(&input, self.vocab, self.index, &self.prompt)?;
                let report = gold
                    .reports
                    .iter()
                    .find(|r| r.study_id == input.study_id)
                    .expect("input built from this report");
                let answer = serde_json::to_string(&report_to_relation_list(report)).expect("relation list");
                table.insert(prompt_hash(&prompt.system, &prompt.user), answer);
            }
            if gold.finding_count() > 0 {
                let mut ungrouped = gold.clone();
                ungrouped.entity_groups.clear();
                table.insert(
                    prompt_hash(SEQUENTIAL_TEMPLATE, &grouping_payload(&ungrouped)),
                    reference_grouping(gold),
                );
            }
        }
        Ok(table)
    }
}

/// Raw inputs recovered from a sequence's `source_text`.
pub fn reference_inputs(seq: &PatientSequence) -> Result<Vec<ReportInput>, StructureError> {
    seq.reports
        .iter()
        .map(|r| {
            let sections = r
                .source_text
                .clone()
                .ok_or_else(|| StructureError::InvalidInput(format!("report `{}` has no source_text", r.study_id)))?;
            Ok(ReportInput {
                patient_id: Some(seq.patient_id.clone()),
                study_id: r.study_id.clone(),
                study_day: r.study_day,
                sections,
            })
        })
        .collect()
}

/// Grouping output, in the template's format, that yields `seq`'s groups.
pub fn reference_grouping(seq: &PatientSequence) -> String {
    let lines = grouping_lines(seq);
    let idx: HashMap<MemberRef, &super::GroupingLine> = lines
        .iter()
        .map(|l| (MemberRef::new(l.study_idx, l.finding_id.clone()), l))
        .collect();
    let results: Vec<Value> = seq
        .entity_groups
        .iter()
        .map(|g| {
            let findings: Vec<Value> = g
                .members
                .iter()
                .map(|m| {
                    let l = idx[m];
                    json!({"IDX": l.idx, "DAY": l.day, "finding": l.phrase})
                })
                .collect();
            let episodes: Vec<Value> = g
                .episodes
                .iter()
                .map(|e| {
                    let days: Vec<u32> = e.member_study_idxs.iter().map(|&t| seq.reports[t].study_day).collect();
                    json!({ format!("episode_{}", e.episode_ordinal): {"days": days} })
                })
                .collect();
            json!({"group_name": g.group_name, "findings": findings, "episodes": episodes})
        })
        .collect();
    json!({ "results": results }).to_string()
}
