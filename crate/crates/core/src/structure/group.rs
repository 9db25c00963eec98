//! Stage two: grouping findings across a patient's studies.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    extract_json, run_with_repairs, CompletionProvider, RepairOptions, StructureError, Structured, ValidationIssue,
};
use crate::model::{EntityGroup, MemberRef, PatientSequence, TemporalGroup};
use crate::score::linearize_single;

pub const SEQUENTIAL_TEMPLATE: &str = include_str!("../../prompts/sequential_grouping.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupingError {
    #[error("finding IDX {idx} (`{finding}`) is in no group")]
    UncoveredFinding { idx: usize, finding: String },
    #[error("finding IDX {idx} appears more than once")]
    DuplicatedFinding { idx: usize },
    #[error("group `{group}`: cannot resolve finding reference {reference}")]
    UnknownFinding { group: String, reference: String },
    #[error("group `{group}` has no findings")]
    EmptyGroup { group: String },
    #[error("group `{group}`: episode day {day} has no finding of the group")]
    EpisodeDayNotInGroup { group: String, day: i64 },
    #[error("group `{group}`: day {day} is in more than one episode")]
    DayInTwoEpisodes { group: String, day: u32 },
    #[error("group `{group}`: day {day} is in no episode")]
    DayWithoutEpisode { group: String, day: u32 },
    #[error("group `{group}`: malformed episodes: {message}")]
    MalformedEpisodes { group: String, message: String },
}

/// One finding in the grouping input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingLine {
    /// Position in the linearization, from 0.
    pub idx: usize,
    pub study_idx: usize,
    pub finding_id: String,
    pub day: u32,
    pub phrase: String,
}

/// Every finding in chronological order, then report order.
pub fn grouping_lines(seq: &PatientSequence) -> Vec<GroupingLine> {
    seq.reports
        .iter()
        .enumerate()
        .flat_map(|(t, r)| r.findings.iter().map(move |f| (t, r.study_day, f)))
        .enumerate()
        .map(|(idx, (study_idx, day, f))| GroupingLine {
            idx,
            study_idx,
            finding_id: f.id.clone(),
            day,
            phrase: linearize_single(f),
        })
        .collect()
}

/// `day <d>: <phrase>` lines; line `i` is finding IDX `i`.
pub fn linearize_sequence_for_grouping(seq: &PatientSequence) -> String {
    grouping_lines(seq)
        .iter()
        .map(|l| format!("day {}: {}", l.day, l.phrase))
        .collect::<Vec<_>>()
        .join("\n")
}

/// User payload: the linearization as `{"findings": [{IDX, DAY, finding}]}`,
/// the same shape the template asks for in its output.
pub fn grouping_payload(seq: &PatientSequence) -> String {
    let findings: Vec<Value> = grouping_lines(seq)
        .iter()
        .map(|l| json!({"IDX": l.idx, "DAY": l.day, "finding": l.phrase}))
        .collect();
    serde_json::to_string_pretty(&json!({ "findings": findings })).expect("payload serializes")
}

#[derive(Deserialize)]
struct RawOutput {
    results: Vec<RawGroup>,
}

#[derive(Deserialize)]
struct RawGroup {
    group_name: String,
    findings: Vec<RawRef>,
    #[serde(default)]
    episodes: Value,
}

#[derive(Deserialize)]
struct RawRef {
    #[serde(rename = "IDX", default)]
    idx: Option<i64>,
    #[serde(rename = "DAY", default)]
    day: Option<i64>,
    #[serde(default)]
    finding: Option<String>,
}

#[derive(Deserialize)]
struct RawEpisode {
    days: Vec<i64>,
}

/// `episode_n` entries, either as a list of one-key objects or one object.
fn episode_days(group: &str, episodes: &Value) -> Result<Vec<(String, Vec<i64>)>, GroupingError> {
    let malformed = |message: String| GroupingError::MalformedEpisodes {
        group: group.to_string(),
        message,
    };
    let mut entries: Vec<(String, Value)> = Vec::new();
    match episodes {
        Value::Null => {}
        Value::Object(map) => entries.extend(map.iter().map(|(k, v)| (k.clone(), v.clone()))),
        Value::Array(items) => {
            for item in items {
                let map = item
                    .as_object()
                    .ok_or_else(|| malformed("episode entries must be objects".into()))?;
                entries.extend(map.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        }
        _ => return Err(malformed("expected a list or object".into())),
    }
    entries
        .into_iter()
        .map(|(k, v)| {
            let e: RawEpisode = serde_json::from_value(v).map_err(|e| malformed(format!("{k}: {e}")))?;
            Ok((k, e.days))
        })
        .collect()
}

fn resolve(r: &RawRef, group: &str, lines: &[GroupingLine], used: &BTreeSet<usize>) -> Result<usize, GroupingError> {
    if let Some(i) = r.idx.and_then(|i| usize::try_from(i).ok()).filter(|&i| i < lines.len()) {
        return Ok(i);
    }
    // fall back on (DAY, text) when IDX is missing or out of range
    let by_text = match (r.day, r.finding.as_deref()) {
        (Some(day), Some(text)) => {
            let matching: Vec<usize> = lines
                .iter()
                .filter(|l| i64::from(l.day) == day && l.phrase == text)
                .map(|l| l.idx)
                .collect();
            matching
                .iter()
                .copied()
                .find(|i| !used.contains(i))
                .or(matching.first().copied())
        }
        _ => None,
    };
    by_text.ok_or_else(|| GroupingError::UnknownFinding {
        group: group.to_string(),
        reference: format!("IDX={:?} DAY={:?} finding={:?}", r.idx, r.day, r.finding),
    })
}

/// Parses grouping output into entity groups over `seq`'s findings.
///
/// Groups get ids `g1, g2, ...` in output order. Episodes are renumbered
/// from 1 in chronological order; a group without episodes forms a single
/// episode.
pub fn parse_grouping(raw: &str, seq: &PatientSequence) -> Result<Vec<EntityGroup>, ValidationIssue> {
    let lines = grouping_lines(seq);
    let out: RawOutput =
        serde_json::from_value(extract_json(raw)?).map_err(|e| ValidationIssue::Conversion(e.to_string()))?;
    let day_to_study: BTreeMap<u32, usize> = seq.reports.iter().enumerate().map(|(t, r)| (r.study_day, t)).collect();

    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut groups = Vec::new();
    for (g, raw_group) in out.results.iter().enumerate() {
        let name = &raw_group.group_name;
        if raw_group.findings.is_empty() {
            return Err(GroupingError::EmptyGroup { group: name.clone() }.into());
        }
        let mut members = Vec::new();
        for r in &raw_group.findings {
            let i = resolve(r, name, &lines, &used)?;
            if !used.insert(i) {
                return Err(GroupingError::DuplicatedFinding { idx: i }.into());
            }
            members.push(MemberRef::new(lines[i].study_idx, lines[i].finding_id.clone()));
        }
        members.sort();
        let member_days: BTreeSet<u32> = members.iter().map(|m| seq.reports[m.study_idx].study_day).collect();

        let raw_episodes = episode_days(name, &raw_group.episodes)?;
        let mut episodes: Vec<Vec<usize>> = Vec::new();
        let mut seen_days: BTreeSet<u32> = BTreeSet::new();
        if raw_episodes.is_empty() {
            episodes.push(member_days.iter().map(|d| day_to_study[d]).collect());
            seen_days.clone_from(&member_days);
        }
        for (key, days) in raw_episodes {
            let mut studies = BTreeSet::new();
            for day in days {
                let d = u32::try_from(day)
                    .ok()
                    .filter(|d| member_days.contains(d))
                    .ok_or_else(|| GroupingError::EpisodeDayNotInGroup {
                        group: name.clone(),
                        day,
                    })?;
                // the same day listed twice in one episode is harmless
                if studies.insert(day_to_study[&d]) && !seen_days.insert(d) {
                    return Err(GroupingError::DayInTwoEpisodes {
                        group: name.clone(),
                        day: d,
                    }
                    .into());
                }
            }
            if studies.is_empty() {
                return Err(GroupingError::MalformedEpisodes {
                    group: name.clone(),
                    message: format!("{key} has no days"),
                }
                .into());
            }
            episodes.push(studies.into_iter().collect());
        }
        if let Some(&d) = member_days.difference(&seen_days).next() {
            return Err(GroupingError::DayWithoutEpisode {
                group: name.clone(),
                day: d,
            }
            .into());
        }
        episodes.sort();
        groups.push(EntityGroup {
            group_id: format!("g{}", g + 1),
            group_name: name.clone(),
            members,
            episodes: episodes
                .into_iter()
                .enumerate()
                .map(|(n, member_study_idxs)| TemporalGroup {
                    episode_ordinal: n as u32 + 1,
                    member_study_idxs,
                })
                .collect(),
        });
    }
    if let Some(l) = lines.iter().find(|l| !used.contains(&l.idx)) {
        return Err(GroupingError::UncoveredFinding {
            idx: l.idx,
            finding: l.phrase.clone(),
        }
        .into());
    }
    let mut grouped = seq.clone();
    grouped.entity_groups = groups;
    grouped.validate()?;
    Ok(grouped.entity_groups)
}

/// Fills `seq.entity_groups` from the provider's grouping. A sequence
/// without findings is returned as is, without a provider call.
pub fn structure_sequence(
    provider: &dyn CompletionProvider,
    seq: &PatientSequence,
    opts: &RepairOptions,
) -> Result<Structured<PatientSequence>, StructureError> {
    if seq.finding_count() == 0 {
        return Ok(Structured {
            value: seq.clone(),
            repairs: 0,
            transcript: Default::default(),
        });
    }
    let user = grouping_payload(seq);
    let out = run_with_repairs(provider, SEQUENTIAL_TEMPLATE, &user, opts, |raw| {
        parse_grouping(raw, seq)
    })?;
    let mut value = seq.clone();
    value.entity_groups = out.value;
    Ok(Structured {
        value,
        repairs: out.repairs,
        transcript: out.transcript,
    })
}
