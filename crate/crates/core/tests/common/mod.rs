#![allow(dead_code)]

use std::collections::BTreeMap;

use lunguage::model::{
    AttributeKind, DxCertainty, DxStatus, EntityCategory, EntityGroup, Finding, MemberRef, PatientSequence, Section,
    StructuredReport, TemporalGroup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Template {
    entity: &'static str,
    category: EntityCategory,
    location: Option<&'static str>,
}

const TEMPLATES: [Template; 6] = [
    Template {
        entity: "pleural effusion",
        category: EntityCategory::Pf,
        location: Some("left"),
    },
    Template {
        entity: "opacity",
        category: EntityCategory::Pf,
        location: Some("right lower lobe"),
    },
    Template {
        entity: "pneumothorax",
        category: EntityCategory::Pf,
        location: Some("right apex"),
    },
    Template {
        entity: "cardiomegaly",
        category: EntityCategory::Pf,
        location: None,
    },
    Template {
        entity: "endotracheal tube",
        category: EntityCategory::Oth,
        location: None,
    },
    Template {
        entity: "pneumonia",
        category: EntityCategory::Cf,
        location: Some("left lower lobe"),
    },
];

const SEVERITIES: [&str; 3] = ["small", "moderate", "large"];

/// Seeded patients with 2 or 3 studies, findings `f1..fn` per report,
/// source text for every report, and one group per recurring entity.
/// Later studies of a recurring entity carry an `improved` or `worsened`
/// trend, so every patient has something to flip.
pub fn synthetic_corpus(patients: usize, seed: u64) -> Vec<PatientSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..patients).map(|p| synthetic_patient(&mut rng, p)).collect()
}

fn synthetic_patient(rng: &mut ChaCha8Rng, p: usize) -> PatientSequence {
    let studies = rng.random_range(2..=3);
    let mut picked: Vec<usize> = (0..TEMPLATES.len()).collect();
    for i in (1..picked.len()).rev() {
        picked.swap(i, rng.random_range(0..=i));
    }
    picked.truncate(rng.random_range(1..=3));

    let mut reports = Vec::new();
    let mut membership: BTreeMap<usize, Vec<MemberRef>> = BTreeMap::new();
    let mut day = 0;
    for t in 0..studies {
        let mut findings = Vec::new();
        let mut sentences = Vec::new();
        for (n, &k) in picked.iter().enumerate() {
            let last_chance = findings.is_empty() && n + 1 == picked.len();
            if t > 0 && !last_chance && rng.random_bool(0.2) {
                continue;
            }
            let tpl = &TEMPLATES[k];
            let id = format!("f{}", findings.len() + 1);
            let mut f = Finding::new(&id, tpl.entity, tpl.category);
            f.sent_idx = sentences.len() as u32 + 1;
            let mut words = Vec::new();
            if tpl.category == EntityCategory::Pf && tpl.entity != "cardiomegaly" {
                let sev = SEVERITIES[rng.random_range(0..SEVERITIES.len())];
                f = f.with_attribute(AttributeKind::Severity, [sev]);
                words.push(sev.to_string());
            }
            words.push(tpl.entity.to_string());
            if let Some(loc) = tpl.location {
                f = f.with_attribute(AttributeKind::Location, [loc]);
                words.push(format!("in the {loc}"));
            }
            if tpl.category == EntityCategory::Cf {
                f = f.with_certainty(DxCertainty::Tentative);
                words.insert(0, "possible".into());
            }
            if t > 0 {
                if rng.random_bool(0.5) {
                    f = f.with_attribute(AttributeKind::Improved, ["decreased"]);
                    words.push("has decreased".into());
                } else {
                    f = f.with_attribute(AttributeKind::Worsened, ["increased"]);
                    words.push("has increased".into());
                }
            }
            if rng.random_bool(0.1) {
                f = f.with_status(DxStatus::Negative);
                words.insert(0, "no".into());
            }
            let mut sentence = words.join(" ");
            sentence[..1].make_ascii_uppercase();
            sentences.push(sentence + ".");
            membership.entry(k).or_default().push(MemberRef::new(t, id));
            findings.push(f);
        }
        reports.push(StructuredReport {
            study_id: format!("p{p}-s{t}"),
            study_day: day,
            findings,
            source_text: Some(BTreeMap::from([(Section::Findings, sentences.join(" "))])),
        });
        day += rng.random_range(1..30);
    }

    let entity_groups = membership
        .into_iter()
        .enumerate()
        .map(|(g, (k, members))| {
            let studies: Vec<usize> = members.iter().map(|m| m.study_idx).collect();
            // three-study runs sometimes split after the first study
            let episodes = if studies.len() == 3 && rng.random_bool(0.5) {
                vec![studies[..1].to_vec(), studies[1..].to_vec()]
            } else {
                vec![studies]
            };
            EntityGroup {
                group_id: format!("g{}", g + 1),
                group_name: TEMPLATES[k].entity.to_string(),
                members,
                episodes: episodes
                    .into_iter()
                    .enumerate()
                    .map(|(n, member_study_idxs)| TemporalGroup {
                        episode_ordinal: n as u32 + 1,
                        member_study_idxs,
                    })
                    .collect(),
            }
        })
        .collect();

    let seq = PatientSequence {
        patient_id: format!("p{p}"),
        reports,
        entity_groups,
    };
    seq.validate().expect("synthetic sequence is valid");
    seq
}

/// Writes sequences as JSONL.
pub fn corpus_jsonl(seqs: &[PatientSequence]) -> String {
    seqs.iter()
        .map(|s| lunguage::model::sequence_to_json(s) + "\n")
        .collect()
}
