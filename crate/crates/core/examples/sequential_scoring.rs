//! Patient-level scoring: the same findings grouped into different
//! episodes lose temporal credit.
//!
//! cargo run --example sequential_scoring

use lunguage::embed::SimilarityEnsemble;
use lunguage::model::{
    AttributeKind, EntityCategory, EntityGroup, Finding, MemberRef, PatientSequence, StructuredReport, TemporalGroup,
};
use lunguage::score::{ScoreConfig, Scorer};

fn sequence(episodes: Vec<Vec<usize>>) -> PatientSequence {
    let report = |id: &str, day, trend: Option<&str>| {
        let mut f = Finding::new("f1", "pleural effusion", EntityCategory::Pf)
            .with_attribute(AttributeKind::Location, ["left"]);
        if let Some(t) = trend {
            f = f.with_attribute(AttributeKind::Improved, [t]);
        }
        StructuredReport {
            study_id: id.into(),
            study_day: day,
            findings: vec![f],
            source_text: None,
        }
    };
    PatientSequence {
        patient_id: "p1".into(),
        reports: vec![
            report("s0", 0, None),
            report("s1", 3, Some("decreased")),
            report("s2", 40, None),
        ],
        entity_groups: vec![EntityGroup {
            group_id: "g1".into(),
            group_name: "left pleural effusion".into(),
            members: (0..3).map(|t| MemberRef::new(t, "f1")).collect(),
            episodes: episodes
                .into_iter()
                .enumerate()
                .map(|(n, member_study_idxs)| TemporalGroup {
                    episode_ordinal: n as u32 + 1,
                    member_study_idxs,
                })
                .collect(),
        }],
    }
}

fn main() {
    // the reference sees a recurrence on day 40
    let gold = sequence(vec![vec![0, 1], vec![2]]);
    let same = sequence(vec![vec![0, 1], vec![2]]);
    let merged = sequence(vec![vec![0, 1, 2]]);

    let ensemble = SimilarityEnsemble::deterministic(0, 256);
    let config = ScoreConfig::default();
    let scorer = Scorer::new(&ensemble, &config);

    for (name, pred) in [("same episodes", &same), ("merged episodes", &merged)] {
        let b = scorer.score_sequence(pred, &gold).unwrap();
        println!("{name}: f1 {:.3}", b.f1);
        for m in &b.matched {
            println!(
                "  {} -> {}  semantic {:.2} temporal {:.2} structural {:.2}",
                m.pred,
                m.gold,
                m.semantic,
                m.temporal.unwrap_or(1.0),
                m.structural
            );
        }
    }
}
