mod common;

use std::collections::BTreeMap;

use lunguage::model::Section;
use lunguage::structure::{
    build_single_prompt, prompt_hash, reference_grouping, reference_inputs, repair_prompt, Example, FewShotIndex,
    GroupingError, Pipeline, PromptOptions, RepairOptions, ReportInput, ScriptedProvider, StructureError,
    ValidationIssue, SEQUENTIAL_TEMPLATE,
};
use lunguage::vocab::Vocabulary;

fn pipeline<'a>(provider: &'a ScriptedProvider, vocab: &'a Vocabulary, index: &'a FewShotIndex) -> Pipeline<'a> {
    Pipeline {
        provider,
        vocab,
        index,
        prompt: PromptOptions {
            k_shots: 3,
            max_example_tokens: None,
        },
        repair: RepairOptions::default(),
    }
}

fn index() -> FewShotIndex {
    FewShotIndex::new(
        common::synthetic_corpus(4, 99)
            .into_iter()
            .flat_map(|s| s.reports)
            .map(|r| Example {
                text: lunguage::structure::report_text(r.source_text.as_ref().unwrap()),
                report: r,
            })
            .collect(),
    )
}

#[test]
fn single_reports_keep_input_order() {
    let golds = common::synthetic_corpus(6, 1);
    let (vocab, index) = (Vocabulary::new(), index());
    let recorder = ScriptedProvider::queue(Vec::<String>::new());
    let table = pipeline(&recorder, &vocab, &index)
        .reference_transcript(&golds)
        .unwrap();
    let provider = ScriptedProvider::from_table(table);
    let inputs: Vec<ReportInput> = golds.iter().flat_map(|g| reference_inputs(g).unwrap()).collect();
    let run = pipeline(&provider, &vocab, &index).structure_reports(&inputs).unwrap();
    let ids: Vec<&str> = run.sequence.reports.iter().map(|r| r.study_id.as_str()).collect();
    let expected: Vec<&str> = inputs.iter().map(|i| i.study_id.as_str()).collect();
    assert_eq!(ids, expected);
    assert_eq!(run.transcripts.len(), inputs.len());
    assert_eq!(provider.calls() as usize, inputs.len());
}

#[test]
fn few_shot_prompts_carry_examples() {
    let golds = common::synthetic_corpus(1, 2);
    let index = index();
    let input = &reference_inputs(&golds[0]).unwrap()[0];
    let prompt = build_single_prompt(
        input,
        &Vocabulary::new(),
        &index,
        &PromptOptions {
            k_shots: 3,
            max_example_tokens: None,
        },
    )
    .unwrap();
    assert_eq!(prompt.shots.len(), 3);
    let payload: serde_json::Value = serde_json::from_str(&prompt.user).unwrap();
    assert_eq!(payload["examples"].as_array().unwrap().len(), 3);
    assert!(payload["examples"][0]["structured_report"]["entities"].is_array());

    let tight = build_single_prompt(
        input,
        &Vocabulary::new(),
        &index,
        &PromptOptions {
            k_shots: 3,
            max_example_tokens: Some(1),
        },
    )
    .unwrap();
    assert!(tight.shots.is_empty());
    assert!(!tight.user.contains("\"examples\""));
}

#[test]
fn exhausted_repairs_keep_last_output() {
    let golds = common::synthetic_corpus(1, 3);
    let (vocab, index) = (Vocabulary::new(), FewShotIndex::default());
    let provider = ScriptedProvider::queue(["nope"; 5]);
    let inputs = reference_inputs(&golds[0]).unwrap();
    let err = pipeline(&provider, &vocab, &index)
        .structure_reports(&inputs[..1])
        .unwrap_err();
    match err {
        StructureError::ValidationExhausted {
            attempts,
            raw_output,
            transcript,
            ..
        } => {
            assert_eq!(attempts, 3);
            assert_eq!(raw_output, "nope");
            assert_eq!(transcript.turns.len(), 3);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn empty_report_is_rejected_without_a_call() {
    let provider = ScriptedProvider::queue(Vec::<String>::new());
    let (vocab, index) = (Vocabulary::new(), FewShotIndex::default());
    let input = ReportInput {
        patient_id: None,
        study_id: "s".into(),
        study_day: 0,
        sections: BTreeMap::from([(Section::Findings, "   ".to_string())]),
    };
    let err = pipeline(&provider, &vocab, &index)
        .structure_reports(&[input])
        .unwrap_err();
    assert!(matches!(err, StructureError::EmptyReport { .. }));
    assert_eq!(provider.calls(), 0);
}

#[test]
fn grouping_repair_recovers_from_partial_cover() {
    let golds = common::synthetic_corpus(1, 4);
    let gold = &golds[0];
    let (vocab, index) = (Vocabulary::new(), FewShotIndex::default());
    let recorder = ScriptedProvider::queue(Vec::<String>::new());
    let mut table = pipeline(&recorder, &vocab, &index)
        .reference_transcript(&golds)
        .unwrap();

    let mut ungrouped = gold.clone();
    ungrouped.entity_groups.clear();
    let user = lunguage::structure::grouping_payload(&ungrouped);
    let key = prompt_hash(SEQUENTIAL_TEMPLATE, &user);
    let good = table.remove(&key).unwrap();
    assert_eq!(good, reference_grouping(gold));
    let bad = r#"{"results": []}"#;
    table.insert(key, bad.to_string());
    let issue = ValidationIssue::Grouping(GroupingError::UncoveredFinding {
        idx: 0,
        finding: lunguage::structure::grouping_lines(&ungrouped)[0].phrase.clone(),
    });
    table.insert(
        prompt_hash(SEQUENTIAL_TEMPLATE, &repair_prompt(&user, &issue, bad)),
        good,
    );

    let provider = ScriptedProvider::from_table(table);
    let run = pipeline(&provider, &vocab, &index)
        .structure_patient(&gold.patient_id, &reference_inputs(gold).unwrap())
        .unwrap();
    assert_eq!(run.repairs, 1);
    assert_eq!(run.sequence.entity_groups.len(), gold.entity_groups.len());
    for (p, g) in run.sequence.entity_groups.iter().zip(&gold.entity_groups) {
        assert_eq!(p.members, g.members);
        assert_eq!(p.episodes, g.episodes);
    }
}
