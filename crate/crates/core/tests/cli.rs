mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lunguage::model::{load_corpus, AttributeKind, Strictness};
use lunguage::structure::{reference_inputs, FewShotIndex, Pipeline, PromptOptions, RepairOptions, ScriptedProvider};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lunguage"))
        .args(args)
        .env_remove("LUNGUAGE_EMBED_URL")
        .env_remove("LUNGUAGE_LLM_URL")
        .env_remove("LUNGUAGE_EMBED_CACHE")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn corpus_file(dir: &TempDir, name: &str, patients: usize, seed: u64) -> String {
    write(
        dir,
        name,
        &common::corpus_jsonl(&common::synthetic_corpus(patients, seed)),
    )
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn identical_corpora_score_one() {
    let dir = TempDir::new().unwrap();
    let corpus = corpus_file(&dir, "gold.jsonl", 4, 1);
    for mode in ["single", "sequential"] {
        let v = stdout_json(&run(&["score", "--pred", &corpus, "--gold", &corpus, "--mode", mode]));
        assert_eq!(v["corpus"]["f1"], 1.0, "{mode}");
        assert_eq!(v["tool"], "lunguage");
        assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(v["config"]["embedding"]["backend"], "deterministic");
        assert_eq!(v["mode"], mode);
    }
}

#[test]
fn score_csv_has_all_row_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let corpus = corpus_file(&dir, "gold.jsonl", 3, 2);
    let out = dir.path().join("scores.csv");
    let out_str = out.to_str().unwrap();
    let o = run(&[
        "score",
        "--pred",
        &corpus,
        "--gold",
        &corpus,
        "--mode",
        "sequential",
        "--out",
        out_str,
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "patient_id,study_id,tp,fp,fn,precision,recall,f1");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("ALL,"));
    let meta: Value = serde_json::from_str(&fs::read_to_string(format!("{out_str}.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["command"], "score");
    assert_eq!(meta["config"]["format"], "csv");
}

#[test]
fn unmatched_patient_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let pred = corpus_file(&dir, "pred.jsonl", 3, 3);
    let gold = corpus_file(&dir, "gold.jsonl", 2, 3);
    let o = run(&["score", "--pred", &pred, "--gold", &gold]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p2"));
}

#[test]
fn missing_file_exits_2() {
    let o = run(&[
        "score",
        "--pred",
        "/nonexistent/a.jsonl",
        "--gold",
        "/nonexistent/b.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["score", "--bogus"]).status.code(), Some(2));
}

#[test]
fn weights_override_changes_config() {
    let dir = TempDir::new().unwrap();
    let corpus = corpus_file(&dir, "gold.jsonl", 1, 4);
    let weights = write(&dir, "w.json", r#"{"location": 0.3}"#);
    let v = stdout_json(&run(&[
        "--weights",
        &weights,
        "score",
        "--pred",
        &corpus,
        "--gold",
        &corpus,
    ]));
    assert_eq!(v["config"]["score"]["attribute_weights"]["location"], 0.3);
    let bad = write(&dir, "bad.json", r#"{"location": -1}"#);
    assert_eq!(
        run(&["--weights", &bad, "score", "--pred", &corpus, "--gold", &corpus])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unreachable_llm_exits_3() {
    let dir = TempDir::new().unwrap();
    let input = write(
        &dir,
        "raw.jsonl",
        r#"{"study_id": "s0", "study_day": 0, "sections": {"findings": "Small left pleural effusion."}}"#,
    );
    let o = run(&[
        "--llm-url",
        "http://127.0.0.1:9",
        "--retries",
        "0",
        "--timeout",
        "0.5",
        "structure",
        "--in",
        &input,
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn structure_without_provider_exits_2() {
    let dir = TempDir::new().unwrap();
    let input = write(
        &dir,
        "raw.jsonl",
        r#"{"study_id": "s0", "study_day": 0, "sections": {"findings": "Clear."}}"#,
    );
    assert_eq!(run(&["structure", "--in", &input]).status.code(), Some(2));
}

#[test]
fn structure_replays_transcript() {
    let dir = TempDir::new().unwrap();
    let golds = common::synthetic_corpus(3, 5);
    let vocab_json = r#"{"pleural effusion": ["PF"], "left": ["Location"]}"#;
    let vocab_path = write(&dir, "vocab.json", vocab_json);
    let vocab = lunguage::vocab::parse_vocabulary_json(vocab_json).unwrap();
    let index = FewShotIndex::default();
    let recorder = ScriptedProvider::queue(Vec::<String>::new());
    let pipeline = Pipeline {
        provider: &recorder,
        vocab: &vocab,
        index: &index,
        prompt: PromptOptions::default(),
        repair: RepairOptions::default(),
    };
    let table = pipeline.reference_transcript(&golds).unwrap();
    let transcript = write(&dir, "transcript.json", &serde_json::to_string(&table).unwrap());
    let raw: String = golds
        .iter()
        .flat_map(|g| reference_inputs(g).unwrap())
        .map(|i| serde_json::to_string(&i).unwrap() + "\n")
        .collect();
    let input = write(&dir, "raw.jsonl", &raw);
    let out = dir.path().join("structured.jsonl");
    let log = dir.path().join("log.jsonl");
    let o = run(&[
        "--transcript",
        &transcript,
        "structure",
        "--in",
        &input,
        "--vocab",
        &vocab_path,
        "--sequential",
        "--log-transcripts",
        log.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let got = load_corpus(&out, Strictness::Strict).unwrap().sequences;
    assert_eq!(got.len(), golds.len());
    for (g, p) in golds.iter().zip(&got) {
        assert_eq!(g.patient_id, p.patient_id);
        assert_eq!(g.entity_groups.len(), p.entity_groups.len());
        for (gr, pr) in g.reports.iter().zip(&p.reports) {
            assert_eq!(gr.findings, pr.findings);
        }
    }
    let turns = fs::read_to_string(&log).unwrap().lines().count();
    assert!(turns >= golds.len());

    let o = run(&[
        "score",
        "--pred",
        out.to_str().unwrap(),
        "--gold",
        &corpus_file(&dir, "g.jsonl", 3, 5),
        "--mode",
        "sequential",
    ]);
    assert_eq!(stdout_json(&o)["corpus"]["f1"], 1.0);
}

#[test]
fn match_vocab_three_rows() {
    let dir = TempDir::new().unwrap();
    let vocab = write(
        &dir,
        "vocab.json",
        r#"{"left lung": ["PF", "Location"], "opacity": ["PF"]}"#,
    );
    let v = stdout_json(&run(&["match-vocab", "--vocab", &vocab, "--text", "left lung opacity"]));
    let rows = v["matches"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["char_end"], 9);

    let o = run(&[
        "--format",
        "csv",
        "match-vocab",
        "--vocab",
        &vocab,
        "--text",
        "left lung opacity",
    ]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
}

fn perturb(dir: &TempDir, corpus: &str, name: &str) -> Vec<u8> {
    let out = dir.path().join(name);
    let o = run(&[
        "--seed",
        "11",
        "perturb",
        "--kind",
        "delete-finding",
        "--count",
        "1",
        "--in",
        corpus,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    fs::read(out).unwrap()
}

#[test]
fn perturb_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let corpus = corpus_file(&dir, "gold.jsonl", 4, 6);
    let a = perturb(&dir, &corpus, "a.csv");
    let b = perturb(&dir, &corpus, "b.csv");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5);
}

#[test]
fn perturb_without_cases_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let mut golds = common::synthetic_corpus(2, 7);
    for f in golds
        .iter_mut()
        .flat_map(|s| s.reports.iter_mut())
        .flat_map(|r| r.findings.iter_mut())
    {
        f.attributes.remove(&AttributeKind::Improved);
        f.attributes.remove(&AttributeKind::Worsened);
    }
    let corpus = write(&dir, "flat.jsonl", &common::corpus_jsonl(&golds));
    let out = dir.path().join("rates.csv");
    let o = run(&[
        "perturb",
        "--kind",
        "flip-temporal",
        "--in",
        &corpus,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("notice"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn validate_reports_bad_lines() {
    let dir = TempDir::new().unwrap();
    let good = corpus_file(&dir, "good.jsonl", 2, 8);
    let o = run(&["validate", "--in", &good]);
    assert!(o.status.success());
    assert_eq!(
        serde_json::from_slice::<Value>(&o.stdout).unwrap()["counts"]["sequences"],
        2
    );

    let mut text = fs::read_to_string(&good).unwrap();
    text.push_str(
        "{\"patient_id\": \"x\", \"reports\": [{\"study_id\": \"a\", \"study_day\": 5, \"findings\": []}]}\n",
    );
    let bad = write(&dir, "bad.jsonl", &text);
    let o = run(&["validate", "--in", &bad]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains(&format!("{}:3", Path::new(&bad).display())), "{stderr}");
}
