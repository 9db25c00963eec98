//! Scores one predicted finding against a reference with a fixed similarity
//! table, then shows how partial credit turns into TP, FP and FN.
//!
//! cargo run --example worked_example

use lunguage::embed::{PairTable, SimilarityEnsemble};
use lunguage::model::{AttributeKind, EntityCategory, Finding, StructuredReport};
use lunguage::score::{linearize_single, ScoreConfig, Scorer};

fn main() {
    let gold = Finding::new("f1", "opacification", EntityCategory::Pf)
        .with_attribute(AttributeKind::Location, ["left retrocardiac"]);
    let pred = Finding::new("f1", "pleural effusion", EntityCategory::Pf)
        .with_attribute(AttributeKind::Location, ["left"])
        .with_attribute(AttributeKind::Severity, ["moderate"]);

    // similarities an encoder might return for the two phrases and locations
    let table = PairTable::from_pairs([
        (("left", "left retrocardiac"), 0.60),
        (
            ("pleural effusion left moderate", "opacification left retrocardiac"),
            0.447,
        ),
    ]);
    let ensemble = SimilarityEnsemble::single(table);
    let config = ScoreConfig::default();
    let scorer = Scorer::new(&ensemble, &config);

    let (p, g) = (linearize_single(&pred), linearize_single(&gold));
    let c = scorer.match_score(&pred, &gold, (&p, &g), None).unwrap();
    println!("pred phrase: {p}");
    println!("gold phrase: {g}");
    println!(
        "semantic {:.3}  structural {:.3}  total {:.3}",
        c.semantic,
        c.structural,
        c.total()
    );

    let report = |f: Finding| StructuredReport {
        study_id: "s1".into(),
        study_day: 0,
        findings: vec![f],
        source_text: None,
    };
    let b = scorer.score_single(&report(pred), &report(gold)).unwrap();
    println!(
        "tp {:.3}  fp {:.3}  fn {:.3}  precision {:.3}  recall {:.3}  f1 {:.3}",
        b.tp, b.fp, b.fn_, b.precision, b.recall, b.f1
    );
}
