//! Few-shot example retrieval with BM25.
//!
//! cargo run --example bm25_retrieval

use lunguage::model::StructuredReport;
use lunguage::structure::{Example, FewShotIndex};

fn main() {
    let texts = [
        "Small left pleural effusion. No pneumothorax.",
        "Endotracheal tube terminates 4 cm above the carina.",
        "Right lower lobe opacity concerning for pneumonia.",
        "Moderate right pleural effusion has increased.",
        "Heart size is normal. Lungs are clear.",
        "Left lower lobe atelectasis. Small left effusion.",
    ];
    let index = FewShotIndex::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Example {
                text: t.to_string(),
                report: StructuredReport {
                    study_id: format!("ex{i}"),
                    study_day: 0,
                    findings: vec![],
                    source_text: None,
                },
            })
            .collect(),
    );
    let query = "Small left pleural effusion, slightly increased.";
    println!("query: {query}");
    for i in index.retrieve(query, 3) {
        println!("{:.3}  {}", index.score(query, i), texts[i]);
    }
}
