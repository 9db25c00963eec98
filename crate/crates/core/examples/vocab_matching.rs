//! Vocabulary span matching: every contiguous word span found in the
//! vocabulary is reported, overlaps included.
//!
//! cargo run --example vocab_matching

use lunguage::vocab::{candidates, match_spans, parse_vocabulary_json};

fn main() {
    let vocab = parse_vocabulary_json(
        r#"{
            "left lung": ["PF", "Location"],
            "opacity": ["PF"],
            "pleural effusion": ["PF"],
            "effusion": ["PF"],
            "small": ["Severity"]
        }"#,
    )
    .unwrap();
    let text = "Patchy left lung opacity. Small pleural effusion is unchanged.";
    let spans = match_spans(&vocab, text);
    for m in &spans {
        println!(
            "sentence {}  [{:>2}, {:>2})  {:<18} {}",
            m.sent_idx, m.char_start, m.char_end, m.text, m.category
        );
    }
    // matching is exact: "opacity." keeps its period and "Small" its capital
    println!("candidates: {:?}", candidates(&spans));
}
