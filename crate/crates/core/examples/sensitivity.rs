//! Perturbs reference sequences and reports how far each score drops per
//! change (the Effect Rate).
//!
//! cargo run --example sensitivity

use std::path::Path;

use lunguage::embed::SimilarityEnsemble;
use lunguage::model::{load_corpus, Strictness};
use lunguage::perturb::{run_sensitivity, write_csv, AntonymMap, Perturbation, PerturbationKind};
use lunguage::score::{ScoreConfig, Scorer};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/gold.jsonl");
    let golds = load_corpus(&path, Strictness::Strict).unwrap().sequences;
    let ensemble = SimilarityEnsemble::deterministic(0, 256);
    let config = ScoreConfig::default();
    let scorer = Scorer::new(&ensemble, &config);
    let antonyms = AntonymMap::builtin();

    for kind in [PerturbationKind::FlipTemporal, PerturbationKind::NegateStatus] {
        let p = Perturbation::new(kind, 7);
        let report = run_sensitivity(&scorer, &golds, &p, &antonyms).unwrap();
        println!("== {}", kind.as_str());
        write_csv(&report.cases, std::io::stdout()).unwrap();
        if let (Some(s), Some(q)) = (report.single, report.sequential) {
            println!("mean effect rate: single {:.3}%  sequential {:.3}%", s.mean, q.mean);
        }
    }
}
