//! One-to-one matching of predicted and reference findings.
//!
//! cargo run --example assignment

use lunguage::score::{aggregate, MatchMatrix};

fn main() {
    // rows are predictions, columns references
    let matrix = MatchMatrix::from_scores(vec![
        vec![0.90, 0.70, 0.00],
        vec![0.80, 0.10, 0.00],
        vec![0.00, 0.00, 0.00],
    ]);
    let pairs = matrix.assign(0.0);
    println!("assignment: {pairs:?}");
    let b = aggregate(&matrix, &pairs).unwrap();
    for m in &b.matched {
        println!("matched {} -> {} at {:.2}", m.pred, m.gold, m.score);
    }
    println!("unmatched predictions: {:?}", b.unmatched_pred);
    println!("unmatched references:  {:?}", b.unmatched_gold);
    println!("tp {:.2}  fp {:.2}  fn {:.2}  f1 {:.3}", b.tp, b.fp, b.fn_, b.f1);
}
