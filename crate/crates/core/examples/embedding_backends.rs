//! Similarity backends: an encoder service when `LUNGUAGE_EMBED_URL` is
//! set, otherwise the seeded deterministic encoder. HTTP embeddings are
//! cached on disk between runs.
//!
//! LUNGUAGE_EMBED_URL=http://localhost:8080 LUNGUAGE_EMBED_CACHE=/tmp/emb.json \
//!     cargo run --example embedding_backends

use lunguage::embed::{HttpEnsembleConfig, RetryPolicy, SimilarityEnsemble};

fn main() {
    let pairs = [
        ("pleural effusion", "pleural effusion"),
        ("pleural effusion", "effusion"),
        ("pleural effusion left", "right pneumothorax"),
        ("", "opacity"),
    ];
    let (ensemble, cache) = match HttpEnsembleConfig::from_env() {
        Some(cfg) => {
            println!("encoders {:?} at {}", cfg.models, cfg.url);
            let (e, c) = cfg.build(RetryPolicy::default()).expect("valid embedding config");
            (e, Some((c, cfg.cache_path.is_some())))
        }
        None => {
            println!("no LUNGUAGE_EMBED_URL; using the deterministic encoder");
            (SimilarityEnsemble::deterministic(0, 256), None)
        }
    };
    println!("members: {:?}", ensemble.member_names());
    for (a, b) in pairs {
        match ensemble.similarity(a, b) {
            Ok(s) => println!("{s:.3}  {a:?} vs {b:?}"),
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(3);
            }
        }
    }
    if let Some((cache, persistent)) = cache {
        println!("{} vectors cached", cache.len());
        if persistent {
            cache.save().expect("cache written");
        }
    }
}
