//! Shared inputs for the benchmarks.

use std::path::PathBuf;

use pyramid_core::interaction::{Origin, Phrase, PhrasePoint};
use pyramid_core::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

/// `n` vectors with entries uniform in [-1, 1).
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Vector::new(v).expect("finite")
        })
        .collect()
}

pub fn phrase_points(origin: Origin, vectors: Vec<Vector>) -> Vec<PhrasePoint> {
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, vector)| PhrasePoint {
            phrase: Phrase {
                text: format!("p{i:05}"),
                origin,
                source_refs: vec![format!("r{i}")],
            },
            vector,
        })
        .collect()
}
