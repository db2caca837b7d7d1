use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Embedder;
use crate::error::BackendError;

const BUCKETS: u64 = 1 << 20;
const NGRAM: usize = 3;

/// Deterministic offline embedder.
///
/// Text is lowercased and split into alphanumeric words; each word contributes
/// itself plus its boundary-marked character trigrams. Every feature is hashed
/// (FNV-1a) into one of 2^20 buckets, and each bucket owns a ±1 row drawn from
/// a ChaCha stream seeded by `(seed, bucket)`. The summed rows are
/// L2-normalized. Output depends only on the text, `dim` and `seed`.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    id: String,
    dim: usize,
    seed: u64,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            id: format!("local-hashed-ngram-d{dim}-s{seed}"),
            dim,
            seed,
        }
    }

    fn features(text: &str) -> Vec<(String, f64)> {
        let lower = text.to_lowercase();
        let mut words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            words.push(lower.trim());
        }
        let mut out = Vec::new();
        for word in words {
            out.push((format!("w:{word}"), 1.0));
            let marked: Vec<char> = std::iter::once('^')
                .chain(word.chars())
                .chain(std::iter::once('$'))
                .collect();
            if marked.len() >= NGRAM {
                for gram in marked.windows(NGRAM) {
                    out.push((format!("c:{}", gram.iter().collect::<String>()), 0.5));
                }
            }
        }
        out
    }

    fn accumulate(&self, bucket: u64, weight: f64, acc: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ bucket.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut bits = 0u64;
        for (j, slot) in acc.iter_mut().enumerate() {
            if j % 64 == 0 {
                bits = rng.next_u64();
            }
            let sign = if bits & 1 == 1 { 1.0 } else { -1.0 };
            bits >>= 1;
            *slot += sign * weight;
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for (feature, weight) in Self::features(text) {
            let bucket = fnv1a(feature.as_bytes()) % BUCKETS;
            self.accumulate(bucket, weight, &mut acc);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            acc[0] = 1.0;
        } else {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        acc
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl Embedder for HashedNgramEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, embed, Vector};

    #[test]
    fn identical_text_is_bitwise_identical() {
        let e = HashedNgramEmbedder::new(64, 7);
        let a = e.embed_text("Prof. Alan Reed works in");
        let b = e.embed_text("Prof. Alan Reed works in");
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unit_norm() {
        let e = HashedNgramEmbedder::new(128, 1);
        let n: f64 = e.embed_text("cloud computing").iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_a_b_cosine() {
        let e = HashedNgramEmbedder::new(256, 42);
        let a = embed("a", &e).unwrap();
        let b = embed("b", &e).unwrap();
        let c = cosine(&a, &b).unwrap();
        assert!(c < 1.0);
        // frozen from the first run of this provider with (dim 256, seed 42)
        assert_eq!(format!("{c:.12}"), GOLDEN_A_B);
    }

    const GOLDEN_A_B: &str = "0.009346202568";

    #[test]
    fn related_texts_closer_than_unrelated() {
        let e = HashedNgramEmbedder::new(256, 42);
        let emb = |t: &str| Vector::new(e.embed_text(t)).unwrap();
        let q = emb("research interests of Alice Chen");
        let near = emb("Alice Chen is interested in cloud computing");
        let far = emb("The campus library opens at 8 am");
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }
}
