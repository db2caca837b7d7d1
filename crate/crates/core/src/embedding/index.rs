use serde::{Deserialize, Serialize};

use super::{cosine, Vector};
use crate::error::{Error, Result};

/// Exact cosine index. Corpus sizes here make a linear scan the right tool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vector>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inserts or replaces the vector stored under `id`.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vector) -> Result<()> {
        if self.is_empty() && self.dim == 0 {
            self.dim = vector.dim();
        }
        if vector.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector dimension {} does not match index dimension {}",
                vector.dim(),
                self.dim
            )));
        }
        let id = id.into();
        match self.ids.iter().position(|x| *x == id) {
            Some(pos) => self.vectors[pos] = vector,
            None => {
                self.ids.push(id);
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<Vector> {
        let pos = self.ids.iter().position(|x| x == id)?;
        self.ids.remove(pos);
        Some(self.vectors.remove(pos))
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|pos| &self.vectors[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|x| x == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter())
    }

    /// The `k` most similar items, highest cosine first, ties by ascending id.
    pub fn top_k(&self, query: &Vector, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let mut scored = self
            .iter()
            .map(|(id, v)| cosine(query, v).map(|s| (id.to_string(), s)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn fewer_items_than_k() {
        let mut idx = VectorIndex::new(2);
        idx.insert("a", v(&[1.0, 0.0])).unwrap();
        idx.insert("b", v(&[0.0, 1.0])).unwrap();
        idx.insert("c", v(&[1.0, 1.0])).unwrap();
        assert_eq!(idx.top_k(&v(&[1.0, 0.2]), 10).unwrap().len(), 3);
    }

    #[test]
    fn exact_match_first() {
        let mut idx = VectorIndex::new(2);
        idx.insert("a", v(&[1.0, 0.0])).unwrap();
        idx.insert("b", v(&[0.3, 0.7])).unwrap();
        let hits = idx.top_k(&v(&[0.3, 0.7]), 1).unwrap();
        assert_eq!(hits[0].0, "b");
        assert!((hits[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_by_ascending_id() {
        let mut idx = VectorIndex::new(2);
        idx.insert("z", v(&[1.0, 0.0])).unwrap();
        idx.insert("m", v(&[2.0, 0.0])).unwrap();
        let hits = idx.top_k(&v(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].0, "m");
        assert_eq!(hits[1].0, "z");
    }

    #[test]
    fn empty_index_empty_result() {
        assert!(VectorIndex::new(3).top_k(&v(&[1.0, 0.0, 0.0]), 5).unwrap().is_empty());
    }

    #[test]
    fn random_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut idx = VectorIndex::new(8);
        let mut items = Vec::new();
        for i in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            items.push((format!("i{i:02}"), x.clone()));
            idx.insert(format!("i{i:02}"), v(&x)).unwrap();
        }
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // oracle: score everything by hand, pick the best five by repeated max
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut pool: Vec<(String, f64)> = items
            .iter()
            .map(|(id, x)| (id.clone(), dot(x, &q) / (dot(x, x).sqrt() * dot(&q, &q).sqrt())))
            .collect();
        let mut expected = Vec::new();
        for _ in 0..5 {
            let best = (0..pool.len())
                .max_by(|&a, &b| pool[a].1.partial_cmp(&pool[b].1).unwrap())
                .unwrap();
            expected.push(pool.remove(best).0);
        }
        let got: Vec<String> = idx.top_k(&v(&q), 5).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn dimension_enforced() {
        let mut idx = VectorIndex::new(2);
        assert!(idx.insert("a", v(&[1.0, 0.0, 0.0])).is_err());
    }
}
