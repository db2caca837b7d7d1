//! Embedding providers, cosine retrieval, and the per-layer Gaussian density
//! machinery used to locate coverage gaps between layers.

mod gaussian;
mod index;
mod local;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};

pub use gaussian::{
    fit_gaussian, fit_in_basis, layer_densities, principal_basis, priority_score, GaussianModel,
    LayerDensities, DENSITY_FLOOR,
};
pub use index::VectorIndex;
pub use local::HashedNgramEmbedder;
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

/// Finite, fixed-length embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry at {i}")));
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    /// Unit-length copy; fails for the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Numeric("cannot normalize the zero vector".into()));
        }
        Ok(self.scaled(1.0 / n))
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine of a zero vector".into()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// A text embedding backend.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;

    /// Dimension every returned vector must have.
    fn dim(&self) -> usize;

    /// Embeds texts in order. Implementations return one vector per input.
    fn embed_batch(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, BackendError>;
}

/// Embeds one text, enforcing the provider's dimension contract.
pub fn embed(text: &str, provider: &dyn Embedder) -> Result<Vector> {
    let mut out = embed_all(&[text], provider)?;
    Ok(out.remove(0))
}

/// Embeds many texts, enforcing non-empty input and the dimension contract.
pub fn embed_all(texts: &[&str], provider: &dyn Embedder) -> Result<Vec<Vector>> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidInput(format!("text {i} to embed is empty")));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(BackendError::Protocol(format!(
            "provider returned {} vectors for {} texts",
            raw.len(),
            texts.len()
        ))
        .into());
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != provider.dim() {
                return Err(BackendError::DimensionMismatch {
                    expected: provider.dim(),
                    got: v.len(),
                }
                .into());
            }
            Vector::new(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let x = v(&[0.3, -2.0, 5.0]);
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).is_err());
        assert!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
    }

    struct WrongDim;
    impl Embedder for WrongDim {
        fn id(&self) -> &str {
            "wrong"
        }
        fn dim(&self) -> usize {
            1024
        }
        fn embed_batch(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts.iter().map(|_| vec![0.5; 768]).collect())
        }
    }

    #[test]
    fn wrong_dimension_is_contract_error() {
        let err = embed("hello", &WrongDim).unwrap_err();
        assert!(matches!(
            err,
            Error::Backend(BackendError::DimensionMismatch {
                expected: 1024,
                got: 768
            })
        ));
    }
}
