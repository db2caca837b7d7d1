//! Multivariate Gaussian densities over a shared principal-component basis.
//!
//! Phrase sets are always far smaller than the embedding dimension, so a
//! full-rank covariance in raw space does not exist. Points are mapped through
//! an orthonormal basis of at most `n - 1` principal components and a ridge is
//! added to the covariance before factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::Vector;
use crate::error::{Error, Result};

/// Smallest density used when `exp(log_density)` underflows.
pub const DENSITY_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone)]
pub struct GaussianModel {
    /// Mean in the reduced space.
    pub mean: DVector<f64>,
    /// Sample covariance in the reduced space, ridge not included.
    pub covariance: DMatrix<f64>,
    /// `d × d'` basis matrix, orthonormal unless rescaled; reduced coordinates are `projectionᵀ x`.
    pub projection: DMatrix<f64>,
    pub ridge: f64,
    pub log_norm: f64,
    chol: Cholesky<f64, Dyn>,
}

fn to_matrix(points: &[Vector]) -> Result<DMatrix<f64>> {
    let d = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != d) {
        return Err(Error::InvalidInput(format!(
            "mixed dimensions {d} and {}",
            p.dim()
        )));
    }
    Ok(DMatrix::from_fn(points.len(), d, |i, j| {
        points[i].as_slice()[j]
    }))
}

/// Orthonormal basis of the top principal components of `points`.
///
/// Keeps `min(max_dim, n - 1, d)` components, minus any with (numerically)
/// zero variance. Each column's largest-magnitude entry is made positive so
/// the basis is reproducible.
pub fn principal_basis(points: &[Vector], max_dim: usize) -> Result<DMatrix<f64>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if max_dim == 0 {
        return Err(Error::InvalidInput("max_dim must be positive".into()));
    }
    let x = to_matrix(points)?;
    let (n, d) = x.shape();
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);

    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let top = svd.singular_values[order[0]];
    let keep = max_dim.min(n - 1).min(d);
    let selected: Vec<usize> = order
        .into_iter()
        .take(keep)
        .filter(|&i| top > 0.0 && svd.singular_values[i] > top * 1e-10)
        .collect();
    if selected.is_empty() {
        return Err(Error::Numeric("point set has zero variance".into()));
    }

    let mut basis = DMatrix::zeros(d, selected.len());
    for (col, &i) in selected.iter().enumerate() {
        let row = v_t.row(i);
        let pivot = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, v)| *v)
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            basis[(j, col)] = sign * row[j];
        }
    }
    Ok(basis)
}

/// Fits a Gaussian to `points` in the space spanned by `basis`.
pub fn fit_in_basis(points: &[Vector], basis: &DMatrix<f64>, ridge: f64) -> Result<GaussianModel> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be positive, got {ridge}")));
    }
    let x = to_matrix(points)?;
    if x.ncols() != basis.nrows() {
        return Err(Error::InvalidInput(format!(
            "points have dimension {}, basis expects {}",
            x.ncols(),
            basis.nrows()
        )));
    }
    let n = x.nrows();
    let reduced = &x * basis;
    let r = reduced.ncols();
    let mean = DVector::from_iterator(r, (0..r).map(|j| reduced.column(j).mean()));
    let mut covariance = DMatrix::zeros(r, r);
    for i in 0..n {
        let diff = reduced.row(i).transpose() - &mean;
        covariance += &diff * diff.transpose();
    }
    covariance /= (n - 1) as f64;
    // exact symmetry, the accumulation above can differ in the last bit
    covariance = (&covariance + covariance.transpose()) * 0.5;

    let regularized = &covariance + DMatrix::identity(r, r) * ridge;
    let chol = Cholesky::new(regularized)
        .ok_or_else(|| Error::Numeric("regularized covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_norm = -(r as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
    if !log_norm.is_finite() {
        return Err(Error::Numeric("normalizer is not finite".into()));
    }
    Ok(GaussianModel {
        mean,
        covariance,
        projection: basis.clone(),
        ridge,
        log_norm,
        chol,
    })
}

/// Fits a Gaussian to `points` on their own principal basis.
pub fn fit_gaussian(points: &[Vector], ridge: f64, max_dim: usize) -> Result<GaussianModel> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let basis = principal_basis(points, max_dim)?;
    fit_in_basis(points, &basis, ridge)
}

impl GaussianModel {
    pub fn raw_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn project(&self, x: &Vector) -> Result<DVector<f64>> {
        if x.dim() != self.raw_dim() {
            return Err(Error::InvalidInput(format!(
                "point has dimension {}, model expects {}",
                x.dim(),
                self.raw_dim()
            )));
        }
        Ok(self.projection.tr_mul(&DVector::from_column_slice(x.as_slice())))
    }

    /// Log-density at a point given in reduced coordinates.
    pub fn log_density_reduced(&self, y: &DVector<f64>) -> f64 {
        let diff = y - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn log_density(&self, x: &Vector) -> Result<f64> {
        Ok(self.log_density_reduced(&self.project(x)?))
    }

    /// The regularized covariance actually used by the density.
    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        &self.covariance + DMatrix::identity(self.reduced_dim(), self.reduced_dim()) * self.ridge
    }
}

/// Both layer densities at one point, after underflow clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDensities {
    pub ontology: f64,
    pub kg: f64,
}

fn clamped(log_density: f64) -> f64 {
    log_density.exp().max(DENSITY_FLOOR)
}

pub fn layer_densities(
    ontology: &GaussianModel,
    kg: &GaussianModel,
    x: &Vector,
) -> Result<LayerDensities> {
    if ontology.raw_dim() != kg.raw_dim() {
        return Err(Error::InvalidInput(
            "models disagree on raw dimension".into(),
        ));
    }
    Ok(LayerDensities {
        ontology: clamped(ontology.log_density(x)?),
        kg: clamped(kg.log_density(x)?),
    })
}

/// Priority for promoting knowledge at `x` from the KG layer into the ontology.
///
/// With `F_O`, `F_K` the two layer densities at `x`, each cross term weights
/// the other layer's log-density by its reference layer's density:
///
/// ```text
/// D(O‖K) = -F_K(x) · log F_O(x)      (K as reference)
/// D(K‖O) = -F_O(x) · log F_K(x)      (O as reference)
/// Pr(x)  =  D(O‖K) - D(K‖O)
/// ```
///
/// `Pr` is large where the KG is dense and the ontology is sparse, zero when
/// the two densities coincide, and antisymmetric in the model arguments.
pub fn priority_score(ontology: &GaussianModel, kg: &GaussianModel, x: &Vector) -> Result<f64> {
    let LayerDensities { ontology: f_o, kg: f_k } = layer_densities(ontology, kg, x)?;
    let d_o_k = -(f_k * f_o.ln());
    let d_k_o = -(f_o * f_k.ln());
    Ok(d_o_k - d_k_o)
}
