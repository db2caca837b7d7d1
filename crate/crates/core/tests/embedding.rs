use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use pyramid_core::embedding::{fit_gaussian, priority_score, HashedNgramEmbedder};
use pyramid_core::{cosine, Embedder, Vector, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> Vector {
    Vector::new(x.to_vec()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vector> {
    (0..n)
        .map(|_| v(&(0..d).map(|_| scale * normal(rng)).collect::<Vec<_>>()))
        .collect()
}

#[test]
fn three_points_closed_form() {
    let pts = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 2.0])];
    let ridge = 0.1;
    let model = fit_gaussian(&pts, ridge, 16).unwrap();
    assert_eq!(model.reduced_dim(), 2);

    // mean (1/3, 2/3); unbiased covariance by hand
    let mu = [1.0 / 3.0, 2.0 / 3.0];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p.as_slice()[0] - mu[0], p.as_slice()[1] - mu[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (a, b, c) = (sxx / 2.0 + ridge, sxy / 2.0, syy / 2.0 + ridge);
    let det = a * c - b * b;
    for x in [[0.0, 0.0], [0.5, 0.5], [-1.0, 3.0], [2.0, -2.0]] {
        let (dx, dy) = (x[0] - mu[0], x[1] - mu[1]);
        let maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        let want = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * maha;
        let got = model.log_density(&v(&x)).unwrap();
        assert!((got - want).abs() < 1e-9, "{x:?}: {got} vs {want}");
    }
}

#[test]
fn density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts = random_points(&mut rng, 40, 12, 1.0);
    let model = fit_gaussian(&pts, 0.05, 3).unwrap();
    let r = model.reduced_dim();
    assert_eq!(r, 3);

    // importance sampling from a wide isotropic Gaussian around the mean
    let cov = model.regularized_covariance();
    let sd = 2.0 * cov.symmetric_eigenvalues().max().sqrt();
    let log_q_norm = -(r as f64) / 2.0 * (2.0 * std::f64::consts::PI * sd * sd).ln();
    let n = 200_000;
    let mut total = 0.0;
    for _ in 0..n {
        let z = DVector::from_fn(r, |_, _| normal(&mut rng));
        let y = &model.mean + &z * sd;
        let log_q = log_q_norm - 0.5 * z.norm_squared();
        total += (model.log_density_reduced(&y) - log_q).exp();
    }
    let mass = total / n as f64;
    assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
}

#[test]
fn mean_is_the_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_points(&mut rng, 25, 8, 0.7);
    let model = fit_gaussian(&pts, 0.01, 16).unwrap();
    let peak = model.log_density_reduced(&model.mean);
    for _ in 0..500 {
        let step = DVector::from_fn(model.reduced_dim(), |_, _| 0.3 * normal(&mut rng));
        assert!(model.log_density_reduced(&(&model.mean + step)) < peak);
    }
}

#[test]
fn fitting_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = random_points(&mut rng, 30, 10, 1.0);
    let a = fit_gaussian(&pts, 0.01, 4).unwrap();
    let b = fit_gaussian(&pts, 0.01, 4).unwrap();
    assert_eq!(a.projection, b.projection);
    assert_eq!(a.mean, b.mean);
    for p in &pts {
        assert_eq!(a.log_density(p).unwrap(), b.log_density(p).unwrap());
    }
}

#[test]
fn priority_is_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let o = random_points(&mut rng, 30, 6, 1.0);
    let k: Vec<Vector> = random_points(&mut rng, 30, 6, 0.5)
        .into_iter()
        .map(|p| v(&p.as_slice().iter().map(|x| x + 0.4).collect::<Vec<_>>()))
        .collect();
    let fo = fit_gaussian(&o, 0.05, 16).unwrap();
    let fk = fit_gaussian(&k, 0.05, 16).unwrap();
    for x in o.iter().chain(&k) {
        let ok = priority_score(&fo, &fk, x).unwrap();
        assert_eq!(ok, -priority_score(&fk, &fo, x).unwrap());
        assert_eq!(priority_score(&fo, &fo, x).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularized_covariance_is_positive_definite(
        seed in any::<u64>(),
        n in 2usize..12,
        d in 1usize..20,
        repeats in 0usize..4,
        ridge in 1e-6f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = random_points(&mut rng, n, d, 1.0);
        // duplicates and a collinear point make the sample covariance singular
        for i in 0..repeats {
            pts.push(pts[i % n].clone());
        }
        pts.push(pts[0].scaled(2.0));
        match fit_gaussian(&pts, ridge, 16) {
            Ok(model) => {
                let reg: DMatrix<f64> = model.regularized_covariance();
                let smallest = reg.clone().symmetric_eigenvalues().min();
                prop_assert!(smallest >= ridge * (1.0 - 1e-9), "{smallest} < {ridge}");
                prop_assert!(reg.cholesky().is_some());
            }
            // only a set with no spread at all may be refused
            Err(e) => prop_assert!(pts.iter().all(|p| p == &pts[0]), "{e}"),
        }
    }

    #[test]
    fn top_k_matches_brute_force(seed in any::<u64>(), n in 1usize..1000, k in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = VectorIndex::new(6);
        let pts = random_points(&mut rng, n, 6, 1.0);
        for (i, p) in pts.iter().enumerate() {
            idx.insert(format!("{i:04}"), p.clone()).unwrap();
        }
        let q = random_points(&mut rng, 1, 6, 1.0).remove(0);
        let mut brute: Vec<(String, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("{i:04}"), cosine(&q, p).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        brute.truncate(k);
        prop_assert_eq!(idx.top_k(&q, k).unwrap(), brute);
    }
}

#[test]
fn local_embedder_is_stable() {
    let e = HashedNgramEmbedder::new(64, 7);
    let a = e.embed_batch(&["Alice works in CS."]).unwrap();
    let b = e.embed_batch(&["Alice works in CS."]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].len(), e.dim());
}
