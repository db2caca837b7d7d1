use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Vector};
use crate::error::{Error, Result};

const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Point indexes of the medoids, in cluster order.
    pub medoids: Vec<usize>,
    /// Cluster of every point.
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Cost after the greedy build and after every accepted swap.
    pub cost_trace: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

/// `1 - cosine` for every pair of points.
pub fn cosine_distances(points: &[Vector]) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = (1.0 - cosine(&points[i], &points[j])?).max(0.0);
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    Ok(d)
}

/// Summed distance from every point to its nearest medoid.
pub fn medoid_cost(d: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| {
            medoids
                .iter()
                .map(|&m| d[i][m])
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn assign(d: &[Vec<f64>], medoids: &[usize]) -> Vec<usize> {
    (0..d.len())
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if d[i][m] < d[i][medoids[best]] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Medoid subsets are enumerated exactly when there are at most this many.
pub const EXACT_SUBSETS: u64 = 20_000;

fn binomial(n: usize, k: usize) -> u64 {
    let mut c: u64 = 1;
    for i in 0..k.min(n - k) {
        c = c.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    c
}

/// Cheapest medoid set by enumeration, or `None` when there are too many sets.
/// Ties keep the lexicographically first set.
fn exhaustive(d: &[Vec<f64>], k: usize) -> Option<(Vec<usize>, f64)> {
    let n = d.len();
    if binomial(n, k) > EXACT_SUBSETS {
        return None;
    }
    let mut set: Vec<usize> = (0..k).collect();
    let mut best = (set.clone(), medoid_cost(d, &set));
    loop {
        let Some(i) = (0..k).rev().find(|&i| set[i] < n - k + i) else {
            return Some(best);
        };
        set[i] += 1;
        for j in i + 1..k {
            set[j] = set[j - 1] + 1;
        }
        let c = medoid_cost(d, &set);
        if c < best.1 - IMPROVEMENT_EPS {
            best = (set.clone(), c);
        }
    }
}

/// PAM over a precomputed distance matrix.
///
/// Build adds medoids greedily, each time the candidate that lowers the cost
/// most; candidates are visited in a seeded random order so exact ties are
/// broken reproducibly. Swap then applies the single best improving
/// (medoid, non-medoid) exchange until none remains. Swap can stop in a
/// local optimum; on instances with at most [`EXACT_SUBSETS`] medoid sets the
/// result is replaced by the enumerated optimum when that is cheaper.
pub fn k_medoids_with_distances(d: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k-medoids needs 1 <= k <= {n}, got k = {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &c in &order {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n).map(|i| nearest[i].min(d[i][c])).sum();
            if best.is_none_or(|(_, b)| cost < b - IMPROVEMENT_EPS) {
                best = Some((c, cost));
            }
        }
        let (c, _) = best.expect("fewer medoids than points");
        medoids.push(c);
        for i in 0..n {
            nearest[i] = nearest[i].min(d[i][c]);
        }
    }

    let mut cost = medoid_cost(d, &medoids);
    let mut trace = vec![cost];
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for &o in &order {
                if medoids.contains(&o) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = o;
                let c = medoid_cost(d, &trial);
                if c < best.map_or(cost, |b| b.2) - IMPROVEMENT_EPS {
                    best = Some((slot, o, c));
                }
            }
        }
        match best {
            Some((slot, o, c)) => {
                medoids[slot] = o;
                cost = c;
                trace.push(cost);
            }
            None => break,
        }
    }
    if let Some((best, best_cost)) = exhaustive(d, k) {
        if best_cost < cost - IMPROVEMENT_EPS {
            medoids = best;
            cost = best_cost;
            trace.push(cost);
        }
    }
    Ok(Clustering {
        assignment: assign(d, &medoids),
        medoids,
        cost,
        cost_trace: trace,
    })
}

/// PAM clustering with cosine distance.
pub fn k_medoids(points: &[Vector], k: usize, seed: u64) -> Result<Clustering> {
    if k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the {} points to cluster",
            points.len()
        )));
    }
    k_medoids_with_distances(&cosine_distances(points)?, k, seed)
}

/// Default cluster count for `selected` points: `ceil(sqrt(selected / 2))`.
pub fn default_cluster_count(selected: usize) -> usize {
    ((selected as f64 / 2.0).sqrt().ceil() as usize).clamp(1, selected.max(1))
}
