//! Lloyd's k-means with k-means++ seeding over fixed-dimension points.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<const D: usize> {
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<usize>,
    /// Mean squared distance to the assigned centroid, recorded after the
    /// seeding assignment and after every Lloyd iteration.
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl<const D: usize> KMeans<D> {
    pub fn distortion(&self) -> f64 {
        *self.distortion_history.last().expect("history is never empty")
    }
}

pub(crate) fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` into `k` groups. The result depends only on the point
/// order, `k` and `seed`; the thread count does not matter.
pub fn kmeans<const D: usize>(points: &[[f64; D]], k: usize, seed: u64) -> Result<KMeans<D>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut assignments = assign(points, &centroids);
    reseed_empty(points, &mut centroids, &mut assignments);
    let mut history = vec![distortion(points, &centroids, &assignments)];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        centroids = means(points, &assignments, &centroids);
        let mut next = assign(points, &centroids);
        reseed_empty(points, &mut centroids, &mut next);
        history.push(distortion(points, &centroids, &next));
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    Ok(KMeans { centroids, assignments, distortion_history: history, iterations, converged })
}

fn seed_plus_plus<const D: usize>(points: &[[f64; D]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; D]> {
    let mut chosen = vec![false; points.len()];
    let first = rng.random_range(0..points.len());
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the target just past the last bucket.
            pick.or_else(|| nearest.iter().rposition(|d| *d > 0.0)).unwrap()
        } else {
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

fn assign<const D: usize>(points: &[[f64; D]], centroids: &[[f64; D]]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn means<const D: usize>(points: &[[f64; D]], assignments: &[usize], previous: &[[f64; D]]) -> Vec<[f64; D]> {
    let k = previous.len();
    let mut sums = vec![[0.0; D]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.iter()
        .zip(&counts)
        .zip(previous)
        .map(|((s, &n), prev)| {
            if n == 0 {
                *prev
            } else {
                s.map(|v| v / n as f64)
            }
        })
        .collect()
}

/// Moves each empty centroid onto the point lying farthest from its own
/// centroid (taken from a cluster that keeps at least one member).
fn reseed_empty<const D: usize>(points: &[[f64; D]], centroids: &mut [[f64; D]], assignments: &mut [usize]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        centroids[empty] = points[i];
        assignments[i] = empty;
    }
}

fn distortion<const D: usize>(points: &[[f64; D]], centroids: &[[f64; D]], assignments: &[usize]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();
    total / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(centre: [f64; 2], spread: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| {
                [
                    centre[0] + rng.random_range(-spread..spread),
                    centre[1] + rng.random_range(-spread..spread),
                ]
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud([3.0, -1.0], 2.0, 500, &mut rng);
        let km = kmeans(&pts, 1, 9).unwrap();
        let mut mean = [0.0; 2];
        for p in &pts {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        for (c, m) in km.centroids[0].iter().zip(mean) {
            assert!((c - m / 500.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn separated_clouds_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spread = 1.0;
        let mut pts = cloud([0.0, 0.0], spread, 200, &mut rng);
        pts.extend(cloud([10.0, 10.0], spread, 200, &mut rng));
        for seed in 0..10 {
            let km = kmeans(&pts, 2, seed).unwrap();
            for centre in [[0.0, 0.0], [10.0, 10.0]] {
                let best = km
                    .centroids
                    .iter()
                    .map(|c| squared_distance(c, &centre).sqrt())
                    .fold(f64::MAX, f64::min);
                assert!(best <= spread, "seed {seed}: {best}");
            }
        }
    }

    #[test]
    fn k_equal_to_count_reproduces_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud([0.0, 0.0], 5.0, 30, &mut rng);
        let km = kmeans(&pts, 30, 4).unwrap();
        assert_eq!(km.distortion(), 0.0);
        let mut got = km.centroids.clone();
        let mut want = pts.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&[[0.0; 2]; 3], 4, 0).is_err());
        assert!(kmeans(&[[0.0; 2]; 3], 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_never_leave_clusters_empty() {
        let mut pts = vec![[1.0, 1.0]; 20];
        pts.extend(vec![[5.0, 5.0]; 3]);
        let km = kmeans(&pts, 4, 0).unwrap();
        for j in 0..4 {
            assert!(km.assignments.contains(&j));
        }
    }

    #[test]
    fn distortion_never_increases() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pts: Vec<[f64; 2]> = (0..300).map(|_| [rng.random(), rng.random::<f64>().powi(3)]).collect();
            let km = kmeans(&pts, 8, seed).unwrap();
            for w in km.distortion_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", km.distortion_history);
            }
        }
    }
}
