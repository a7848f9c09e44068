use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{axpy, derive_seed, squared_distance, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, after each
    /// assignment step of the returned run.
    pub objective_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one assignment step")
    }
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::invalid("no points to cluster"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite point"));
        }
    }
    Ok(k.min(points.len()))
}

/// Best of `restarts` runs from k-means++ seeds, each alternating Lloyd
/// iterations with single-point transfer sweeps. `k` is reduced to the
/// number of points when larger.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    let k = validate(points, k)?;
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = SeededRng::new(derive_seed(seed, &[r as u64]));
        let run = lloyd(points, plus_plus_seeds(points, k, &mut rng), max_iters.max(1));
        if best.as_ref().map_or(true, |b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = nearest.len() - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.below(points.len())
        };
        let c = points[pick].clone();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn means(points: &[Vec<f64>], assignment: &[usize], j: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; points[0].len()];
    let mut n = 0;
    for (p, _) in points.iter().zip(assignment).filter(|(_, &a)| a == j) {
        axpy(1.0, p, &mut sum);
        n += 1;
    }
    (n > 0).then(|| sum.iter().map(|s| s / n as f64).collect())
}

/// One sweep of single-point transfers: a point moves to another cluster
/// whenever that lowers the objective, accounting for both means shifting.
/// Centroids must be the means of `assignment` on entry and stay so.
fn transfer_pass(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let mut counts = vec![0usize; centroids.len()];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    for (i, x) in points.iter().enumerate() {
        let a = assignment[i];
        if counts[a] < 2 {
            continue;
        }
        let na = counts[a] as f64;
        let leave = na / (na - 1.0) * squared_distance(x, &centroids[a]);
        let mut best: Option<(usize, f64)> = None;
        for (b, c) in centroids.iter().enumerate() {
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            let delta = nb / (nb + 1.0) * squared_distance(x, c) - leave;
            if delta < -1e-12 * leave.max(1e-300) && best.map_or(true, |(_, d)| delta < d) {
                best = Some((b, delta));
            }
        }
        if let Some((b, _)) = best {
            assignment[i] = b;
            counts[a] -= 1;
            counts[b] += 1;
            centroids[a] = means(points, assignment, a).expect("source keeps a member");
            centroids[b] = means(points, assignment, b).expect("target just gained one");
            moved = true;
        }
    }
    moved
}

/// Lloyd iterations to a fixed point, then transfer sweeps, alternating
/// until neither changes anything or `max_iters` steps have run.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let k = centroids.len();
    let mut trace = Vec::new();
    let (mut assignment, mut dist) = assign(points, &centroids);
    trace.push(dist.iter().sum());
    let mut steps = 0;
    'outer: while steps < max_iters {
        loop {
            if steps >= max_iters {
                break 'outer;
            }
            steps += 1;
            for j in 0..k {
                if let Some(m) = means(points, &assignment, j) {
                    centroids[j] = m;
                }
            }
            for j in 0..k {
                if !assignment.contains(&j) {
                    // farthest point from its own centroid becomes a singleton
                    let far = (0..points.len())
                        .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                        .expect("non-empty");
                    centroids[j] = points[far].clone();
                    dist[far] = 0.0;
                }
            }
            let (next, next_dist) = assign(points, &centroids);
            let obj: f64 = next_dist.iter().sum();
            debug_assert!(obj <= trace.last().unwrap() * (1.0 + 1e-12) + 1e-12);
            trace.push(obj);
            let done = next == assignment;
            assignment = next;
            dist = next_dist;
            if done {
                break;
            }
        }
        steps += 1;
        if !transfer_pass(points, &mut assignment, &mut centroids) {
            break;
        }
        dist = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| squared_distance(p, &centroids[a]))
            .collect();
        trace.push(dist.iter().sum());
    }
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    KMeansResult {
        centroids,
        assignment,
        counts,
        objective_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_points(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
    }

    /// Optimal within-cluster sum of squares over every assignment of the
    /// points to `k` labels, an optimal assignment, and the best cost of any
    /// genuinely different partition.
    fn brute_force(points: &[Vec<f64>], k: usize) -> (f64, Vec<usize>, f64) {
        let n = points.len();
        let d = points[0].len();
        let mut all = Vec::new();
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    let l = c % k;
                    c /= k;
                    l
                })
                .collect();
            let mut cost = 0.0;
            for j in 0..k {
                let members: Vec<&Vec<f64>> =
                    points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                let mean: Vec<f64> = (0..d)
                    .map(|t| members.iter().map(|p| p[t]).sum::<f64>() / members.len() as f64)
                    .collect();
                cost += members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>();
            }
            all.push((cost, labels));
        }
        let (opt, labels) = all
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .cloned()
            .unwrap();
        let runner_up = all
            .iter()
            .filter(|(_, l)| !same_partition(l, &labels))
            .map(|(c, _)| *c)
            .fold(f64::INFINITY, f64::min);
        (opt, labels, runner_up)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().enumerate().all(|(i, &x)| {
            a.iter()
                .enumerate()
                .all(|(j, &y)| (x == y) == (b[i] == b[j]))
        })
    }

    const RESTARTS: usize = 10;
    const SEEDS: u64 = 200;

    #[test]
    fn matches_exhaustive_partition_oracle() {
        for seed in 0..SEEDS {
            let mut rng = SeededRng::new(seed);
            let n = 2 + rng.below(7);
            let k = 1 + rng.below(3);
            let d = 1 + rng.below(3);
            let pts = random_points(&mut rng, n, d);
            let (opt, labels, runner_up) = brute_force(&pts, k);
            let got = kmeans(&pts, k, seed, 100, RESTARTS).unwrap();
            assert!(
                (got.objective() - opt).abs() <= 1e-9 * opt.max(1.0),
                "seed {seed}: {} vs {opt}",
                got.objective()
            );
            if runner_up - opt > 1e-9 {
                assert!(same_partition(&got.assignment, &labels), "seed {seed}");
            }
        }
    }

    #[test]
    fn k_equal_n_gives_zero_objective() {
        let mut rng = SeededRng::new(2);
        let pts = random_points(&mut rng, 6, 3);
        let r = kmeans(&pts, 6, 0, 50, 1).unwrap();
        assert_eq!(r.objective(), 0.0);
        assert!(r.counts.iter().all(|&c| c == 1));
        let r = kmeans(&pts, 10, 0, 50, 1).unwrap();
        assert_eq!(r.centroids.len(), 6);
    }

    #[test]
    fn k_one_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, 1, 0, 50, 1).unwrap();
        assert_eq!(r.centroids, vec![vec![2.0, 1.0]]);
        assert_eq!(r.counts, vec![3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kmeans(&[], 1, 0, 10, 1).is_err());
        assert!(kmeans(&[vec![1.0]], 0, 0, 10, 1).is_err());
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0, 10, 1).is_err());
        assert!(kmeans(&[vec![f64::NAN]], 1, 0, 10, 1).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let r = kmeans(&pts, 3, 0, 10, 2).unwrap();
        assert_eq!(r.objective(), 0.0);
        assert_eq!(r.counts.iter().sum::<usize>(), 5);
    }

    proptest! {
        #[test]
        fn objective_never_increases(seed in any::<u64>(), n in 1usize..60, k in 1usize..8) {
            let mut rng = SeededRng::new(seed);
            let pts = random_points(&mut rng, n, 3);
            let r = kmeans(&pts, k, seed, 100, 1).unwrap();
            for w in r.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert_eq!(r.counts.iter().sum::<usize>(), n);
            prop_assert!(r.centroids.iter().flatten().all(|v| v.is_finite()));
        }

        #[test]
        fn deterministic(seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let pts = random_points(&mut rng, 30, 4);
            prop_assert_eq!(kmeans(&pts, 4, seed, 100, 3).unwrap(), kmeans(&pts, 4, seed, 100, 3).unwrap());
        }
    }
}
