use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{sq_norm, LatentTable};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// A k-means partition of a [`LatentTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    centers: Tensor<f32>,
    center_sq_norms: Vec<f64>,
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    pub seed: u64,
    /// Within-cluster sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn centers(&self) -> &Tensor<f32> {
        &self.centers
    }

    pub fn center(&self, c: usize) -> &[f32] {
        self.centers.row(c)
    }

    pub(crate) fn center_sq_norm(&self, c: usize) -> f64 {
        self.center_sq_norms[c]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    /// A single cluster holding every row; queries against it are exact scans.
    pub fn single(table: &LatentTable) -> Result<Self> {
        kmeans(table, 1, 0, 1)
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Nearest center index and its squared distance; ties go to the lower index.
fn closest(point: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(table: &LatentTable, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = table.len();
    let as_f64 = |i: usize| table.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![as_f64(first)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(table.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.unwrap()
        } else {
            // every remaining point duplicates a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        let center = as_f64(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(table.row(i), &center));
        }
        centers.push(center);
    }
    centers
}

/// Lloyd's algorithm under Euclidean distance from a seeded k-means++ start.
///
/// Runs until the assignment stops changing or `max_iters` assignment steps.
/// A cluster left empty is re-seeded with the point farthest from its current
/// center, taken from a cluster that has more than one member.
pub fn kmeans(table: &LatentTable, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let n = table.len();
    if n == 0 {
        return Err(Error::Empty("latent table"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(alloc::format!("k = {k} must be in 1..={n}")));
    }
    let dim = table.dim();
    let mut rng = rng::seeded(seed);
    let mut centers = plus_plus_init(table, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = closest(table.row(i), &centers);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }

        let mut counts = vec![0usize; k];
        for &c in &assignment {
            counts[c] += 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a cluster with two or more members");
            counts[assignment[donor]] -= 1;
            counts[empty] = 1;
            assignment[donor] = empty;
            dists[donor] = 0.0;
            centers[empty] = table.row(donor).iter().map(|&v| v as f64).collect();
            changed = true;
        }
        history.push(dists.iter().sum());

        let mut sums = vec![vec![0.0f64; dim]; k];
        for (i, &c) in assignment.iter().enumerate() {
            for (s, &v) in sums[c].iter_mut().zip(table.row(i)) {
                *s += v as f64;
            }
        }
        for ((center, sum), &count) in centers.iter_mut().zip(sums).zip(&counts) {
            *center = sum.into_iter().map(|s| s / count as f64).collect();
        }
        if !changed {
            break;
        }
    }

    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    let data: Vec<f32> = centers.iter().flatten().map(|&v| v as f32).collect();
    let centers = Tensor::matrix(k, dim, data)?;
    centers.ensure_finite("k-means centers")?;
    let center_sq_norms = centers.iter_rows().map(sq_norm).collect();
    Ok(ClusterModel {
        centers,
        center_sq_norms,
        assignment,
        members,
        seed,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f32]]) -> LatentTable {
        let dim = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LatentTable::new(Tensor::matrix(rows.len(), dim, data).unwrap(), "t", 0).unwrap()
    }

    /// Best 2-partition of a 1-d set by exhaustive enumeration.
    fn brute_force_two_means(xs: &[f64]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for mask in 1..(1u32 << xs.len()) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..xs.len()).map(|i| (mask >> i & 1 == 1, xs[i])).fold(
                (vec![], vec![]),
                |(mut a, mut b), (left, x)| {
                    if left {
                        a.push(x)
                    } else {
                        b.push(x)
                    }
                    (a, b)
                },
            );
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let cost: f64 =
                a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            if cost < best.0 {
                best = (cost, ma.min(mb), ma.max(mb));
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn two_clusters_match_exhaustive_partition() {
        let xs = [0.0f32, 0.1, 10.0, 10.1];
        let (lo, hi) = brute_force_two_means(&xs.map(|v| v as f64));
        assert!((lo - 0.05).abs() < 1e-6 && (hi - 10.05).abs() < 1e-6);
        for seed in 0..10 {
            let t = table(&[&[xs[0]], &[xs[1]], &[xs[2]], &[xs[3]]]);
            let m = kmeans(&t, 2, seed, 50).unwrap();
            let mut c: Vec<f64> = (0..2).map(|i| m.center(i)[0] as f64).collect();
            c.sort_by(f64::total_cmp);
            assert!((c[0] - lo).abs() < 1e-6 && (c[1] - hi).abs() < 1e-6, "{c:?}");
        }
    }

    #[test]
    fn k_equals_n_and_k_one() {
        let t = table(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0], &[0.5, 3.0]]);
        let m = kmeans(&t, 4, 7, 20).unwrap();
        for c in 0..4 {
            assert_eq!(m.members(c).len(), 1);
            assert_eq!(m.center(c), t.row(m.members(c)[0]));
        }
        let m = kmeans(&t, 1, 7, 20).unwrap();
        assert_eq!(m.center(0), &[0.875, 1.5]);
        assert!(kmeans(&t, 5, 7, 20).is_err());
        assert!(kmeans(&t, 0, 7, 20).is_err());
    }

    #[test]
    fn duplicates_still_give_k_nonempty_clusters() {
        let t = table(&[&[1.0], &[1.0], &[1.0], &[1.0], &[2.0]]);
        let m = kmeans(&t, 3, 1, 20).unwrap();
        assert!((0..3).all(|c| !m.members(c).is_empty()));
        assert!(m.assignment().iter().all(|&c| c < 3));
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20u64 {
            let mut r = rng::seeded(seed);
            let rows: Vec<Vec<f32>> = (0..120)
                .map(|_| (0..3).map(|_| r.random_range(0.0..1.0f32)).collect())
                .collect();
            let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
            let m = kmeans(&table(&refs), 6, seed, 100).unwrap();
            for w in m.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", m.objective_history);
            }
        }
    }
}
