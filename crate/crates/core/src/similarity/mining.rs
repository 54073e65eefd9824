use alloc::vec::Vec;

use rand::Rng;

use super::{check_pair, cosine_from_parts, dot, sq_norm, ClusterModel, LatentTable};
use crate::error::{Error, Result};

/// A table row together with its similarity to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborQueryResult {
    pub neighbors: Vec<Scored>,
    pub farthest: Vec<Scored>,
}

impl NeighborQueryResult {
    /// True when the least similar neighbor is at least as similar as the most
    /// similar far sample.
    pub fn is_ordered(&self) -> bool {
        let worst_near = self
            .neighbors
            .iter()
            .map(|s| s.similarity)
            .fold(f64::INFINITY, f64::min);
        let best_far = self
            .farthest
            .iter()
            .map(|s| s.similarity)
            .fold(f64::NEG_INFINITY, f64::max);
        worst_near >= best_far
    }
}

/// Clusters ranked by cosine similarity of their center to a query, most
/// similar first. The first entry is the query's home cluster.
#[derive(Clone, Debug)]
pub struct ClusterOrder {
    ranked: Vec<usize>,
}

impl ClusterOrder {
    pub fn new(query: &[f32], clusters: &ClusterModel) -> Result<Self> {
        Self::build(query, clusters, None)
    }

    /// Ranks clusters but pins `home` first, for queries whose cluster comes
    /// from a precomputed assignment.
    pub fn with_home(query: &[f32], clusters: &ClusterModel, home: usize) -> Result<Self> {
        if home >= clusters.k() {
            return Err(Error::invalid(alloc::format!("cluster {home} out of range")));
        }
        Self::build(query, clusters, Some(home))
    }

    fn build(query: &[f32], clusters: &ClusterModel, home: Option<usize>) -> Result<Self> {
        check_pair(query, clusters.center(0))?;
        let q_sq = sq_norm(query);
        let sims: Vec<f64> = (0..clusters.k())
            .map(|c| cosine_from_parts(dot(query, clusters.center(c)), q_sq, clusters.center_sq_norm(c)))
            .collect();
        let mut ranked: Vec<usize> = (0..clusters.k()).collect();
        ranked.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        if let Some(home) = home {
            ranked.retain(|&c| c != home);
            ranked.insert(0, home);
        }
        Ok(Self { ranked })
    }

    pub fn home(&self) -> usize {
        self.ranked[0]
    }

    pub fn ranked(&self) -> &[usize] {
        &self.ranked
    }
}

fn validate(query: &[f32], table: &LatentTable, t: usize) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::Empty("latent table"));
    }
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    check_pair(query, table.row(0))?;
    Ok(sq_norm(query))
}

/// Keeps the `t` best candidates under `better`, ties broken by lower index.
struct TopT {
    t: usize,
    items: Vec<Scored>,
    descending: bool,
}

impl TopT {
    fn new(t: usize, descending: bool) -> Self {
        Self {
            t,
            items: Vec::with_capacity(t + 1),
            descending,
        }
    }

    fn beats(&self, a: &Scored, b: &Scored) -> bool {
        let ord = if self.descending {
            b.similarity.total_cmp(&a.similarity)
        } else {
            a.similarity.total_cmp(&b.similarity)
        };
        ord.then(a.index.cmp(&b.index)).is_lt()
    }

    fn offer(&mut self, s: Scored) {
        if self.items.len() == self.t && !self.beats(&s, self.items.last().unwrap()) {
            return;
        }
        let pos = self
            .items
            .iter()
            .position(|x| self.beats(&s, x))
            .unwrap_or(self.items.len());
        self.items.insert(pos, s);
        self.items.truncate(self.t);
    }
}

/// The `t` rows most similar to `query`, searched in the query's home
/// cluster first and topped up from the next most similar clusters when the
/// home cluster runs short. Rows listed in `exclude` are skipped.
///
/// With a single cluster this is the exact argmax over the whole table.
pub fn nearest(
    query: &[f32],
    table: &LatentTable,
    clusters: &ClusterModel,
    order: &ClusterOrder,
    t: usize,
    exclude: &[usize],
) -> Result<Vec<Scored>> {
    let q_sq = validate(query, table, t)?;
    let mut out: Vec<Scored> = Vec::with_capacity(t);
    for &c in order.ranked() {
        let mut best = TopT::new(t - out.len(), true);
        for &i in clusters.members(c) {
            if !exclude.contains(&i) {
                best.offer(Scored {
                    index: i,
                    similarity: table.similarity_to(query, q_sq, i),
                });
            }
        }
        out.extend(best.items);
        if out.len() == t {
            return Ok(out);
        }
    }
    Err(not_enough(t, "neighbors"))
}

fn not_enough(t: usize, what: &str) -> Error {
    Error::invalid(alloc::format!("fewer than T = {t} eligible {what} in the table"))
}

/// `t` rows dissimilar to `query`.
///
/// With one cluster this is the exact argmin over the table. Otherwise `t`
/// rows are drawn uniformly without replacement from the ⌈K/4⌉ clusters whose
/// centers are least similar to the query (never the home cluster), widening
/// to further clusters only if that pool is too small.
pub fn farthest(
    query: &[f32],
    table: &LatentTable,
    clusters: &ClusterModel,
    order: &ClusterOrder,
    t: usize,
    exclude: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<Scored>> {
    let q_sq = validate(query, table, t)?;
    let k = clusters.k();
    if k == 1 {
        let mut worst = TopT::new(t, false);
        for i in 0..table.len() {
            if !exclude.contains(&i) {
                worst.offer(Scored {
                    index: i,
                    similarity: table.similarity_to(query, q_sq, i),
                });
            }
        }
        return if worst.items.len() == t {
            Ok(worst.items)
        } else {
            Err(not_enough(t, "far samples"))
        };
    }

    let quartile = k.div_ceil(4).max(1);
    let far_first: Vec<usize> = order.ranked()[1..].iter().rev().copied().collect();
    let mut pool = Vec::new();
    for (n, &c) in far_first.iter().enumerate() {
        if n >= quartile && pool.len() >= t {
            break;
        }
        pool.extend(clusters.members(c).iter().copied().filter(|i| !exclude.contains(i)));
    }
    if pool.len() < t {
        return Err(not_enough(t, "far samples"));
    }
    Ok(rand::seq::index::sample(rng, pool.len(), t)
        .into_iter()
        .map(|p| {
            let i = pool[p];
            Scored {
                index: i,
                similarity: table.similarity_to(query, q_sq, i),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::similarity::kmeans;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn random_table(n: usize, d: usize, seed: u64) -> LatentTable {
        let mut r = rng::seeded(seed);
        let data = (0..n * d).map(|_| r.random_range(0.0..1.0f32)).collect();
        LatentTable::new(Tensor::matrix(n, d, data).unwrap(), "r", 0).unwrap()
    }

    fn brute_sims(query: &[f32], table: &LatentTable) -> Vec<f64> {
        (0..table.len())
            .map(|i| crate::similarity::cosine_sim(query, table.row(i)).unwrap())
            .collect()
    }

    #[test]
    fn query_equal_to_a_row_finds_it() {
        let table = random_table(30, 4, 1);
        let clusters = kmeans(&table, 1, 0, 10).unwrap();
        let q = table.row(17).to_vec();
        let order = ClusterOrder::new(&q, &clusters).unwrap();
        let n = nearest(&q, &table, &clusters, &order, 1, &[]).unwrap();
        assert_eq!(n[0].index, 17);
        assert_eq!(n[0].similarity, 1.0);
        let n = nearest(&q, &table, &clusters, &order, 1, &[17]).unwrap();
        assert_ne!(n[0].index, 17);
    }

    #[test]
    fn clustered_neighbors_are_best_within_home_cluster() {
        for seed in 0..20 {
            let table = random_table(50, 6, seed);
            let clusters = kmeans(&table, 5, seed, 50).unwrap();
            let q = table.row(seed as usize).to_vec();
            let order = ClusterOrder::new(&q, &clusters).unwrap();
            let home = order.home();
            let n = nearest(&q, &table, &clusters, &order, 3, &[seed as usize]).unwrap();
            let sims = brute_sims(&q, &table);
            let mut in_home: Vec<f64> = clusters
                .members(home)
                .iter()
                .filter(|&&i| i != seed as usize)
                .map(|&i| sims[i])
                .collect();
            in_home.sort_by(|a, b| b.total_cmp(a));
            if in_home.len() >= 3 {
                for s in &n {
                    assert!(s.similarity >= in_home[2]);
                    assert_eq!(clusters.assignment()[s.index], home);
                }
            }
        }
    }

    #[test]
    fn small_home_cluster_is_topped_up() {
        let data = vec![1.0, 0.0, 0.0, 1.0, 0.1, 1.0, 0.2, 1.0, 0.0, 0.9];
        let table = LatentTable::new(Tensor::matrix(5, 2, data).unwrap(), "s", 0).unwrap();
        let clusters = kmeans(&table, 2, 0, 20).unwrap();
        let q = [1.0f32, 0.0];
        let order = ClusterOrder::new(&q, &clusters).unwrap();
        assert_eq!(clusters.members(order.home()), &[0]);
        let n = nearest(&q, &table, &clusters, &order, 3, &[]).unwrap();
        assert_eq!(n.len(), 3);
        assert_eq!(n[0].index, 0);
        assert!(nearest(&q, &table, &clusters, &order, 6, &[]).is_err());
    }

    #[test]
    fn far_samples_come_from_the_other_blob() {
        let mut data = Vec::new();
        for i in 0..20 {
            let e = i as f32 * 0.01;
            data.extend([1.0, e, 0.0, 0.0]);
        }
        for i in 0..20 {
            let e = i as f32 * 0.01;
            data.extend([0.0, 0.0, 1.0, e]);
        }
        let table = LatentTable::new(Tensor::matrix(40, 4, data).unwrap(), "b", 0).unwrap();
        let clusters = kmeans(&table, 2, 3, 20).unwrap();
        let q = table.row(0).to_vec();
        let order = ClusterOrder::new(&q, &clusters).unwrap();
        let far_cluster = clusters.assignment()[25];
        let f = farthest(&q, &table, &clusters, &order, 5, &[0], &mut rng::seeded(1)).unwrap();
        assert!(f.iter().all(|s| clusters.assignment()[s.index] == far_cluster));
        let again = farthest(&q, &table, &clusters, &order, 5, &[0], &mut rng::seeded(1)).unwrap();
        assert_eq!(f, again);
        let n = nearest(&q, &table, &clusters, &order, 5, &[0]).unwrap();
        let result = NeighborQueryResult {
            neighbors: n,
            farthest: f,
        };
        assert!(result.is_ordered());
    }

    #[test]
    fn pinned_home_cluster_is_never_a_far_source() {
        let table = random_table(40, 3, 9);
        let clusters = kmeans(&table, 2, 9, 20).unwrap();
        let q = table.row(0).to_vec();
        let natural = ClusterOrder::new(&q, &clusters).unwrap();
        let other = 1 - natural.home();
        let pinned = ClusterOrder::with_home(&q, &clusters, other).unwrap();
        let f = farthest(&q, &table, &clusters, &pinned, 3, &[], &mut rng::seeded(0)).unwrap();
        assert!(f.iter().all(|s| clusters.assignment()[s.index] != other));
    }

    #[test]
    fn empty_and_bad_requests() {
        let table = random_table(4, 2, 0);
        let clusters = kmeans(&table, 1, 0, 5).unwrap();
        let q = [0.5f32, 0.5];
        let order = ClusterOrder::new(&q, &clusters).unwrap();
        assert!(nearest(&q, &table, &clusters, &order, 0, &[]).is_err());
        assert!(nearest(&[0.5], &table, &clusters, &order, 1, &[]).is_err());
        assert!(farthest(&q, &table, &clusters, &order, 5, &[], &mut rng::seeded(0)).is_err());
    }
}
