//! Exhaustive scans to check clustered mining against.

use nre_core::rng;
use nre_core::similarity::{farthest, nearest, ClusterModel, ClusterOrder, LatentTable};
use nre_core::Tensor;
use rand::Rng;

pub fn random_table(r: &mut impl Rng, n: usize, d: usize) -> LatentTable {
    // A sprinkle of exact zeros mimics dead relu units.
    let data = (0..n * d)
        .map(|_| {
            if r.random_bool(0.2) {
                0.0
            } else {
                r.random_range(0.0..1.0f32)
            }
        })
        .collect();
    LatentTable::new(Tensor::matrix(n, d, data).unwrap(), "random", 0).unwrap()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa * bb).sqrt()).clamp(0.0, 1.0)
    }
}

/// Index of the extreme similarity, lowest index on ties.
pub fn scan(query: &[f32], table: &LatentTable, exclude: &[usize], best: bool) -> usize {
    let mut pick: Option<(usize, f64)> = None;
    for i in (0..table.len()).filter(|i| !exclude.contains(i)) {
        let s = cosine(query, table.row(i));
        let better = match pick {
            None => true,
            Some((_, p)) => (best && s > p) || (!best && s < p),
        };
        if better {
            pick = Some((i, s));
        }
    }
    pick.unwrap().0
}

/// With one cluster and `T = 1`, mined neighbors and far samples equal the
/// exhaustive argmax and argmin on `tables` random tables of at most 500 rows.
pub fn single_cluster_equivalence(tables: u64) -> Result<usize, String> {
    let mut queries = 0;
    for case in 0..tables {
        let mut r = rng::seeded(case);
        let n = r.random_range(3..=500);
        let d = r.random_range(1..=16);
        let table = random_table(&mut r, n, d);
        let clusters = ClusterModel::single(&table).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let query: Vec<f32> = (0..d).map(|_| r.random_range(0.0..1.0f32)).collect();
            let excluded = r.random_range(0..n);
            let order = ClusterOrder::new(&query, &clusters).map_err(|e| e.to_string())?;
            let near = nearest(&query, &table, &clusters, &order, 1, &[excluded]).map_err(|e| e.to_string())?;
            let want = scan(&query, &table, &[excluded], true);
            if near[0].index != want {
                return Err(format!(
                    "table {case}: nearest {} but exhaustive argmax {want}",
                    near[0].index
                ));
            }
            if near[0].similarity != cosine(&query, table.row(want)) {
                return Err(format!("table {case}: reported similarity differs from the oracle's"));
            }
            let far = farthest(&query, &table, &clusters, &order, 1, &[excluded], &mut rng::seeded(0))
                .map_err(|e| e.to_string())?;
            let want = scan(&query, &table, &[excluded], false);
            if far[0].index != want {
                return Err(format!(
                    "table {case}: farthest {} but exhaustive argmin {want}",
                    far[0].index
                ));
            }
            queries += 1;
        }
    }
    Ok(queries)
}
