//! URL pools with prescribed pairwise overlap between simulated engines.
//!
//! Each engine's pool is a union of *blocks*; a block is a run of items shared
//! by a fixed subset of engines. Blocks are allocated greedily from the
//! largest engine subsets down to pairs, then each engine is topped up with a
//! private block. Within a pool, blocks are interleaved by smooth weighted
//! round robin so that shared items appear in the same relative order in
//! every engine that carries them.

use std::collections::BTreeMap;

use super::SimError;
use crate::ids::{EngineId, QueryId};
use crate::seed::mix64;

/// Requested pool layout. `overlap[i][j]` is the fraction of a pool shared by
/// engines `i` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRequest {
    pub engines: Vec<EngineId>,
    pub pool_size: usize,
    pub overlap: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolBlock {
    /// Bitmask over `PoolRequest::engines`.
    pub members: u64,
    pub size: usize,
}

/// One abstract pool item: the `index`-th item of block `block`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PoolItem {
    pub block: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolAssignment {
    pub engines: Vec<EngineId>,
    pub blocks: Vec<PoolBlock>,
    /// Ordered pool per engine, aligned with `engines`.
    pub pools: Vec<Vec<PoolItem>>,
}

const MAX_ENGINES: usize = 16;
const TOLERANCE: f64 = 1e-9;

fn validate(req: &PoolRequest) -> Result<Vec<Vec<usize>>, SimError> {
    let n = req.engines.len();
    if n == 0 || n > MAX_ENGINES {
        return Err(SimError::InvalidSpec(format!(
            "pool request needs 1..={MAX_ENGINES} engines, got {n}"
        )));
    }
    if req.pool_size == 0 {
        return Err(SimError::InvalidSpec("pool size must be positive".into()));
    }
    if req.overlap.len() != n || req.overlap.iter().any(|row| row.len() != n) {
        return Err(SimError::InvalidSpec(format!("overlap matrix must be {n}x{n}")));
    }
    let mut targets = vec![vec![0usize; n]; n];
    for (i, row) in targets.iter_mut().enumerate() {
        for (j, t) in row.iter_mut().enumerate() {
            let o = req.overlap[i][j];
            if !(0.0..=1.0).contains(&o) {
                return Err(SimError::InvalidSpec(format!(
                    "overlap {} / {} = {o} outside [0, 1]",
                    req.engines[i], req.engines[j]
                )));
            }
            if (o - req.overlap[j][i]).abs() > TOLERANCE {
                return Err(SimError::InvalidSpec(format!(
                    "overlap matrix not symmetric at {} / {}",
                    req.engines[i], req.engines[j]
                )));
            }
            *t = if i == j {
                req.pool_size
            } else {
                (o * req.pool_size as f64).round() as usize
            };
        }
    }
    Ok(targets)
}

fn triple(req: &PoolRequest, i: usize, j: usize, k: usize) -> (EngineId, EngineId, EngineId) {
    (
        req.engines[i].clone(),
        req.engines[j].clone(),
        req.engines[k].clone(),
    )
}

/// Builds pools whose pairwise intersections match the requested fractions
/// to within one item.
pub fn cross_engine_pools(req: &PoolRequest) -> Result<PoolAssignment, SimError> {
    let targets = validate(req)?;
    let n = req.engines.len();
    let size = req.pool_size;

    // |A∩B| + |A∩C| ≤ |A| + |A∩B∩C| ≤ |A| + |B∩C|
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                if targets[i][j] + targets[i][k] > size + targets[j][k] {
                    return Err(SimError::Infeasible {
                        triple: triple(req, i, j, k),
                        detail: format!(
                            "{} shares {} with {} and {} with {}, forcing at least {} shared by the latter two (requested {})",
                            req.engines[i],
                            targets[i][j],
                            req.engines[j],
                            targets[i][k],
                            req.engines[k],
                            targets[i][j] + targets[i][k] - size,
                            targets[j][k]
                        ),
                    });
                }
            }
        }
    }

    let mut remaining = targets.clone();
    let mut capacity = vec![size; n];
    let mut blocks = Vec::new();

    let mut subsets: Vec<u64> = (1u64..(1u64 << n)).filter(|m| m.count_ones() >= 2).collect();
    subsets.sort_by(|a, b| b.count_ones().cmp(&a.count_ones()).then(a.cmp(b)));
    for mask in subsets {
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut x = members.iter().map(|&i| capacity[i]).min().unwrap_or(0);
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                x = x.min(remaining[i][j]);
            }
        }
        if x == 0 {
            continue;
        }
        for (a, &i) in members.iter().enumerate() {
            capacity[i] -= x;
            for &j in &members[a + 1..] {
                remaining[i][j] -= x;
                remaining[j][i] -= x;
            }
        }
        blocks.push(PoolBlock { members: mask, size: x });
    }
    for (i, &cap) in capacity.iter().enumerate() {
        if cap > 0 {
            blocks.push(PoolBlock {
                members: 1 << i,
                size: cap,
            });
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            if remaining[i][j] > 1 {
                let k = (0..n).find(|&k| k != i && k != j).unwrap_or(i);
                return Err(SimError::Infeasible {
                    triple: triple(req, i, j, k),
                    detail: format!(
                        "could only place {} of {} shared items between {} and {}",
                        targets[i][j] - remaining[i][j],
                        targets[i][j],
                        req.engines[i],
                        req.engines[j]
                    ),
                });
            }
        }
    }

    let pools = (0..n).map(|e| interleave(&blocks, e)).collect();
    Ok(PoolAssignment {
        engines: req.engines.clone(),
        blocks,
        pools,
    })
}

/// Smooth weighted round robin over the blocks carrying `engine`.
fn interleave(blocks: &[PoolBlock], engine: usize) -> Vec<PoolItem> {
    let mine: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.members & (1 << engine) != 0)
        .map(|(i, b)| (i, b.size))
        .collect();
    let total: usize = mine.iter().map(|(_, s)| s).sum();
    let mut taken = vec![0usize; mine.len()];
    let mut out = Vec::with_capacity(total);
    for t in 1..=total {
        let pick = (0..mine.len())
            .filter(|&k| taken[k] < mine[k].1)
            .max_by(|&a, &b| {
                let da = (t * mine[a].1) as f64 / total as f64 - taken[a] as f64;
                let db = (t * mine[b].1) as f64 / total as f64 - taken[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .expect("items remain while t <= total");
        out.push(PoolItem {
            block: mine[pick].0,
            index: taken[pick],
        });
        taken[pick] += 1;
    }
    out
}

/// Lowercase, hyphen-separated form of a query for use in URL paths.
pub fn query_slug(query: &QueryId) -> String {
    let mut slug = String::new();
    for c in query.as_str().chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('-') && !slug.is_empty() {
            slug.push('-');
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    if slug.is_empty() {
        slug.push('q');
    }
    slug
}

impl PoolAssignment {
    /// Materialises every pool as URLs for `query`. Item domains are drawn
    /// from `domains` by a fixed hash of the item identity.
    pub fn urls_for(&self, query: &QueryId, domains: &[String]) -> BTreeMap<EngineId, Vec<String>> {
        let slug = query_slug(query);
        let url = |item: &PoolItem| {
            let mask = self.blocks[item.block].members;
            let domain = if domains.is_empty() {
                format!("site{}.test", item.block)
            } else {
                let h = mix64(mask ^ mix64(item.index as u64));
                domains[(h % domains.len() as u64) as usize].clone()
            };
            format!("https://{domain}/{slug}/b{mask:x}-{}", item.index)
        };
        self.engines
            .iter()
            .zip(&self.pools)
            .map(|(e, pool)| (e.clone(), pool.iter().map(url).collect()))
            .collect()
    }

    pub fn shared(&self, i: usize, j: usize) -> usize {
        let a: std::collections::HashSet<_> = self.pools[i].iter().collect();
        self.pools[j].iter().filter(|x| a.contains(x)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(n: usize, size: usize, o: f64) -> PoolRequest {
        PoolRequest {
            engines: (0..n).map(|i| EngineId::new(format!("e{i}"))).collect(),
            pool_size: size,
            overlap: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { o }).collect())
                .collect(),
        }
    }

    /// Counting oracle: intersect the materialised URL lists directly.
    fn url_intersection(a: &[String], b: &[String]) -> usize {
        a.iter().filter(|u| b.contains(u)).count()
    }

    #[test]
    fn full_overlap_gives_identical_pools() {
        let out = cross_engine_pools(&req(2, 60, 1.0)).unwrap();
        let urls = out.urls_for(&QueryId::new("q"), &[]);
        assert_eq!(urls[&EngineId::new("e0")], urls[&EngineId::new("e1")]);
    }

    #[test]
    fn zero_overlap_gives_disjoint_pools() {
        let out = cross_engine_pools(&req(2, 60, 0.0)).unwrap();
        let urls = out.urls_for(&QueryId::new("q"), &[]);
        assert_eq!(
            url_intersection(&urls[&EngineId::new("e0")], &urls[&EngineId::new("e1")]),
            0
        );
    }

    #[test]
    fn three_engines_half_overlap() {
        let out = cross_engine_pools(&req(3, 100, 0.5)).unwrap();
        let urls = out.urls_for(&QueryId::new("us elections"), &["a.test".into()]);
        let pools: Vec<&Vec<String>> = urls.values().collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let shared = url_intersection(pools[i], pools[j]);
            assert!((49..=51).contains(&shared), "{i},{j}: {shared}");
        }
        assert!(pools.iter().all(|p| p.len() == 100));
    }

    #[test]
    fn mixed_matrix_within_one_item() {
        let engines: Vec<EngineId> = ["a", "b", "c", "d"].map(EngineId::new).to_vec();
        let o = vec![
            vec![1.0, 0.45, 0.1, 0.2],
            vec![0.45, 1.0, 0.15, 0.3],
            vec![0.1, 0.15, 1.0, 0.05],
            vec![0.2, 0.3, 0.05, 1.0],
        ];
        let r = PoolRequest {
            engines,
            pool_size: 120,
            overlap: o.clone(),
        };
        let out = cross_engine_pools(&r).unwrap();
        for (i, row) in o.iter().enumerate() {
            assert_eq!(out.pools[i].len(), 120);
            for (j, x) in row.iter().enumerate() {
                if i != j {
                    let want = x * 120.0;
                    assert!((out.shared(i, j) as f64 - want).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_triangle_is_reported() {
        let mut r = req(3, 100, 0.0);
        r.overlap[0][1] = 0.9;
        r.overlap[1][0] = 0.9;
        r.overlap[0][2] = 0.9;
        r.overlap[2][0] = 0.9;
        match cross_engine_pools(&r) {
            Err(SimError::Infeasible { triple, .. }) => {
                assert_eq!(triple.0, EngineId::new("e0"));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let mut r = req(2, 10, 0.5);
        r.overlap[0][1] = 0.4;
        assert!(matches!(cross_engine_pools(&r), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn shared_items_keep_relative_order() {
        let out = cross_engine_pools(&req(2, 100, 0.5)).unwrap();
        let shared_in = |e: usize| -> Vec<PoolItem> {
            out.pools[e]
                .iter()
                .copied()
                .filter(|it| out.blocks[it.block].members == 0b11)
                .collect()
        };
        assert_eq!(shared_in(0), shared_in(1));
        // half of each 50-prefix is shared
        let top: Vec<_> = out.pools[0][..50]
            .iter()
            .filter(|it| out.blocks[it.block].members == 0b11)
            .collect();
        assert_eq!(top.len(), 25);
    }

    #[test]
    fn slugs() {
        assert_eq!(query_slug(&QueryId::new("US Elections")), "us-elections");
        assert_eq!(query_slug(&QueryId::new("  !! ")), "q");
    }
}
