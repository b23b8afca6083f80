//! Louvain modularity optimisation: greedy local moving followed by
//! aggregation, repeated until no single-node move raises modularity.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{modularity, Partition, WeightedGraph};

/// Trials run per call; the highest-modularity result is kept.
const TRIALS: usize = 8;
const MAX_SWEEPS: usize = 500;
const MAX_ROUNDS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainOutcome {
    /// Partition of the nodes passed in (indexed like the subset).
    pub partition: Partition,
    /// Modularity on the (induced) graph; `None` when it has no edges.
    pub modularity: Option<f64>,
    /// Modularity gain of each accepted move in the winning trial, then of
    /// each accepted merge step.
    pub move_gains: Vec<f64>,
}

/// Greedy single-node moves starting from `comm` (dense labels < n).
fn local_moving(
    g: &WeightedGraph,
    mut comm: Vec<usize>,
    rng: &mut ChaCha8Rng,
    gains: &mut Vec<f64>,
) -> (Vec<usize>, bool) {
    let n = g.node_count();
    let m = g.total_weight();
    let two_m = 2.0 * m;
    let eps = 1e-12 * two_m.max(1.0);
    let mut tot = vec![0.0; n];
    for v in 0..n {
        tot[comm[v]] += g.degree(v);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    let mut moved_any = false;
    for _ in 0..MAX_SWEEPS {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let k = g.degree(u);
            let from = comm[u];
            scratch.clear();
            scratch.extend(g.neighbors(u).iter().map(|&(v, w)| (comm[v], w)));
            scratch.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(scratch.len());
            for &(c, w) in &scratch {
                match merged.last_mut() {
                    Some((lc, lw)) if *lc == c => *lw += w,
                    _ => merged.push((c, w)),
                }
            }
            tot[from] -= k;
            let k_from = merged.iter().find(|(c, _)| *c == from).map_or(0.0, |&(_, w)| w);
            let stay_gain = k_from - tot[from] * k / two_m;
            let mut best: Option<(f64, usize)> = None;
            // Ascending ids: the first of equal gains (lowest id) is kept.
            for &(c, k_c) in &merged {
                if c == from {
                    continue;
                }
                let gain = k_c - tot[c] * k / two_m;
                if best.is_none_or(|(bg, _)| gain > bg + eps) {
                    best = Some((gain, c));
                }
            }
            let target = match best {
                Some((gain, c)) if gain > stay_gain + eps => {
                    gains.push((gain - stay_gain) / m);
                    moved = true;
                    moved_any = true;
                    c
                }
                _ => from,
            };
            tot[target] += k;
            comm[u] = target;
        }
        if !moved {
            break;
        }
    }
    let dense = Partition::from_membership(&comm);
    (dense.membership().to_vec(), moved_any)
}

fn community_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |c| c + 1)
}

/// Multilevel passes from `membership`: move, aggregate, repeat.
fn multilevel(g: &WeightedGraph, membership: &mut [usize], rng: &mut ChaCha8Rng, gains: &mut Vec<f64>) -> bool {
    let mut level = g.aggregate(membership, community_count(membership));
    let mut improved = false;
    loop {
        let identity = (0..level.node_count()).collect();
        let (comm, moved) = local_moving(&level, identity, rng, gains);
        if !moved {
            break;
        }
        improved = true;
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        let k = community_count(&comm);
        if k == level.node_count() {
            break;
        }
        level = level.aggregate(&comm, k);
    }
    improved
}

/// Multilevel passes alternated with node-level moves on the flattened
/// partition, so nodes can leave a community fixed at a coarser level.
fn louvain_from(
    g: &WeightedGraph,
    mut membership: Vec<usize>,
    rng: &mut ChaCha8Rng,
    gains: &mut Vec<f64>,
) -> Vec<usize> {
    for _ in 0..MAX_ROUNDS {
        let coarse = multilevel(g, &mut membership, rng, gains);
        let (fine, moved) = local_moving(g, membership, rng, gains);
        membership = fine;
        if !coarse && !moved {
            break;
        }
    }
    membership
}

/// Merge each pair of adjacent communities in turn and re-optimise; keep
/// the first strict improvement and start over. Each accepted step is
/// recorded as one gain.
fn merge_perturbation(
    g: &WeightedGraph,
    mut membership: Vec<usize>,
    mut q: f64,
    rng: &mut ChaCha8Rng,
    gains: &mut Vec<f64>,
) -> (Vec<usize>, f64) {
    for _ in 0..MAX_ROUNDS {
        let mut adjacent = std::collections::BTreeSet::new();
        for (u, v, _) in g.edges() {
            let (a, b) = (membership[u], membership[v]);
            if a != b {
                adjacent.insert((a.min(b), a.max(b)));
            }
        }
        let mut accepted = None;
        for (a, b) in adjacent {
            let merged: Vec<usize> = membership.iter().map(|&c| if c == b { a } else { c }).collect();
            let dense = Partition::from_membership(&merged).membership().to_vec();
            let cand = louvain_from(g, dense, rng, &mut Vec::new());
            let cq = modularity(g, &Partition::from_membership(&cand)).expect("positive total weight");
            if cq > q + 1e-12 {
                accepted = Some((cand, cq));
                break;
            }
        }
        match accepted {
            Some((cand, cq)) => {
                gains.push(cq - q);
                membership = cand;
                q = cq;
            }
            None => break,
        }
    }
    (membership, q)
}

/// Louvain on the whole graph.
pub fn louvain(graph: &WeightedGraph, seed: u64) -> LouvainOutcome {
    let n = graph.node_count();
    if graph.total_weight() <= 0.0 {
        if n > 0 {
            log::warn!("louvain on an edgeless graph of {n} nodes: every node is its own community");
        }
        return LouvainOutcome {
            partition: Partition::singletons(n),
            modularity: None,
            move_gains: Vec::new(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Partition, Vec<f64>)> = None;
    for _ in 0..TRIALS {
        let mut gains = Vec::new();
        let membership = louvain_from(graph, (0..n).collect(), &mut rng, &mut gains);
        let p = Partition::from_membership(&membership);
        let q = modularity(graph, &p).expect("positive total weight");
        if best.as_ref().is_none_or(|(bq, _, _)| q > bq + 1e-12) {
            best = Some((q, p, gains));
        }
    }
    let (q, partition, mut move_gains) = best.expect("at least one trial");
    let (membership, q) = merge_perturbation(graph, partition.membership().to_vec(), q, &mut rng, &mut move_gains);
    let partition = Partition::from_membership(&membership);
    LouvainOutcome {
        partition,
        modularity: Some(q),
        move_gains,
    }
}

/// Louvain on the subgraph induced by `subset`. The returned partition is
/// indexed by position in `subset`.
pub fn louvain_refine(graph: &WeightedGraph, subset: &[usize], seed: u64) -> LouvainOutcome {
    louvain(&graph.induced(subset), seed)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use rand::Rng;

    fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64, max_w: u32) -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((a, b, rng.gen_range(1..max_w) as f64));
                }
            }
        }
        edges
    }

    fn brute_force_best(g: &WeightedGraph) -> (f64, Partition) {
        all_partitions(g.node_count())
            .into_iter()
            .map(|l| {
                let p = Partition::from_membership(&l);
                (modularity(g, &p).unwrap(), p)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
    }

    #[test]
    fn two_triangles_induced() {
        // Embed the two triangles in a larger graph and refine just them.
        let mut edges: Vec<(usize, usize, f64)> = two_triangles().edges().collect();
        edges.push((5, 6, 1.0));
        edges.push((6, 7, 1.0));
        let g = WeightedGraph::new(8, edges).unwrap();
        let out = louvain_refine(&g, &[0, 1, 2, 3, 4, 5], 1);
        assert_eq!(out.partition, Partition::from_membership(&[0, 0, 0, 1, 1, 1]));
        let (opt, best) = brute_force_best(&two_triangles());
        assert_eq!(best, out.partition);
        assert!((out.modularity.unwrap() - opt).abs() < 1e-12);
        assert!((opt - 0.3571).abs() < 1e-4);
    }

    #[test]
    fn star_matches_brute_force() {
        let star = WeightedGraph::new(4, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        let (opt, _) = brute_force_best(&star);
        let out = louvain(&star, 0);
        assert!((out.modularity.unwrap() - opt).abs() < 1e-12);
        // Every partition of a star has Q <= 0; one community attains it.
        assert!(opt.abs() < 1e-12);
    }

    #[test]
    fn single_edge_is_one_community() {
        let g = WeightedGraph::new(2, [(0, 1, 1.0)]).unwrap();
        let together = modularity(&g, &Partition::whole(2)).unwrap();
        let apart = modularity(&g, &Partition::singletons(2)).unwrap();
        assert!(together > apart);
        assert_eq!(louvain(&g, 0).partition, Partition::whole(2));
    }

    #[test]
    fn edgeless_subset_gives_singletons() {
        let g = WeightedGraph::new(4, [(0, 1, 1.0)]).unwrap();
        let out = louvain_refine(&g, &[1, 2, 3], 0);
        assert_eq!(out.partition, Partition::singletons(3));
        assert_eq!(out.modularity, None);
    }

    #[test]
    fn moves_strictly_improve() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..30 {
            let n = rng.gen_range(3..25);
            let edges = random_edges(&mut rng, n, 0.25, 5);
            let g = WeightedGraph::new(n, edges).unwrap();
            if g.total_weight() == 0.0 {
                continue;
            }
            let out = louvain(&g, seed);
            assert!(out.move_gains.iter().all(|&d| d > 0.0));
            let q0 = modularity(&g, &Partition::singletons(n)).unwrap();
            let q1 = out.modularity.unwrap();
            assert!(q1 >= q0);
            let summed: f64 = out.move_gains.iter().sum();
            assert!((q1 - q0 - summed).abs() < 1e-9, "{q1} - {q0} != {summed}");
        }
    }

    #[test]
    fn near_optimal_on_small_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 40 {
            let n = rng.gen_range(2..=8);
            let edges = random_edges(&mut rng, n, 0.4, 4);
            let g = WeightedGraph::new(n, edges).unwrap();
            if g.total_weight() == 0.0 {
                continue;
            }
            let (opt, _) = brute_force_best(&g);
            let got = louvain(&g, checked as u64).modularity.unwrap();
            assert!(got >= 0.95 * opt - 1e-12, "{got} vs {opt}");
            checked += 1;
        }
    }
}
