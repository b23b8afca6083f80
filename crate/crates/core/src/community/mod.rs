//! Community detection over weighted undirected graphs and the smell
//! taxonomy built from it.
//!
//! The top level of the taxonomy comes from minimising the two-level map
//! equation; oversized communities are then split recursively by Louvain
//! modularity optimisation.

mod hierarchy;
mod louvain;
mod mapeq;

pub use hierarchy::{
    assign_categories, hierarchical_classify, merge_subcommunities, parse_label_map,
    parse_merge_spec, read_hierarchy, CategoryHierarchy, ClassifyConfig, HierarchyNode, MergeGroup,
    DEFAULT_SIZE_THRESHOLD, MAX_REFINE_DEPTH, ROOT_ID,
};
pub use louvain::{louvain, louvain_refine, LouvainOutcome};
pub use mapeq::{infomap_partition, infomap_partition_with, map_equation, InfomapConfig};

use crate::error::{Error, Result};

/// Undirected weighted graph with optional self-loops, nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    /// Neighbours other than the node itself, sorted by index.
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    total_weight: f64,
}

impl WeightedGraph {
    /// Parallel edges are summed; zero-weight edges are ignored.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut self_loops = vec![0.0; n];
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("edge ({u}, {v}) has weight {w}")));
            }
            if w == 0.0 {
                continue;
            }
            if u == v {
                self_loops[u] += w;
            } else {
                raw[u].push((v, w));
                raw[v].push((u, w));
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = raw
            .into_iter()
            .map(|mut nbrs| {
                nbrs.sort_by_key(|&(v, _)| v);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(nbrs.len());
                for (v, w) in nbrs {
                    match merged.last_mut() {
                        Some((lv, lw)) if *lv == v => *lw += w,
                        _ => merged.push((v, w)),
                    }
                }
                merged
            })
            .collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loops)
            .map(|(nbrs, s)| nbrs.iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * s)
            .collect();
        let total_weight = degree.iter().sum::<f64>() / 2.0;
        Ok(Self {
            adj,
            self_loops,
            degree,
            total_weight,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adj[node]
    }

    pub fn self_loop(&self, node: usize) -> f64 {
        self.self_loops[node]
    }

    /// Weighted degree; a self-loop counts twice.
    pub fn degree(&self, node: usize) -> f64 {
        self.degree[node]
    }

    /// Sum of edge weights, each edge (and self-loop) counted once.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let loops = self
            .self_loops
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, i, w));
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&(v, _)| u < v).map(move |&(v, w)| (u, v, w)))
            .chain(loops)
    }

    /// Subgraph induced by `nodes`; node `k` of the result is `nodes[k]`.
    pub fn induced(&self, nodes: &[usize]) -> WeightedGraph {
        let mut local = vec![usize::MAX; self.node_count()];
        for (k, &v) in nodes.iter().enumerate() {
            local[v] = k;
        }
        let mut edges = Vec::new();
        for (k, &u) in nodes.iter().enumerate() {
            if self.self_loops[u] > 0.0 {
                edges.push((k, k, self.self_loops[u]));
            }
            for &(v, w) in &self.adj[u] {
                let lv = local[v];
                if lv != usize::MAX && k < lv {
                    edges.push((k, lv, w));
                }
            }
        }
        WeightedGraph::new(nodes.len(), edges).expect("induced edges are in range")
    }

    /// Connected components, each sorted, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Collapse each community into one node. Internal weight becomes a
    /// self-loop, so degrees and total weight are preserved.
    pub fn aggregate(&self, membership: &[usize], communities: usize) -> WeightedGraph {
        let mut edges = Vec::new();
        for (u, v, w) in self.edges() {
            edges.push((membership[u], membership[v], w));
        }
        WeightedGraph::new(communities, edges).expect("membership ids are dense")
    }
}

/// Assignment of every node to exactly one community. Ids are dense and
/// numbered in order of first appearance, so equal partitions compare
/// equal regardless of the labels they were built from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    membership: Vec<usize>,
    count: usize,
}

impl Partition {
    pub fn from_membership(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let membership: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            count: map.len(),
            membership,
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            membership: (0..n).collect(),
            count: n,
        }
    }

    pub fn whole(n: usize) -> Self {
        Self {
            membership: vec![0; n],
            count: usize::from(n > 0),
        }
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.membership[node]
    }

    pub fn community_count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    /// Member lists indexed by community id, members ascending.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (node, &c) in self.membership.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

/// Newman–Girvan modularity of a weighted partition.
pub fn modularity(graph: &WeightedGraph, partition: &Partition) -> Result<f64> {
    if partition.len() != graph.node_count() {
        return Err(Error::invalid(format!(
            "partition covers {} nodes, graph has {}",
            partition.len(),
            graph.node_count()
        )));
    }
    let m = graph.total_weight();
    if m <= 0.0 {
        return Err(Error::invalid("modularity undefined on a zero-weight graph"));
    }
    let k = partition.community_count();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for node in 0..graph.node_count() {
        degree[partition.community_of(node)] += graph.degree(node);
    }
    for (u, v, w) in graph.edges() {
        let (cu, cv) = (partition.community_of(u), partition.community_of(v));
        if cu == cv {
            internal[cu] += w;
        }
    }
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(wc, dc)| wc / m - (dc / (2.0 * m)).powi(2))
        .sum())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Two unit-weight triangles {0,1,2} and {3,4,5} joined by edge 2–3.
    pub fn two_triangles() -> WeightedGraph {
        WeightedGraph::new(
            6,
            [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]
                .into_iter()
                .map(|(a, b)| (a, b, 1.0)),
        )
        .unwrap()
    }

    pub fn complete(n: usize) -> WeightedGraph {
        let edges = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b, 1.0)));
        WeightedGraph::new(n, edges).unwrap()
    }

    /// Every set partition of `0..n` as a restricted-growth string.
    pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            for c in 0..=max + 1 {
                prefix.push(c);
                rec(prefix, max.max(c), n, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        if n == 0 {
            return vec![vec![]];
        }
        let mut prefix = vec![0];
        rec(&mut prefix, 0, n, &mut out);
        out
    }
}
