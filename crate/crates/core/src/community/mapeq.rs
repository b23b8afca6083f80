//! Two-level map equation and a greedy optimiser for it.
//!
//! Visit rates of the random walker are proportional to weighted degree,
//! which is the exact stationary distribution on an undirected graph, so
//! no power iteration is needed. A module's exit rate is the flow on the
//! edges leaving it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Partition, WeightedGraph};
use crate::error::{Error, Result};

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Description length in bits of a random walk on `graph` coded with the
/// modules of `partition`:
///
/// `L = q·H(Q) + Σ_i p_i·H(P_i)`
///
/// For a graph without edges every node is visited uniformly and no module
/// is ever exited.
pub fn map_equation(graph: &WeightedGraph, partition: &Partition) -> Result<f64> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::invalid("map equation of an empty graph"));
    }
    if partition.len() != n {
        return Err(Error::invalid(format!(
            "partition covers {} nodes, graph has {n}",
            partition.len()
        )));
    }
    let two_m = 2.0 * graph.total_weight();
    let flow: Vec<f64> = if two_m > 0.0 {
        (0..n).map(|v| graph.degree(v) / two_m).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let k = partition.community_count();
    let mut module_flow = vec![0.0; k];
    let mut exit = vec![0.0; k];
    for v in 0..n {
        module_flow[partition.community_of(v)] += flow[v];
    }
    if two_m > 0.0 {
        for (u, v, w) in graph.edges() {
            let (cu, cv) = (partition.community_of(u), partition.community_of(v));
            if cu != cv {
                exit[cu] += w / two_m;
                exit[cv] += w / two_m;
            }
        }
    }
    let total_exit: f64 = exit.iter().sum();
    let l = plogp(total_exit) - 2.0 * exit.iter().copied().map(plogp).sum::<f64>()
        - flow.iter().copied().map(plogp).sum::<f64>()
        + exit
            .iter()
            .zip(&module_flow)
            .map(|(q, p)| plogp(q + p))
            .sum::<f64>();
    Ok(l.max(0.0))
}

#[derive(Debug, Clone)]
pub struct InfomapConfig {
    /// Independent optimisation runs; the shortest code wins.
    pub trials: usize,
    /// Cap on sweeps over all nodes within one local-moving phase.
    pub max_sweeps: usize,
}

impl Default for InfomapConfig {
    fn default() -> Self {
        Self {
            trials: 8,
            max_sweeps: 200,
        }
    }
}

/// Flow network at one aggregation level.
#[derive(Debug, Clone)]
struct FlowGraph {
    flow: Vec<f64>,
    /// Flow leaving the node to other nodes.
    out: Vec<f64>,
    /// Per-direction flow on each edge to another node.
    adj: Vec<Vec<(usize, f64)>>,
}

impl FlowGraph {
    fn from_graph(g: &WeightedGraph) -> Self {
        let two_m = 2.0 * g.total_weight();
        let adj: Vec<Vec<(usize, f64)>> = (0..g.node_count())
            .map(|u| g.neighbors(u).iter().map(|&(v, w)| (v, w / two_m)).collect())
            .collect();
        let out = adj.iter().map(|n| n.iter().map(|&(_, f)| f).sum()).collect();
        let flow = (0..g.node_count()).map(|u| g.degree(u) / two_m).collect();
        Self { flow, out, adj }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    fn aggregate(&self, modules: &[usize], k: usize) -> FlowGraph {
        let mut flow = vec![0.0; k];
        let mut acc: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        for u in 0..self.len() {
            let mu = modules[u];
            flow[mu] += self.flow[u];
            for &(v, f) in &self.adj[u] {
                let mv = modules[v];
                if mu != mv {
                    *acc[mu].entry(mv).or_insert(0.0) += f;
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        let out = adj.iter().map(|n| n.iter().map(|&(_, f)| f).sum()).collect();
        FlowGraph { flow, out, adj }
    }

    /// Codelength without the constant node-entropy term.
    fn module_codelength(&self, modules: &[usize]) -> f64 {
        let k = modules.iter().copied().max().map_or(0, |m| m + 1);
        let mut state = ModuleState::new(self, modules, k);
        state.refresh();
        state.codelength()
    }
}

struct ModuleState {
    flow: Vec<f64>,
    exit: Vec<f64>,
    members: Vec<usize>,
    sum_exit: f64,
    sum_plogp_exit: f64,
    sum_plogp_exit_flow: f64,
}

impl ModuleState {
    fn new(g: &FlowGraph, modules: &[usize], k: usize) -> Self {
        let mut flow = vec![0.0; k];
        let mut exit = vec![0.0; k];
        let mut members = vec![0; k];
        for u in 0..g.len() {
            let m = modules[u];
            flow[m] += g.flow[u];
            members[m] += 1;
            exit[m] += g.out[u];
            for &(v, f) in &g.adj[u] {
                if modules[v] == m {
                    exit[m] -= f;
                }
            }
        }
        let mut s = Self {
            flow,
            exit,
            members,
            sum_exit: 0.0,
            sum_plogp_exit: 0.0,
            sum_plogp_exit_flow: 0.0,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        for e in self.exit.iter_mut() {
            *e = e.max(0.0);
        }
        self.sum_exit = self.exit.iter().sum();
        self.sum_plogp_exit = self.exit.iter().copied().map(plogp).sum();
        self.sum_plogp_exit_flow = self
            .exit
            .iter()
            .zip(&self.flow)
            .map(|(q, p)| plogp(q + p))
            .sum();
    }

    fn codelength(&self) -> f64 {
        plogp(self.sum_exit) - 2.0 * self.sum_plogp_exit + self.sum_plogp_exit_flow
    }

    /// Codelength change and new module values if `node` moves from
    /// `from` to `to`, given its edge flow into each.
    #[allow(clippy::too_many_arguments)]
    fn move_delta(
        &self,
        node_flow: f64,
        node_out: f64,
        from: usize,
        to: usize,
        flow_to_from: f64,
        flow_to_to: f64,
    ) -> (f64, [f64; 4]) {
        let exit_from = (self.exit[from] - node_out + 2.0 * flow_to_from).max(0.0);
        let exit_to = (self.exit[to] + node_out - 2.0 * flow_to_to).max(0.0);
        let flow_from = self.flow[from] - node_flow;
        let flow_to = self.flow[to] + node_flow;
        let sum_exit = self.sum_exit - self.exit[from] - self.exit[to] + exit_from + exit_to;
        let sum_plogp_exit = self.sum_plogp_exit - plogp(self.exit[from]) - plogp(self.exit[to])
            + plogp(exit_from)
            + plogp(exit_to);
        let sum_plogp_exit_flow = self.sum_plogp_exit_flow
            - plogp(self.exit[from] + self.flow[from])
            - plogp(self.exit[to] + self.flow[to])
            + plogp(exit_from + flow_from)
            + plogp(exit_to + flow_to);
        let new = plogp(sum_exit) - 2.0 * sum_plogp_exit + sum_plogp_exit_flow;
        (new - self.codelength(), [exit_from, exit_to, flow_from, flow_to])
    }
}

const IMPROVEMENT_EPS: f64 = 1e-10;

/// Greedy single-node moves starting from `init`. Returns dense module
/// ids and whether anything moved.
fn local_moves(
    g: &FlowGraph,
    init: &[usize],
    rng: &mut ChaCha8Rng,
    max_sweeps: usize,
) -> (Vec<usize>, bool) {
    let n = g.len();
    let mut modules = init.to_vec();
    let mut state = ModuleState::new(g, &modules, n);
    let mut empty: std::collections::BTreeSet<usize> =
        (0..n).filter(|&m| state.members[m] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut moved_any = false;
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for _ in 0..max_sweeps {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let from = modules[u];
            weights.clear();
            for &(v, f) in &g.adj[u] {
                weights.push((modules[v], f));
            }
            weights.sort_by_key(|&(m, _)| m);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(weights.len() + 1);
            for &(m, f) in &weights {
                match merged.last_mut() {
                    Some((lm, lf)) if *lm == m => *lf += f,
                    _ => merged.push((m, f)),
                }
            }
            let flow_to_from = merged
                .iter()
                .find(|(m, _)| *m == from)
                .map_or(0.0, |&(_, f)| f);
            if state.members[from] > 1 {
                if let Some(&e) = empty.iter().next() {
                    let pos = merged.partition_point(|&(m, _)| m < e);
                    merged.insert(pos, (e, 0.0));
                }
            }
            let mut best: Option<(f64, usize, [f64; 4])> = None;
            for &(to, flow_to_to) in &merged {
                if to == from {
                    continue;
                }
                let (delta, vals) =
                    state.move_delta(g.flow[u], g.out[u], from, to, flow_to_from, flow_to_to);
                if best.is_none_or(|(d, _, _)| delta < d - 1e-15) {
                    best = Some((delta, to, vals));
                }
            }
            if let Some((delta, to, [exit_from, exit_to, flow_from, flow_to])) = best {
                if delta < -IMPROVEMENT_EPS {
                    state.sum_exit += exit_from + exit_to - state.exit[from] - state.exit[to];
                    state.sum_plogp_exit += plogp(exit_from) + plogp(exit_to)
                        - plogp(state.exit[from])
                        - plogp(state.exit[to]);
                    state.sum_plogp_exit_flow += plogp(exit_from + flow_from)
                        + plogp(exit_to + flow_to)
                        - plogp(state.exit[from] + state.flow[from])
                        - plogp(state.exit[to] + state.flow[to]);
                    state.exit[from] = exit_from;
                    state.exit[to] = exit_to;
                    state.flow[from] = flow_from;
                    state.flow[to] = flow_to;
                    state.members[from] -= 1;
                    state.members[to] += 1;
                    if state.members[from] == 0 {
                        empty.insert(from);
                    }
                    empty.remove(&to);
                    modules[u] = to;
                    moved = true;
                    moved_any = true;
                }
            }
        }
        // Keep the running sums from drifting.
        state.refresh();
        if !moved {
            break;
        }
    }
    let dense = Partition::from_membership(&modules);
    (dense.membership().to_vec(), moved_any)
}

/// Local moving followed by repeated aggregation, starting from `init` on
/// the base level. Returns module ids of the base nodes.
fn coarse_tune(g: &FlowGraph, init: &[usize], rng: &mut ChaCha8Rng, cfg: &InfomapConfig) -> Vec<usize> {
    let (mut membership, _) = local_moves(g, init, rng, cfg.max_sweeps);
    let mut k = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut level = g.aggregate(&membership, k);
    while k > 1 {
        let identity: Vec<usize> = (0..k).collect();
        let (modules, moved) = local_moves(&level, &identity, rng, cfg.max_sweeps);
        if !moved {
            break;
        }
        let next_k = modules.iter().copied().max().map_or(0, |m| m + 1);
        for m in membership.iter_mut() {
            *m = modules[*m];
        }
        if next_k == k {
            break;
        }
        k = next_k;
        level = level.aggregate(&modules, k);
    }
    membership
}

fn optimize_component(g: &FlowGraph, rng: &mut ChaCha8Rng, cfg: &InfomapConfig) -> Vec<usize> {
    let n = g.len();
    let whole = vec![0; n];
    let mut best = whole.clone();
    let mut best_len = g.module_codelength(&whole);
    for _ in 0..cfg.trials.max(1) {
        let singletons: Vec<usize> = (0..n).collect();
        let mut current = coarse_tune(g, &singletons, rng, cfg);
        let mut current_len = g.module_codelength(&current);
        // Re-run from the found modules so single nodes can still switch.
        for _ in 0..10 {
            let refined = coarse_tune(g, &current, rng, cfg);
            let refined_len = g.module_codelength(&refined);
            if refined_len < current_len - IMPROVEMENT_EPS {
                current = refined;
                current_len = refined_len;
            } else {
                break;
            }
        }
        if current_len < best_len - IMPROVEMENT_EPS {
            best = current;
            best_len = current_len;
        }
    }
    best
}

/// Partition minimising the two-level map equation.
///
/// Each connected component is optimised on its own; isolated nodes end
/// up in singleton communities. Deterministic for a fixed `seed`.
pub fn infomap_partition(graph: &WeightedGraph, seed: u64) -> Partition {
    infomap_partition_with(graph, seed, &InfomapConfig::default())
}

pub fn infomap_partition_with(graph: &WeightedGraph, seed: u64, cfg: &InfomapConfig) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0usize; graph.node_count()];
    let mut next = 0;
    for comp in graph.components() {
        let sub = graph.induced(&comp);
        let local = if comp.len() < 2 || sub.total_weight() <= 0.0 {
            (0..comp.len()).collect()
        } else {
            optimize_component(&FlowGraph::from_graph(&sub), &mut rng, cfg)
        };
        let k = local.iter().copied().max().map_or(0, |m| m + 1);
        for (&node, &m) in comp.iter().zip(&local) {
            labels[node] = next + m;
        }
        next += k;
    }
    Partition::from_membership(&labels)
}
