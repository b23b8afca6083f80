//! Smell-word co-occurrence network.
//!
//! Each item contributes its *set* of matched words: every unordered pair
//! in the set adds one to that pair's edge weight, and every word adds one
//! to its occurrence count. Repeated words inside one item count once.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::Serialize;

use crate::community::WeightedGraph;
use crate::error::{Error, Result};

/// Mergeable partial counts, e.g. one per shard of the item stream.
///
/// `merge` is associative and commutative, so shards can be combined in
/// any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    nodes: BTreeMap<String, u64>,
    edges: BTreeMap<(String, String), u64>,
}

impl CooccurrenceCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_item<S: AsRef<str>>(&mut self, terms: impl IntoIterator<Item = S>) {
        let words: Vec<String> = terms
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (i, a) in words.iter().enumerate() {
            *self.nodes.entry(a.clone()).or_insert(0) += 1;
            for b in &words[i + 1..] {
                *self.edges.entry((a.clone(), b.clone())).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CooccurrenceCounts) {
        for (w, c) in &other.nodes {
            *self.nodes.entry(w.clone()).or_insert(0) += c;
        }
        for (k, c) in &other.edges {
            *self.edges.entry(k.clone()).or_insert(0) += c;
        }
    }

    /// Freeze into a graph, dropping edges lighter than `min_weight`.
    /// Words keep their node even when all their edges are dropped.
    pub fn finish(self, min_weight: u64) -> CooccurrenceGraph {
        let words: Vec<String> = self.nodes.keys().cloned().collect();
        let counts: Vec<u64> = self.nodes.values().copied().collect();
        let index: BTreeMap<&str, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|(_, &w)| w >= min_weight.max(1))
            .map(|((a, b), &w)| (index[a.as_str()], index[b.as_str()], w))
            .collect();
        CooccurrenceGraph {
            words,
            counts,
            edges,
        }
    }
}

/// Weighted undirected word graph. Words are sorted, so the node order
/// does not depend on the order items arrived in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    words: Vec<String>,
    counts: Vec<u64>,
    /// `(a, b, weight)` with `a < b`, sorted.
    edges: Vec<(usize, usize, u64)>,
}

/// Build the graph from per-item matched word sets.
pub fn build_cooccurrence<I, T, S>(term_sets: I, min_weight: u64) -> CooccurrenceGraph
where
    I: IntoIterator<Item = T>,
    T: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = CooccurrenceCounts::new();
    for set in term_sets {
        counts.add_item(set);
    }
    counts.finish(min_weight)
}

impl CooccurrenceGraph {
    /// Graph from explicit weighted word pairs; pairs are merged by sum.
    pub fn from_weighted_pairs<S: AsRef<str>>(
        words: impl IntoIterator<Item = (S, u64)>,
        pairs: impl IntoIterator<Item = (S, S, u64)>,
    ) -> Result<Self> {
        let mut counts = CooccurrenceCounts::new();
        for (w, c) in words {
            *counts.nodes.entry(w.as_ref().to_string()).or_insert(0) += c;
        }
        for (a, b, w) in pairs {
            let (a, b) = (a.as_ref().to_string(), b.as_ref().to_string());
            if a == b {
                return Err(Error::Validation(format!("self-loop on {a:?}")));
            }
            if w == 0 {
                return Err(Error::Validation(format!("zero weight on {a:?}-{b:?}")));
            }
            for x in [&a, &b] {
                if !counts.nodes.contains_key(x) {
                    return Err(Error::Validation(format!("edge references unknown word {x:?}")));
                }
            }
            let key = if a < b { (a, b) } else { (b, a) };
            *counts.edges.entry(key).or_insert(0) += w;
        }
        Ok(counts.finish(1))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }

    pub fn node_count(&self) -> usize {
        self.words.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn occurrences(&self, word: &str) -> Option<u64> {
        self.word_index(word).map(|i| self.counts[i])
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.edges
            .iter()
            .map(|&(a, b, w)| (self.words[a].as_str(), self.words[b].as_str(), w))
    }

    pub fn weight(&self, a: &str, b: &str) -> u64 {
        let (Some(i), Some(j)) = (self.word_index(a), self.word_index(b)) else {
            return 0;
        };
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|&(x, y, _)| (x, y).cmp(&key))
            .map(|k| self.edges[k].2)
            .unwrap_or(0)
    }

    /// Numeric view for the clustering algorithms; node `i` is `words()[i]`.
    pub fn to_weighted(&self) -> WeightedGraph {
        WeightedGraph::new(
            self.words.len(),
            self.edges.iter().map(|&(a, b, w)| (a, b, w as f64)),
        )
        .expect("co-occurrence edges are in range")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub total_weight: u64,
    pub weighted_degree: BTreeMap<String, u64>,
}

pub fn graph_stats(graph: &CooccurrenceGraph) -> GraphStats {
    let mut weighted_degree: BTreeMap<String, u64> =
        graph.words.iter().map(|w| (w.clone(), 0)).collect();
    let mut total_weight = 0;
    for (a, b, w) in graph.edges() {
        total_weight += w;
        *weighted_degree.get_mut(a).unwrap() += w;
        *weighted_degree.get_mut(b).unwrap() += w;
    }
    GraphStats {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        total_weight,
        weighted_degree,
    }
}

pub fn write_edges<W: Write>(writer: W, graph: &CooccurrenceGraph) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["word_a", "word_b", "weight"])?;
    for (a, b, w) in graph.edges() {
        wtr.write_record([a, b, &w.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<edge writer>", e))?;
    Ok(())
}

pub fn write_nodes<W: Write>(writer: W, graph: &CooccurrenceGraph) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["word", "count"])?;
    for (w, c) in graph.words.iter().zip(&graph.counts) {
        wtr.write_record([w, &c.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<node writer>", e))?;
    Ok(())
}

fn check_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::Parse(format!("expected header {}", want.join(","))));
    }
    Ok(())
}

/// Read the node CSV (`word,count`) and edge CSV (`word_a,word_b,weight`).
pub fn parse_graph<R1: Read, R2: Read>(nodes: R1, edges: R2) -> Result<CooccurrenceGraph> {
    let mut rdr = csv::Reader::from_reader(nodes);
    check_header(&mut rdr, &["word", "count"])?;
    let mut words = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let count: u64 = rec[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad node count {:?}", &rec[1])))?;
        if rec[0].is_empty() {
            return Err(Error::Parse("empty word in node list".into()));
        }
        words.push((rec[0].to_string(), count));
    }
    let mut rdr = csv::Reader::from_reader(edges);
    check_header(&mut rdr, &["word_a", "word_b", "weight"])?;
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let w: u64 = rec[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad edge weight {:?}", &rec[2])))?;
        pairs.push((rec[0].to_string(), rec[1].to_string(), w));
    }
    let distinct: BTreeSet<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
    if distinct.len() != words.len() {
        return Err(Error::Parse("duplicate word in node list".into()));
    }
    CooccurrenceGraph::from_weighted_pairs(words, pairs)
}
