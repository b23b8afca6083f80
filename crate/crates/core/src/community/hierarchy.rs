//! Smell taxonomy: map-equation communities at the top, oversized ones
//! split by Louvain, plus manual merging and labelling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{infomap_partition_with, louvain_refine, InfomapConfig};
use crate::cograph::CooccurrenceGraph;
use crate::error::{Error, Result};

pub const DEFAULT_SIZE_THRESHOLD: usize = 30;
/// Levels of Louvain refinement allowed below the top level.
pub const MAX_REFINE_DEPTH: usize = 3;
pub const ROOT_ID: &str = "root";

const MIN_SPLIT_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: String,
    pub label: String,
    /// Sorted member words.
    pub members: Vec<String>,
    #[serde(default)]
    pub children: Vec<HierarchyNode>,
    /// Isolated word with no co-occurrences.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unclustered: bool,
}

impl HierarchyNode {
    fn leaf(id: String, members: Vec<String>) -> Self {
        Self {
            label: id.clone(),
            id,
            members,
            children: Vec::new(),
            unclustered: false,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Levels below and including this node.
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(|c| c.height()).max().unwrap_or(0)
    }

    fn find(&self, id: &str) -> Option<&HierarchyNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    fn find_mut(&mut self, id: &str) -> Option<&mut HierarchyNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a HierarchyNode>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryHierarchy {
    root: HierarchyNode,
}

impl CategoryHierarchy {
    /// Build from top-level nodes and check every invariant.
    pub fn new(categories: Vec<HierarchyNode>) -> Result<Self> {
        let mut members: Vec<String> = categories.iter().flat_map(|c| c.members.clone()).collect();
        members.sort();
        let h = Self {
            root: HierarchyNode {
                id: ROOT_ID.to_string(),
                label: ROOT_ID.to_string(),
                members,
                children: categories,
                unclustered: false,
            },
        };
        h.validate()?;
        Ok(h)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let h: Self = serde_json::from_str(text)?;
        h.validate()?;
        Ok(h)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hierarchy serializes")
    }

    pub fn root(&self) -> &HierarchyNode {
        &self.root
    }

    pub fn categories(&self) -> &[HierarchyNode] {
        &self.root.children
    }

    pub fn words(&self) -> &[String] {
        &self.root.members
    }

    /// Depth counting the top level as 1.
    pub fn depth(&self) -> usize {
        self.root.height() - 1
    }

    pub fn node(&self, id: &str) -> Option<&HierarchyNode> {
        self.root.find(id)
    }

    pub fn leaves(&self) -> Vec<&HierarchyNode> {
        let mut out = Vec::new();
        for c in &self.root.children {
            c.collect_leaves(&mut out);
        }
        out
    }

    /// Word to top-level label, skipping unclustered words.
    pub fn word_categories(&self) -> BTreeMap<String, String> {
        self.root
            .children
            .iter()
            .filter(|c| !c.unclustered)
            .flat_map(|c| c.members.iter().map(move |w| (w.clone(), c.label.clone())))
            .collect()
    }

    /// Sorted labels of the clustered top-level categories.
    pub fn category_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .root
            .children
            .iter()
            .filter(|c| !c.unclustered)
            .map(|c| c.label.clone())
            .collect();
        labels.sort();
        labels
    }

    pub fn validate(&self) -> Result<()> {
        if self.root.id != ROOT_ID {
            return Err(Error::Validation(format!("root id must be {ROOT_ID:?}")));
        }
        if self.depth() > 1 + MAX_REFINE_DEPTH {
            return Err(Error::Validation(format!(
                "hierarchy depth {} exceeds {}",
                self.depth(),
                1 + MAX_REFINE_DEPTH
            )));
        }
        let mut ids = BTreeSet::new();
        validate_node(&self.root, &mut ids)
    }
}

fn validate_node(node: &HierarchyNode, ids: &mut BTreeSet<String>) -> Result<()> {
    if !ids.insert(node.id.clone()) {
        return Err(Error::Validation(format!("duplicate node id {:?}", node.id)));
    }
    if node.members.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "members of {:?} must be sorted and unique",
            node.id
        )));
    }
    if node.members.is_empty() && node.id != ROOT_ID {
        return Err(Error::Validation(format!("node {:?} has no members", node.id)));
    }
    if node.is_leaf() {
        return Ok(());
    }
    let mut union: Vec<&String> = node.children.iter().flat_map(|c| &c.members).collect();
    union.sort();
    if union.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!(
            "children of {:?} share members",
            node.id
        )));
    }
    if !union.iter().copied().eq(node.members.iter()) {
        return Err(Error::Validation(format!(
            "children of {:?} do not cover its members",
            node.id
        )));
    }
    for c in &node.children {
        validate_node(c, ids)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub size_threshold: usize,
    pub seed: u64,
    pub infomap: InfomapConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            size_threshold: DEFAULT_SIZE_THRESHOLD,
            seed: 0,
            infomap: InfomapConfig::default(),
        }
    }
}

/// Sort groups of node indices by size descending, then by first word.
fn order_groups(groups: &mut [Vec<usize>], words: &[String]) {
    for g in groups.iter_mut() {
        g.sort_unstable_by(|a, b| words[*a].cmp(&words[*b]));
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| words[a[0]].cmp(&words[b[0]])));
}

fn member_words(nodes: &[usize], words: &[String]) -> Vec<String> {
    let mut m: Vec<String> = nodes.iter().map(|&i| words[i].clone()).collect();
    m.sort();
    m
}

fn refine(
    graph: &super::WeightedGraph,
    words: &[String],
    nodes: &[usize],
    node: &mut HierarchyNode,
    level: usize,
    cfg: &ClassifyConfig,
) {
    if nodes.len() <= cfg.size_threshold || level >= MAX_REFINE_DEPTH {
        return;
    }
    let seed = cfg.seed.wrapping_add(1 + level as u64);
    let outcome = louvain_refine(graph, nodes, seed);
    let improved = outcome.modularity.is_some_and(|q| q > MIN_SPLIT_GAIN);
    if outcome.partition.community_count() < 2 || !improved {
        return;
    }
    let mut groups: Vec<Vec<usize>> = outcome
        .partition
        .communities()
        .into_iter()
        .map(|c| c.into_iter().map(|k| nodes[k]).collect())
        .collect();
    order_groups(&mut groups, words);
    for (j, g) in groups.iter().enumerate() {
        let mut child = HierarchyNode::leaf(format!("{}.{}", node.id, j + 1), member_words(g, words));
        refine(graph, words, g, &mut child, level + 1, cfg);
        node.children.push(child);
    }
}

/// Top level from map-equation communities; any community with more than
/// `size_threshold` words is split by Louvain, recursively, while the split
/// has positive modularity.
pub fn hierarchical_classify(graph: &CooccurrenceGraph, cfg: &ClassifyConfig) -> Result<CategoryHierarchy> {
    if cfg.size_threshold < 2 {
        return Err(Error::invalid("size threshold must be at least 2"));
    }
    let words = graph.words();
    let wg = graph.to_weighted();
    let partition = infomap_partition_with(&wg, cfg.seed, &cfg.infomap);
    let mut groups = partition.communities();
    order_groups(&mut groups, words);
    // Isolated words go last.
    groups.sort_by_key(|g| g.len() == 1 && wg.degree(g[0]) == 0.0);
    let mut categories = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let mut node = HierarchyNode::leaf(format!("c{}", i + 1), member_words(g, words));
        if g.len() == 1 && wg.degree(g[0]) == 0.0 {
            node.unclustered = true;
        } else {
            refine(&wg, words, g, &mut node, 0, cfg);
        }
        categories.push(node);
    }
    CategoryHierarchy::new(categories)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub parent_id: String,
    pub child_ids: Vec<String>,
    #[serde(default)]
    pub new_label: Option<String>,
}

pub fn parse_merge_spec(text: &str) -> Result<Vec<MergeGroup>> {
    Ok(serde_json::from_str(text)?)
}

/// Merge sibling groups into single leaves with the union of their
/// members. The merged node keeps the id of its first listed child and
/// takes its position.
pub fn merge_subcommunities(h: &CategoryHierarchy, spec: &[MergeGroup]) -> Result<CategoryHierarchy> {
    let mut root = h.root.clone();
    for group in spec {
        if group.child_ids.is_empty() {
            return Err(Error::Validation(format!(
                "merge group under {:?} lists no children",
                group.parent_id
            )));
        }
        let parent = root
            .find_mut(&group.parent_id)
            .ok_or_else(|| Error::Validation(format!("unknown node id {:?}", group.parent_id)))?;
        let mut positions = Vec::with_capacity(group.child_ids.len());
        for id in &group.child_ids {
            match parent.children.iter().position(|c| &c.id == id) {
                Some(p) if !positions.contains(&p) => positions.push(p),
                Some(_) => {
                    return Err(Error::Validation(format!("node {id:?} listed twice")));
                }
                None if h.node(id).is_some() => {
                    return Err(Error::Validation(format!(
                        "node {id:?} is not a child of {:?}",
                        group.parent_id
                    )));
                }
                None => return Err(Error::Validation(format!("unknown node id {id:?}"))),
            }
        }
        if positions.len() < 2 {
            continue;
        }
        let first = positions[0];
        let mut members: Vec<String> = positions
            .iter()
            .flat_map(|&p| parent.children[p].members.clone())
            .collect();
        members.sort();
        let template = &parent.children[first];
        let merged = HierarchyNode {
            id: template.id.clone(),
            label: group.new_label.clone().unwrap_or_else(|| template.label.clone()),
            members,
            children: Vec::new(),
            unclustered: false,
        };
        let keep = positions[0];
        let mut idx = 0;
        parent.children.retain(|_| {
            let drop = idx != keep && positions.contains(&idx);
            idx += 1;
            !drop
        });
        let at = parent.children.iter().position(|c| c.id == merged.id).expect("kept");
        parent.children[at] = merged;
        if parent.children.len() == 1 && parent.id != ROOT_ID {
            // A single child would only duplicate its parent.
            parent.children.clear();
        }
    }
    let out = CategoryHierarchy { root };
    out.validate()?;
    Ok(out)
}

/// Keys are top-level ids (`c1`) or `word:<word>` naming a word of the
/// category; values are labels.
pub fn parse_label_map(text: &str) -> Result<BTreeMap<String, String>> {
    Ok(serde_json::from_str(text)?)
}

/// Label the top-level categories. Categories not named in `label_map`
/// are called `cluster-<id>`.
pub fn assign_categories(
    h: &CategoryHierarchy,
    label_map: &BTreeMap<String, String>,
) -> Result<CategoryHierarchy> {
    let mut out = h.clone();
    let mut assigned: BTreeMap<usize, String> = BTreeMap::new();
    for (key, label) in label_map {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::Validation(format!("empty label for {key:?}")));
        }
        let pos = match key.strip_prefix("word:") {
            Some(word) => out
                .root
                .children
                .iter()
                .position(|c| !c.unclustered && c.members.binary_search_by(|m| m.as_str().cmp(word)).is_ok())
                .ok_or_else(|| Error::Validation(format!("word {word:?} is in no category")))?,
            None => out
                .root
                .children
                .iter()
                .position(|c| &c.id == key)
                .ok_or_else(|| Error::Validation(format!("unknown category id {key:?}")))?,
        };
        if let Some(prev) = assigned.insert(pos, label.to_string()) {
            if prev != label {
                return Err(Error::Validation(format!(
                    "category {} labelled both {prev:?} and {label:?}",
                    out.root.children[pos].id
                )));
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (i, c) in out.root.children.iter_mut().enumerate() {
        c.label = assigned
            .get(&i)
            .cloned()
            .unwrap_or_else(|| format!("cluster-{}", c.id));
        if !seen.insert(c.label.clone()) {
            return Err(Error::Validation(format!("duplicate category label {:?}", c.label)));
        }
    }
    Ok(out)
}

pub fn read_hierarchy<R: Read>(mut reader: R) -> Result<CategoryHierarchy> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse(e.to_string()))?;
    CategoryHierarchy::from_json(&text)
}
