//! Code co-occurrence graphs and Diff2Vec embeddings.
//!
//! Nodes are the codes of one family; two codes share an edge weighted by the
//! number of patents listing both. Embeddings come from growing small random
//! diffusion trees around every node, walking each tree as an Euler tour, and
//! feeding the tours to skip-gram.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CodeFamily, PatentRecord};
use crate::embedding::EmbeddingTable;
use crate::rng::seeded;
use crate::skipgram::{train_skipgram, SkipGramConfig};
use crate::{Error, Result};

/// Weighted undirected co-occurrence graph over one code family.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceGraph {
    family: CodeFamily,
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    // neighbor lists sorted by node id
    adjacency: Vec<Vec<(usize, u32)>>,
}

impl CooccurrenceGraph {
    pub fn family(&self) -> CodeFamily {
        self.family
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_id(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, u32)] {
        &self.adjacency[node]
    }

    pub fn weight(&self, a: usize, b: usize) -> u32 {
        self.adjacency[a].binary_search_by_key(&b, |&(n, _)| n).map_or(0, |i| self.adjacency[a][i].1)
    }

    /// Edges as `(a, b, weight)` with `a < b`, in id order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&(b, _)| a < b).map(move |&(b, w)| (a, b, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Writes `code_a<TAB>code_b<TAB>weight` lines. Isolated nodes do not
    /// appear.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (a, b, weight) in self.edges() {
            writeln!(w, "{}\t{}\t{}", self.nodes[a], self.nodes[b], weight).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn from_parts(family: CodeFamily, nodes: Vec<String>, edges: BTreeMap<(usize, usize), u32>) -> Self {
        let index = nodes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (&(a, b), &w) in &edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        CooccurrenceGraph { family, nodes, index, adjacency }
    }
}

/// Builds the co-occurrence graph of `family` codes. Node ids follow the
/// lexicographic order of the codes.
pub fn build_graph(patents: &[PatentRecord], family: CodeFamily) -> CooccurrenceGraph {
    let mut codes: Vec<String> =
        patents.iter().flat_map(|p| p.codes(family).iter().cloned()).collect::<HashSet<_>>().into_iter().collect();
    codes.sort();
    let index: HashMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let edges = patents
        .par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<(usize, usize), u32>, p| {
            let mut ids: Vec<usize> = p.codes(family).iter().map(|c| index[c.as_str()]).collect();
            ids.sort_unstable();
            ids.dedup();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    *acc.entry((a, b)).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, w) in b {
                *a.entry(k).or_insert(0) += w;
            }
            a
        });
    CooccurrenceGraph::from_parts(family, codes, edges)
}

/// A tree grown by diffusion from a root node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusionTree {
    /// Graph node ids in insertion order; `nodes[0]` is the root.
    pub nodes: Vec<usize>,
    /// `parents[i]` is the graph node id `nodes[i]` was attached to.
    pub parents: Vec<Option<usize>>,
}

impl DiffusionTree {
    pub fn root(&self) -> usize {
        self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn component_size_capped(graph: &CooccurrenceGraph, root: usize, cap: usize) -> usize {
    let mut seen = HashSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        for &(m, _) in graph.neighbors(n) {
            if seen.len() >= cap {
                return cap;
            }
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen.len().min(cap)
}

/// Grows a diffusion tree of up to `size` nodes from `root`.
///
/// Each step picks a uniformly random tree node, then one of its graph
/// neighbors (uniformly, or proportionally to edge weight when `weighted`);
/// a neighbor not yet in the tree is attached to the picked node. Growth stops
/// at `size` nodes or when the root's component is exhausted.
pub fn diffuse(
    graph: &CooccurrenceGraph,
    root: usize,
    size: usize,
    weighted: bool,
    rng: &mut impl Rng,
) -> Result<DiffusionTree> {
    if root >= graph.node_count() {
        return Err(Error::UnknownNode(root.to_string()));
    }
    let target = component_size_capped(graph, root, size.max(1));
    let mut nodes = vec![root];
    let mut parents = vec![None];
    let mut members = HashSet::from([root]);
    while nodes.len() < target {
        let from = nodes[rng.gen_range(0..nodes.len())];
        let ns = graph.neighbors(from);
        if ns.is_empty() {
            continue;
        }
        let next = if weighted {
            let total: u64 = ns.iter().map(|&(_, w)| w as u64).sum();
            let mut pick = rng.gen_range(0..total);
            ns.iter()
                .find(|&&(_, w)| {
                    if pick < w as u64 {
                        true
                    } else {
                        pick -= w as u64;
                        false
                    }
                })
                .map(|&(n, _)| n)
                .expect("pick < total")
        } else {
            ns[rng.gen_range(0..ns.len())].0
        };
        if members.insert(next) {
            nodes.push(next);
            parents.push(Some(from));
        }
    }
    Ok(DiffusionTree { nodes, parents })
}

/// [`diffuse`] with the root given by its code.
pub fn diffuse_code(
    graph: &CooccurrenceGraph,
    code: &str,
    size: usize,
    weighted: bool,
    rng: &mut impl Rng,
) -> Result<DiffusionTree> {
    let root = graph.node_id(code).ok_or_else(|| Error::UnknownNode(code.to_string()))?;
    diffuse(graph, root, size, weighted, rng)
}

/// Euler tour of a tree with every edge doubled: a depth-first circuit from
/// the root that visits children in insertion order and returns to the
/// parent after each subtree.
pub fn euler_sequence(tree: &DiffusionTree) -> Vec<usize> {
    let position: HashMap<usize, usize> = tree.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut children = vec![Vec::new(); tree.len()];
    for (i, parent) in tree.parents.iter().enumerate() {
        if let Some(p) = parent {
            children[position[p]].push(i);
        }
    }
    let mut out = Vec::with_capacity(2 * tree.len() - 1);
    out.push(tree.nodes[0]);
    let mut stack = vec![(0usize, 0usize)];
    while let Some(top) = stack.last_mut() {
        let (at, next) = *top;
        if next < children[at].len() {
            top.1 += 1;
            let child = children[at][next];
            out.push(tree.nodes[child]);
            stack.push((child, 0));
        } else {
            stack.pop();
            if let Some(&(parent, _)) = stack.last() {
                out.push(tree.nodes[parent]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub diffusions_per_node: usize,
    pub size: usize,
    /// Sample neighbors proportionally to co-occurrence counts.
    pub weighted: bool,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig { diffusions_per_node: 10, size: 40, weighted: false, seed: 0 }
    }
}

/// Euler-tour sequences, `diffusions_per_node` per graph node, grouped by
/// root in node id order. Each root draws from its own seeded stream.
pub fn generate_corpus(graph: &CooccurrenceGraph, config: &DiffusionConfig) -> Vec<Vec<usize>> {
    (0..graph.node_count())
        .into_par_iter()
        .flat_map_iter(|root| {
            let mut rng = seeded(config.seed, &[0xD1FF, root as u64]);
            (0..config.diffusions_per_node)
                .map(|_| {
                    let tree =
                        diffuse(graph, root, config.size, config.weighted, &mut rng).expect("root is a graph node");
                    euler_sequence(&tree)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diff2VecConfig {
    pub diffusion: DiffusionConfig,
    pub skipgram: SkipGramConfig,
}

/// Diff2Vec: diffusion corpus plus skip-gram. Every graph node gets a vector.
pub fn train_code_embeddings(graph: &CooccurrenceGraph, config: &Diff2VecConfig) -> Result<EmbeddingTable> {
    if graph.node_count() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let corpus = generate_corpus(graph, &config.diffusion);
    let vectors = train_skipgram(&corpus, graph.node_count(), &config.skipgram)?;
    EmbeddingTable::new(graph.nodes().to_vec(), vectors)
}

/// Mean embedding of a patent's codes; unknown codes are skipped and the
/// zero vector stands in when none is known.
pub fn embed_codes<S: AsRef<str>>(codes: &[S], table: &EmbeddingTable) -> Array1<f64> {
    table.mean_of(codes)
}
