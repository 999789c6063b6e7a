//! Sentence subgraphs and document graphs.
//!
//! A document graph keeps three edge populations apart:
//!
//! - `local_edges` (E_t): within-sentence co-occurrence edges with raw
//!   count weights, static for the life of the graph;
//! - candidate pairs (E_m*): every inter-sentence node pair, the pool the
//!   structure learner may promote;
//! - global edges (E_m): the promoted subset, owned by a forward pass
//!   and grown monotonically layer by layer (see the model module).
//!
//! Node identity is `(sentence index, word id)`: repeated occurrences of
//! a word inside one sentence merge into a single node, while the same
//! word in different sentences stays distinct so its senses can diverge.
//! The degree normaliser `zeta` comes from the self-looped local
//! adjacency only and stays fixed as global edges are learned, keeping
//! the local message scale stable across modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::textpipe::{Corpus, Document, Split, Vocabulary};

/// How the document-level graph is assembled and which threshold the
/// structure learner runs with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphMode {
    /// One merged word co-occurrence graph over the whole document,
    /// ignoring sentence boundaries; no structure learning.
    WordCooc,
    /// Disjoint union of sentence subgraphs; selector threshold forced
    /// to 1, so no inter-sentence edge is ever added.
    Disjoint,
    /// Disjoint union with the selector threshold forced to 0: every
    /// candidate edge is promoted at the first layer.
    Complete,
    /// Disjoint union refined by learned sparse selection.
    Ours,
}

impl GraphMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "wordcooc" | "word_cooc" => Ok(GraphMode::WordCooc),
            "disjoint" => Ok(GraphMode::Disjoint),
            "complete" => Ok(GraphMode::Complete),
            "ours" => Ok(GraphMode::Ours),
            other => Err(Error::config(format!("unknown graph mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GraphMode::WordCooc => "wordcooc",
            GraphMode::Disjoint => "disjoint",
            GraphMode::Complete => "complete",
            GraphMode::Ours => "ours",
        }
    }
}

/// Word co-occurrence graph over one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceSubgraph {
    pub sentence_index: usize,
    /// Unique word ids in first-occurrence order.
    pub nodes: Vec<usize>,
    /// Undirected edges `(word_u, word_v, count)` with `word_u < word_v`,
    /// sorted; the count is the number of window token pairs that paired
    /// the two words.
    pub edges: Vec<(usize, usize, u32)>,
}

/// Count co-occurrences inside every sliding window of `window`
/// consecutive tokens; a sentence shorter than the window contributes a
/// single window spanning the whole sentence. Each ordered token pair
/// with distinct word ids increments its undirected edge once per window
/// it shares.
pub fn build_sentence_subgraph(
    sentence_index: usize,
    tokens: &[usize],
    window: usize,
) -> SentenceSubgraph {
    assert!(!tokens.is_empty(), "cannot build a subgraph from an empty sentence");
    assert!(window >= 2, "window must be at least 2");
    let mut nodes = Vec::new();
    for &t in tokens {
        if !nodes.contains(&t) {
            nodes.push(t);
        }
    }
    let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let win = window.min(tokens.len());
    for start in 0..=(tokens.len() - win) {
        let slice = &tokens[start..start + win];
        for i in 0..slice.len() {
            for j in (i + 1)..slice.len() {
                let (a, b) = (slice[i], slice[j]);
                if a != b {
                    *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                }
            }
        }
    }
    let edges = counts.into_iter().map(|((u, v), w)| (u, v, w)).collect();
    SentenceSubgraph { sentence_index, nodes, edges }
}

/// A node of the document graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub sentence: usize,
    pub word: usize,
}

/// Weighted undirected local edge between node indices, `u < v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Immutable per-document graph; the growing global edge set lives in
/// the forward pass that owns it.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentGraph {
    pub doc_id: String,
    pub label: usize,
    pub mode: GraphMode,
    pub nodes: Vec<GraphNode>,
    pub local_edges: Vec<LocalEdge>,
    /// All inter-sentence node pairs `(u, v)` with `u < v`; empty in
    /// WordCooc mode.
    pub candidates: Vec<(usize, usize)>,
    /// Self-looped local degree per node: `1 + sum of incident local
    /// edge weights`; always >= 1.
    pub zeta: Vec<f64>,
}

impl DocumentGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Assemble the document graph for one document.
pub fn assemble_document_graph(doc: &Document, mode: GraphMode, window: usize) -> DocumentGraph {
    assert!(!doc.sentences.is_empty(), "document must have sentences");
    let (nodes, local_edges, candidates) = match mode {
        GraphMode::WordCooc => {
            let all: Vec<usize> = doc.sentences.iter().flatten().copied().collect();
            let sub = build_sentence_subgraph(0, &all, window);
            let index: BTreeMap<usize, usize> =
                sub.nodes.iter().enumerate().map(|(i, &w)| (w, i)).collect();
            let nodes: Vec<GraphNode> =
                sub.nodes.iter().map(|&word| GraphNode { sentence: 0, word }).collect();
            let edges = sub
                .edges
                .iter()
                .map(|&(u, v, w)| LocalEdge { u: index[&u], v: index[&v], weight: w as f64 })
                .collect();
            (nodes, edges, Vec::new())
        }
        GraphMode::Disjoint | GraphMode::Complete | GraphMode::Ours => {
            let subs: Vec<SentenceSubgraph> = doc
                .sentences
                .iter()
                .enumerate()
                .map(|(i, tokens)| build_sentence_subgraph(i, tokens, window))
                .collect();
            let mut nodes = Vec::new();
            let mut ranges = Vec::new(); // node index range per sentence
            let mut local_edges = Vec::new();
            for sub in &subs {
                let start = nodes.len();
                let index: BTreeMap<usize, usize> = sub
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| (w, start + i))
                    .collect();
                nodes.extend(
                    sub.nodes.iter().map(|&word| GraphNode { sentence: sub.sentence_index, word }),
                );
                ranges.push(start..nodes.len());
                local_edges.extend(sub.edges.iter().map(|&(u, v, w)| {
                    let (a, b) = (index[&u], index[&v]);
                    LocalEdge { u: a.min(b), v: a.max(b), weight: w as f64 }
                }));
            }
            let mut candidates = Vec::new();
            for i in 0..ranges.len() {
                for j in (i + 1)..ranges.len() {
                    for u in ranges[i].clone() {
                        for v in ranges[j].clone() {
                            candidates.push((u, v));
                        }
                    }
                }
            }
            (nodes, local_edges, candidates)
        }
    };
    let zeta = normalization_coefficients(nodes.len(), &local_edges);
    DocumentGraph {
        doc_id: doc.id.clone(),
        label: doc.label,
        mode,
        nodes,
        local_edges,
        candidates,
        zeta,
    }
}

/// Self-looped degree per node from the local edges alone:
/// `zeta_v = 1 + sum_{u in N_t(v)} e_{u,v}`.
pub fn normalization_coefficients(num_nodes: usize, local_edges: &[LocalEdge]) -> Vec<f64> {
    let mut zeta = vec![1.0; num_nodes];
    for e in local_edges {
        zeta[e.u] += e.weight;
        zeta[e.v] += e.weight;
    }
    zeta
}

/// Build graphs for every document of a split (in corpus order), in
/// parallel when the `parallel` feature is on.
pub fn build_document_graphs(
    corpus: &Corpus,
    split: Split,
    mode: GraphMode,
    window: usize,
) -> Vec<DocumentGraph> {
    let docs: Vec<&Document> = corpus.docs_in(split).collect();
    par_map(&docs, |doc| assemble_document_graph(doc, mode, window))
}

/// Several document graphs merged into one block-diagonal graph with
/// offset-shifted node indices. No edge crosses a graph boundary and
/// [`BatchedGraph::unbatch`] recovers the originals exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedGraph {
    pub mode: GraphMode,
    pub nodes: Vec<GraphNode>,
    pub local_edges: Vec<LocalEdge>,
    pub candidates: Vec<(usize, usize)>,
    pub zeta: Vec<f64>,
    /// Node index range `(start, end)` per member graph.
    pub ranges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub doc_ids: Vec<String>,
}

impl BatchedGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.ranges.len()
    }

    /// Member graph index owning a node.
    pub fn graph_of(&self, node: usize) -> usize {
        self.ranges
            .iter()
            .position(|&(s, e)| node >= s && node < e)
            .expect("node outside every range")
    }

    /// Recover the member graphs exactly.
    pub fn unbatch(&self) -> Vec<DocumentGraph> {
        self.ranges
            .iter()
            .enumerate()
            .map(|(g, &(start, end))| {
                let shift = |i: usize| i - start;
                DocumentGraph {
                    doc_id: self.doc_ids[g].clone(),
                    label: self.labels[g],
                    mode: self.mode,
                    nodes: self.nodes[start..end].to_vec(),
                    local_edges: self
                        .local_edges
                        .iter()
                        .filter(|e| e.u >= start && e.u < end)
                        .map(|e| LocalEdge { u: shift(e.u), v: shift(e.v), weight: e.weight })
                        .collect(),
                    candidates: self
                        .candidates
                        .iter()
                        .filter(|&&(u, _)| u >= start && u < end)
                        .map(|&(u, v)| (shift(u), shift(v)))
                        .collect(),
                    zeta: self.zeta[start..end].to_vec(),
                }
            })
            .collect()
    }
}

/// Merge graphs into one batch; all graphs must share a mode.
pub fn batch_graphs(graphs: &[&DocumentGraph]) -> BatchedGraph {
    assert!(!graphs.is_empty(), "cannot batch zero graphs");
    let mode = graphs[0].mode;
    assert!(graphs.iter().all(|g| g.mode == mode), "mixed graph modes in a batch");

    let mut out = BatchedGraph {
        mode,
        nodes: Vec::new(),
        local_edges: Vec::new(),
        candidates: Vec::new(),
        zeta: Vec::new(),
        ranges: Vec::new(),
        labels: Vec::new(),
        doc_ids: Vec::new(),
    };
    for g in graphs {
        let offset = out.nodes.len();
        out.nodes.extend_from_slice(&g.nodes);
        out.local_edges.extend(
            g.local_edges
                .iter()
                .map(|e| LocalEdge { u: e.u + offset, v: e.v + offset, weight: e.weight }),
        );
        out.candidates.extend(g.candidates.iter().map(|&(u, v)| (u + offset, v + offset)));
        out.zeta.extend_from_slice(&g.zeta);
        out.ranges.push((offset, offset + g.nodes.len()));
        out.labels.push(g.label);
        out.doc_ids.push(g.doc_id.clone());
    }
    out
}

/// Line-delimited inspection dump: `NODE <idx> <sentence> <word>` then
/// `EDGE <kind:T|M|C> <u> <v> <weight>`. Global edges are supplied by the
/// caller because they belong to a forward pass, not to the graph.
pub fn dump_graph(
    g: &DocumentGraph,
    vocab: &Vocabulary,
    global_edges: &[(usize, usize)],
) -> String {
    let mut out = String::new();
    for (i, n) in g.nodes.iter().enumerate() {
        writeln!(out, "NODE {} {} {}", i, n.sentence, vocab.word_of(n.word)).unwrap();
    }
    for e in &g.local_edges {
        writeln!(out, "EDGE T {} {} {}", e.u, e.v, e.weight).unwrap();
    }
    for &(u, v) in global_edges {
        writeln!(out, "EDGE M {u} {v} 1").unwrap();
    }
    for &(u, v) in &g.candidates {
        writeln!(out, "EDGE C {u} {v} 1").unwrap();
    }
    out
}
