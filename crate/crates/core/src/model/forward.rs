use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sampler::gumbel_from_uniform;
use super::{HyperParams, LossBreakdown, ModelParams};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::graph::BatchedGraph;
use crate::graph::GraphMode;

/// Which value a promoted edge carries in the forward direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectorPath {
    /// Forward uses the hard selector (1 for promoted edges); the
    /// backward pass substitutes the relaxed probability's gradient
    /// (straight-through).
    Hard,
    /// Forward uses the relaxed probability itself. Smooth end to end,
    /// which is what finite-difference gradient checks need.
    Relaxed,
}

/// Per-call forward configuration.
#[derive(Clone, Copy, Debug)]
pub struct ForwardSettings {
    /// Training mode samples Gumbel noise and applies dropout;
    /// evaluation zeroes the noise and skips dropout, making the learned
    /// structure deterministic.
    pub training: bool,
    pub selector: SelectorPath,
    pub seed: u64,
}

impl ForwardSettings {
    pub fn eval() -> Self {
        ForwardSettings { training: false, selector: SelectorPath::Hard, seed: 0 }
    }

    pub fn train(seed: u64) -> Self {
        ForwardSettings { training: true, selector: SelectorPath::Hard, seed }
    }
}

/// Tape ids of one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodeIds {
    pub w1: NodeId,
    pub w2: NodeId,
    pub w3: NodeId,
    pub w_att: NodeId,
    pub attn: NodeId,
}

/// Tape ids of every registered parameter, in the same order as
/// [`ModelParams::named_tensors`].
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub embedding: NodeId,
    pub input_proj: NodeId,
    pub layers: Vec<LayerNodeIds>,
    pub readout_w: NodeId,
    pub readout_b: NodeId,
}

impl ParamNodes {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let embedding = tape.param(params.embedding.clone());
        let input_proj = tape.param(params.input_proj.clone());
        let layers = params
            .layers
            .iter()
            .map(|l| LayerNodeIds {
                w1: tape.param(l.w1.clone()),
                w2: tape.param(l.w2.clone()),
                w3: tape.param(l.w3.clone()),
                w_att: tape.param(l.w_att.clone()),
                attn: tape.param(l.attn.clone()),
            })
            .collect();
        let readout_w = tape.param(params.readout_w.clone());
        let readout_b = tape.param(params.readout_b.clone());
        ParamNodes { embedding, input_proj, layers, readout_w, readout_b }
    }

    /// Flat id list aligned with `ModelParams::named_tensors`.
    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = vec![self.embedding, self.input_proj];
        for l in &self.layers {
            out.extend([l.w1, l.w2, l.w3, l.w_att, l.attn]);
        }
        out.extend([self.readout_w, self.readout_b]);
        out
    }
}

/// Directed expansion of the static local topology: one entry per
/// ordered local edge plus one self-loop per node, each carrying its
/// fixed normalised coefficient `e_{u,v} / sqrt(zeta_u * zeta_v)`.
#[derive(Clone, Debug)]
pub struct LocalStructure {
    pub srcs: Vec<usize>,
    pub dsts: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub num_nodes: usize,
}

impl LocalStructure {
    pub fn from_batch(batch: &BatchedGraph) -> Self {
        let n = batch.num_nodes();
        let mut weight: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &batch.local_edges {
            weight.insert((e.u.min(e.v), e.u.max(e.v)), e.weight);
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        let mut srcs = Vec::new();
        let mut dsts = Vec::new();
        let mut coeffs = Vec::new();
        for v in 0..n {
            adj[v].sort_unstable();
            // Self-loop of the self-looped adjacency: e_{v,v} = 1.
            srcs.push(v);
            dsts.push(v);
            coeffs.push(1.0 / batch.zeta[v]);
            for &u in &adj[v] {
                srcs.push(u);
                dsts.push(v);
                let w = weight[&(u.min(v), u.max(v))];
                coeffs.push(w / (batch.zeta[u] * batch.zeta[v]).sqrt());
            }
        }
        LocalStructure { srcs, dsts, coeffs, num_nodes: n }
    }
}

/// Local syntactic aggregation:
/// `t_v = sum_{u in N_t(v) + {v}} e_{u,v} / sqrt(zeta_u zeta_v) * h_u`.
pub fn local_aggregate(tape: &mut Tape, h: NodeId, ls: &LocalStructure) -> NodeId {
    let cols = tape.value(h).cols();
    let rows = tape.gather_rows(h, ls.srcs.clone());
    let mut coeff = Tensor::zeros(ls.coeffs.len(), cols);
    for (r, &c) in ls.coeffs.iter().enumerate() {
        for j in 0..cols {
            coeff.set(r, j, c);
        }
    }
    let scaled = tape.mul_const(rows, coeff);
    tape.scatter_add_rows(scaled, ls.dsts.clone(), ls.num_nodes)
}

/// Where a promoted edge's selector value lives on the tape.
#[derive(Clone, Copy, Debug)]
pub struct EdgeWeightRef {
    pub tensor: NodeId,
    pub row: usize,
}

/// A promoted global edge with its selector reference.
#[derive(Clone, Copy, Debug)]
pub struct GlobalEdgeRef {
    pub u: usize,
    pub v: usize,
    pub weight: EdgeWeightRef,
}

/// Global semantic aggregation over the promoted edges:
/// `m_v = sum_{z in N_m(v)} e_{z,v} / sqrt(zeta_z zeta_v) * h_z`,
/// with `e_{z,v}` the selector value (1 on the hard path, p-hat on the
/// relaxed path) so gradients reach the structure learner. Returns
/// `None` when there are no global edges.
pub fn global_aggregate(
    tape: &mut Tape,
    h: NodeId,
    edges: &[GlobalEdgeRef],
    zeta: &[f64],
    num_nodes: usize,
) -> Option<NodeId> {
    if edges.is_empty() {
        return None;
    }
    // Both directions of every undirected edge, sorted by the tape
    // position of their selector so the weight column can be gathered
    // with one gather per source tensor.
    let mut entries: Vec<(EdgeWeightRef, usize, usize)> = Vec::with_capacity(edges.len() * 2);
    for e in edges {
        entries.push((e.weight, e.u, e.v));
        entries.push((e.weight, e.v, e.u));
    }
    entries.sort_by_key(|(w, src, dst)| (w.tensor.index(), w.row, *dst, *src));

    let mut col: Option<NodeId> = None;
    let mut run_start = 0;
    while run_start < entries.len() {
        let tensor = entries[run_start].0.tensor;
        let mut run_end = run_start;
        while run_end < entries.len() && entries[run_end].0.tensor == tensor {
            run_end += 1;
        }
        let rows: Vec<usize> = entries[run_start..run_end].iter().map(|(w, _, _)| w.row).collect();
        let part = tape.gather_rows(tensor, rows);
        col = Some(match col {
            None => part,
            Some(prev) => tape.concat_rows(prev, part),
        });
        run_start = run_end;
    }
    let col = col.expect("at least one entry");

    let srcs: Vec<usize> = entries.iter().map(|&(_, src, _)| src).collect();
    let dsts: Vec<usize> = entries.iter().map(|&(_, _, dst)| dst).collect();
    let cols = tape.value(h).cols();
    let mut coeff = Tensor::zeros(entries.len(), cols);
    for (r, &(_, src, dst)) in entries.iter().enumerate() {
        let c = 1.0 / (zeta[src] * zeta[dst]).sqrt();
        for j in 0..cols {
            coeff.set(r, j, c);
        }
    }
    let gathered = tape.gather_rows(h, srcs);
    let scaled = tape.mul_const(gathered, coeff);
    let weighted = tape.row_scale(scaled, col);
    Some(tape.scatter_add_rows(weighted, dsts, num_nodes))
}

/// One message-passing update:
/// `h' = relu(h W1 + t W2 + m W3)`, then dropout in training mode.
/// The `m` term is skipped entirely when no global edges exist, so a
/// structure-free run is instruction-identical to a local-only model.
pub fn joint_update(
    tape: &mut Tape,
    h: NodeId,
    t: NodeId,
    m: Option<NodeId>,
    layer: &LayerNodeIds,
    dropout_mask: Option<Tensor>,
) -> NodeId {
    let hw = tape.matmul(h, layer.w1);
    let tw = tape.matmul(t, layer.w2);
    let mut pre = tape.add(hw, tw);
    if let Some(m) = m {
        let mw = tape.matmul(m, layer.w3);
        pre = tape.add(pre, mw);
    }
    let act = tape.relu(pre);
    match dropout_mask {
        Some(mask) => tape.mul_const(act, mask),
        None => act,
    }
}

/// Role of a scored pair relative to its centre node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Static within-sentence neighbour; feeds the entropy regulariser.
    Local,
    /// Global neighbour promoted at an earlier layer; competes in the
    /// softmax but is neither selectable nor regularised.
    PrevGlobal,
    /// Inter-sentence candidate eligible for promotion this layer.
    Candidate,
}

/// Flattened per-layer table of scored `(centre, neighbour)` pairs,
/// grouped contiguously by centre node.
#[derive(Clone, Debug, Default)]
pub struct PairTable {
    pub centre: Vec<usize>,
    pub neighbour: Vec<usize>,
    pub kind: Vec<PairKind>,
    /// Contiguous `(start, end)` row range per scored centre node.
    pub segments: Vec<(usize, usize)>,
}

impl PairTable {
    pub fn len(&self) -> usize {
        self.centre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centre.is_empty()
    }

    /// Enumerate pairs for every node with a non-empty neighbour-or-
    /// candidate set: local neighbours first, then earlier global
    /// neighbours, then candidates, each in ascending index order.
    pub fn build(
        local_adj: &[Vec<usize>],
        globals: &[BTreeSet<usize>],
        candidates: &[BTreeSet<usize>],
    ) -> Self {
        let mut table = PairTable::default();
        for v in 0..local_adj.len() {
            let start = table.len();
            for &u in &local_adj[v] {
                table.centre.push(v);
                table.neighbour.push(u);
                table.kind.push(PairKind::Local);
            }
            for &z in &globals[v] {
                table.centre.push(v);
                table.neighbour.push(z);
                table.kind.push(PairKind::PrevGlobal);
            }
            for &c in &candidates[v] {
                table.centre.push(v);
                table.neighbour.push(c);
                table.kind.push(PairKind::Candidate);
            }
            if table.len() > start {
                table.segments.push((start, table.len()));
            }
        }
        table
    }
}

/// Attention scores normalised per centre node (the dynamic context
/// dependency scores): `s = softmax_v(leaky_relu(a^T [h_v W | h_j W]))`
/// over each node's existing neighbours and candidates jointly.
pub fn candidate_scores(
    tape: &mut Tape,
    h: NodeId,
    w_att: NodeId,
    attn: NodeId,
    table: &PairTable,
) -> NodeId {
    assert!(!table.is_empty(), "cannot score an empty pair table");
    let hw = tape.matmul(h, w_att);
    let hv = tape.gather_rows(hw, table.centre.clone());
    let hj = tape.gather_rows(hw, table.neighbour.clone());
    let cat = tape.concat_cols(hv, hj);
    let raw = tape.matmul(cat, attn);
    let astar = tape.leaky_relu(raw, 0.2);
    tape.segment_softmax(astar, table.segments.clone())
}

/// Entropy of the relaxed local-pair selectors:
/// `sum(-p_hat * ln(p_hat))` with p-hat clamped to `[1e-12, 1]`.
pub fn entropy_regularizer(tape: &mut Tape, phat_locals: NodeId) -> NodeId {
    let clamped = tape.clamp(phat_locals, 1e-12, 1.0);
    let logp = tape.log(clamped);
    let plogp = tape.mul(phat_locals, logp);
    let total = tape.sum(plogp);
    tape.affine(total, -1.0, 0.0)
}

/// Sum-pool nodes per graph, apply the linear readout, and compute the
/// mean cross-entropy against the labels. Returns `(logits, loss)`.
pub fn readout_and_loss(
    tape: &mut Tape,
    h: NodeId,
    graph_of_node: Vec<usize>,
    num_graphs: usize,
    labels: Vec<usize>,
    readout_w: NodeId,
    readout_b: NodeId,
) -> (NodeId, NodeId) {
    let pooled = tape.scatter_add_rows(h, graph_of_node, num_graphs);
    let projected = tape.matmul(pooled, readout_w);
    let logits = tape.add_row_broadcast(projected, readout_b);
    let loss = tape.cross_entropy_with_logits(logits, labels);
    (logits, loss)
}

/// Everything produced by one forward pass. The tape stays alive so the
/// caller can run the backward pass.
pub struct ForwardResult {
    pub tape: Tape,
    pub params: ParamNodes,
    pub loss_node: NodeId,
    pub logits_node: NodeId,
    pub h_node: NodeId,
    pub loss: LossBreakdown,
    pub logits: Tensor,
    pub final_h: Tensor,
    /// Edges promoted at each layer, per graph, in graph-local indices.
    pub selected_per_layer: Vec<Vec<Vec<(usize, usize)>>>,
    /// Final cumulative global edge set per graph, graph-local indices.
    pub global_edges: Vec<Vec<(usize, usize)>>,
    /// Smallest |p_hat - threshold| seen across candidate selections;
    /// infinite when nothing was scored. Gradient checks use this to
    /// confirm no selection sat near the threshold, where the hard
    /// structure would flip under perturbation.
    pub min_selector_margin: f64,
}

impl ForwardResult {
    /// Argmax prediction per graph.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|r| {
                let row = self.logits.row(r);
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("at least one class")
            })
            .collect()
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-graph noise streams are derived from the run seed and the
/// document id, never from the batch position, so a document sees the
/// same noise whether it is batched or alone.
fn stream_seed(base: u64, doc_id: &str, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(fnv1a(doc_id) ^ tag))
}

const TAG_GUMBEL: u64 = 0x67756d62;
const TAG_DROPOUT: u64 = 0x64726f70;

struct GraphRngs {
    gumbel: Vec<ChaCha8Rng>,
    dropout: Vec<ChaCha8Rng>,
}

impl GraphRngs {
    fn new(batch: &BatchedGraph, seed: u64) -> Self {
        let gumbel = batch
            .doc_ids
            .iter()
            .map(|id| ChaCha8Rng::seed_from_u64(stream_seed(seed, id, TAG_GUMBEL)))
            .collect();
        let dropout = batch
            .doc_ids
            .iter()
            .map(|id| ChaCha8Rng::seed_from_u64(stream_seed(seed, id, TAG_DROPOUT)))
            .collect();
        GraphRngs { gumbel, dropout }
    }
}

/// Inverted-dropout mask for the whole batch, drawn block-wise from each
/// graph's own stream. `rate >= 1` drops everything.
fn dropout_mask(batch: &BatchedGraph, cols: usize, rate: f64, rngs: &mut GraphRngs) -> Tensor {
    let mut mask = Tensor::zeros(batch.num_nodes(), cols);
    for (g, &(start, end)) in batch.ranges.iter().enumerate() {
        let rng = &mut rngs.dropout[g];
        for r in start..end {
            for c in 0..cols {
                let u: f64 = rng.gen();
                if rate < 1.0 && u >= rate {
                    mask.set(r, c, 1.0 / (1.0 - rate));
                }
            }
        }
    }
    mask
}

/// Full forward pass over a batch.
///
/// Mode handling: WordCooc skips scoring and selection entirely;
/// Disjoint forces the threshold to 1 (nothing is ever promoted);
/// Complete forces it to 0 (everything is promoted at layer 1); Ours
/// uses the configured threshold. Within each layer the order is
/// score -> select -> promote -> aggregate -> update, so edges promoted
/// at layer k already carry messages at layer k.
pub fn forward(
    batch: &BatchedGraph,
    params: &ModelParams,
    hyper: &HyperParams,
    settings: &ForwardSettings,
) -> ForwardResult {
    hyper.validate().expect("invalid hyperparameters");
    let threshold = match batch.mode {
        GraphMode::Disjoint => 1.0,
        GraphMode::Complete => 0.0,
        GraphMode::WordCooc | GraphMode::Ours => hyper.threshold,
    };
    let learn_structure = batch.mode != GraphMode::WordCooc;
    let num_layers = params.num_layers();
    let n = batch.num_nodes();
    let hidden = params.hidden();

    let mut rngs = GraphRngs::new(batch, settings.seed);
    let mut tape = Tape::new();
    let param_nodes = ParamNodes::register(&mut tape, params);

    // Initial states: gather each node's embedding row, project to b.
    let word_rows: Vec<usize> = batch.nodes.iter().map(|node| node.word).collect();
    let x = tape.gather_rows(param_nodes.embedding, word_rows);
    let mut h = tape.matmul(x, param_nodes.input_proj);

    // Static structures.
    let ls = LocalStructure::from_batch(batch);
    let mut local_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &batch.local_edges {
        local_adj[e.u].push(e.v);
        local_adj[e.v].push(e.u);
    }
    for adj in &mut local_adj {
        adj.sort_unstable();
    }

    // Mutable structure-learning state, owned by this pass.
    let mut globals: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut cand_adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    if learn_structure {
        for &(u, v) in &batch.candidates {
            cand_adj[u].insert(v);
            cand_adj[v].insert(u);
        }
    }
    let mut edge_refs: BTreeMap<(usize, usize), EdgeWeightRef> = BTreeMap::new();

    let mut reg_nodes: Vec<NodeId> = Vec::new();
    let mut selected_per_layer: Vec<Vec<Vec<(usize, usize)>>> = Vec::new();
    let mut min_selector_margin = f64::INFINITY;

    for layer in 0..num_layers {
        let layer_ids = &param_nodes.layers[layer];
        let mut layer_selected: Vec<Vec<(usize, usize)>> = vec![Vec::new(); batch.num_graphs()];

        if learn_structure {
            let table = PairTable::build(&local_adj, &globals, &cand_adj);
            let ent_node = if table.is_empty() {
                tape.constant(Tensor::scalar(0.0))
            } else {
                let scores = candidate_scores(&mut tape, h, layer_ids.w_att, layer_ids.attn, &table);

                // Rows that need a relaxed selector: local pairs (for the
                // regulariser) and candidates (for selection).
                let scored: Vec<usize> = (0..table.len())
                    .filter(|&i| table.kind[i] != PairKind::PrevGlobal)
                    .collect();
                let mut g1 = Tensor::zeros(scored.len(), 1);
                let mut g0 = Tensor::zeros(scored.len(), 1);
                if settings.training {
                    let mut graph_cursor = 0;
                    for (row, &pair) in scored.iter().enumerate() {
                        let v = table.centre[pair];
                        while v >= batch.ranges[graph_cursor].1 {
                            graph_cursor += 1;
                        }
                        let rng = &mut rngs.gumbel[graph_cursor];
                        g1.set(row, 0, gumbel_from_uniform(rng.gen()));
                        g0.set(row, 0, gumbel_from_uniform(rng.gen()));
                    }
                }

                // Binary Gumbel-softmax through a two-column row softmax:
                // p_hat = softmax([(ln pi1 + g1)/tau, (ln pi0 + g0)/tau])[0].
                let pi1 = tape.gather_rows(scores, scored.clone());
                let pi1c = tape.clamp(pi1, 1e-12, 1.0);
                let lp1 = tape.log(pi1c);
                let pi0 = tape.affine(pi1, -1.0, 1.0);
                let pi0c = tape.clamp(pi0, 1e-12, 1.0);
                let lp0 = tape.log(pi0c);
                let g1c = tape.constant(g1);
                let g0c = tape.constant(g0);
                let a1 = tape.add(lp1, g1c);
                let a1 = tape.affine(a1, 1.0 / hyper.tau, 0.0);
                let a0 = tape.add(lp0, g0c);
                let a0 = tape.affine(a0, 1.0 / hyper.tau, 0.0);
                let two_col = tape.concat_cols(a1, a0);
                let sm = tape.row_softmax(two_col);
                let phat = tape.slice_cols(sm, 0, 1);

                // Entropy over the local pairs.
                let local_rows: Vec<usize> = scored
                    .iter()
                    .enumerate()
                    .filter(|(_, &pair)| table.kind[pair] == PairKind::Local)
                    .map(|(row, _)| row)
                    .collect();
                let ent = if local_rows.is_empty() {
                    tape.constant(Tensor::scalar(0.0))
                } else {
                    let phat_loc = tape.gather_rows(phat, local_rows);
                    entropy_regularizer(&mut tape, phat_loc)
                };

                // Hard selection over the candidate pairs.
                let cand_rows: Vec<usize> = scored
                    .iter()
                    .enumerate()
                    .filter(|(_, &pair)| table.kind[pair] == PairKind::Candidate)
                    .map(|(row, _)| row)
                    .collect();
                if !cand_rows.is_empty() {
                    let cand_pairs: Vec<usize> = cand_rows.iter().map(|&r| scored[r]).collect();
                    let phat_cand = tape.gather_rows(phat, cand_rows);
                    let values = tape.value(phat_cand).clone();
                    for v in values.data() {
                        min_selector_margin = min_selector_margin.min((v - threshold).abs());
                    }
                    let hard = values.map(|p| if p >= threshold { 1.0 } else { 0.0 });
                    let weight_node = match settings.selector {
                        SelectorPath::Hard => tape.straight_through(phat_cand, hard.clone()),
                        SelectorPath::Relaxed => phat_cand,
                    };
                    // Directional selection materialises an undirected
                    // edge; the first firing direction (in pair order)
                    // carries the gradient.
                    let mut new_edges: BTreeMap<(usize, usize), EdgeWeightRef> = BTreeMap::new();
                    for (row, &pair) in cand_pairs.iter().enumerate() {
                        if hard.get(row, 0) != 1.0 {
                            continue;
                        }
                        let (v, j) = (table.centre[pair], table.neighbour[pair]);
                        let key = (v.min(j), v.max(j));
                        new_edges
                            .entry(key)
                            .or_insert(EdgeWeightRef { tensor: weight_node, row });
                    }
                    for (&(u, v), &weight) in &new_edges {
                        edge_refs.insert((u, v), weight);
                        globals[u].insert(v);
                        globals[v].insert(u);
                        cand_adj[u].remove(&v);
                        cand_adj[v].remove(&u);
                        let g = batch.graph_of(u);
                        let start = batch.ranges[g].0;
                        layer_selected[g].push((u - start, v - start));
                    }
                }
                ent
            };
            reg_nodes.push(ent_node);
        }
        selected_per_layer.push(layer_selected);

        // Aggregate and update.
        let t = local_aggregate(&mut tape, h, &ls);
        let global_edges: Vec<GlobalEdgeRef> = edge_refs
            .iter()
            .map(|(&(u, v), &weight)| GlobalEdgeRef { u, v, weight })
            .collect();
        let m = global_aggregate(&mut tape, h, &global_edges, &batch.zeta, n);
        let mask = if settings.training && hyper.dropout > 0.0 {
            Some(dropout_mask(batch, hidden, hyper.dropout, &mut rngs))
        } else {
            None
        };
        h = joint_update(&mut tape, h, t, m, layer_ids, mask);
    }

    // Readout and loss.
    let mut graph_of_node = vec![0usize; n];
    for (g, &(start, end)) in batch.ranges.iter().enumerate() {
        for item in graph_of_node.iter_mut().take(end).skip(start) {
            *item = g;
        }
    }
    let (logits_node, pred_node) = readout_and_loss(
        &mut tape,
        h,
        graph_of_node,
        batch.num_graphs(),
        batch.labels.clone(),
        param_nodes.readout_w,
        param_nodes.readout_b,
    );

    let regularizers: Vec<f64> = reg_nodes.iter().map(|&id| tape.value(id).get(0, 0)).collect();
    let loss_node = if reg_nodes.is_empty() {
        pred_node
    } else {
        let mut stack = reg_nodes[0];
        for &r in &reg_nodes[1..] {
            stack = tape.concat_rows(stack, r);
        }
        let mean_reg = tape.mean(stack);
        let scaled = tape.affine(mean_reg, hyper.lambda, 0.0);
        tape.add(pred_node, scaled)
    };

    let prediction = tape.value(pred_node).get(0, 0);
    let total = tape.value(loss_node).get(0, 0);
    let logits = tape.value(logits_node).clone();
    let final_h = tape.value(h).clone();

    let mut global_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); batch.num_graphs()];
    for &(u, v) in edge_refs.keys() {
        let g = batch.graph_of(u);
        let start = batch.ranges[g].0;
        global_edges[g].push((u - start, v - start));
    }

    ForwardResult {
        tape,
        params: param_nodes,
        loss_node,
        logits_node,
        h_node: h,
        loss: LossBreakdown {
            prediction,
            regularizers,
            lambda: hyper.lambda,
            total,
        },
        logits,
        final_h,
        selected_per_layer,
        global_edges,
        min_selector_margin,
    }
}

/// Local-only forward pass: no scoring, no selection, no global term.
/// This is both the WordCooc execution path and the reference a
/// threshold-1 run must match bit for bit.
pub fn forward_local_only(
    batch: &BatchedGraph,
    params: &ModelParams,
    hyper: &HyperParams,
    settings: &ForwardSettings,
) -> ForwardResult {
    hyper.validate().expect("invalid hyperparameters");
    let n = batch.num_nodes();
    let hidden = params.hidden();
    let mut rngs = GraphRngs::new(batch, settings.seed);
    let mut tape = Tape::new();
    let param_nodes = ParamNodes::register(&mut tape, params);

    let word_rows: Vec<usize> = batch.nodes.iter().map(|node| node.word).collect();
    let x = tape.gather_rows(param_nodes.embedding, word_rows);
    let mut h = tape.matmul(x, param_nodes.input_proj);
    let ls = LocalStructure::from_batch(batch);

    for layer_ids in &param_nodes.layers {
        let t = local_aggregate(&mut tape, h, &ls);
        let mask = if settings.training && hyper.dropout > 0.0 {
            Some(dropout_mask(batch, hidden, hyper.dropout, &mut rngs))
        } else {
            None
        };
        h = joint_update(&mut tape, h, t, None, layer_ids, mask);
    }

    let mut graph_of_node = vec![0usize; n];
    for (g, &(start, end)) in batch.ranges.iter().enumerate() {
        for item in graph_of_node.iter_mut().take(end).skip(start) {
            *item = g;
        }
    }
    let (logits_node, pred_node) = readout_and_loss(
        &mut tape,
        h,
        graph_of_node,
        batch.num_graphs(),
        batch.labels.clone(),
        param_nodes.readout_w,
        param_nodes.readout_b,
    );

    let prediction = tape.value(pred_node).get(0, 0);
    let logits = tape.value(logits_node).clone();
    let final_h = tape.value(h).clone();
    let num_layers = params.num_layers();
    ForwardResult {
        tape,
        params: param_nodes,
        loss_node: pred_node,
        logits_node,
        h_node: h,
        loss: LossBreakdown {
            prediction,
            regularizers: Vec::new(),
            lambda: hyper.lambda,
            total: prediction,
        },
        logits,
        final_h,
        selected_per_layer: vec![Vec::new(); num_layers],
        global_edges: vec![Vec::new(); batch.num_graphs()],
        min_selector_margin: f64::INFINITY,
    }
}
