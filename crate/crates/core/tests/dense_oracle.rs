//! Aggregation ops against an independent dense-adjacency
//! implementation on random small graphs.
//!
//! The library route expresses graph sparsity through gather/scatter
//! primitives; the oracle here builds the full normalised adjacency
//! matrices and multiplies them out with a plain triple loop. The two
//! routes must agree to 1e-10.

use docgnn::autodiff::{Tape, Tensor};
use docgnn::graph::{
    batch_graphs, normalization_coefficients, DocumentGraph, GraphMode, GraphNode, LocalEdge,
};
use docgnn::model::{
    global_aggregate, joint_update, local_aggregate, EdgeWeightRef, GlobalEdgeRef, LayerNodeIds,
    LocalStructure,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain dense matmul, kept deliberately independent of the library's.
fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn max_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(r, c)).abs());
        }
    }
    worst
}

struct Case {
    graph: DocumentGraph,
    globals: Vec<(usize, usize)>,
    h: Tensor,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(2..=12);
    let num_sent = rng.gen_range(1..=3.min(n));
    let nodes: Vec<GraphNode> = (0..n)
        .map(|i| GraphNode { sentence: if i < num_sent { i } else { rng.gen_range(0..num_sent) }, word: i })
        .collect();
    let mut local_edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if nodes[u].sentence == nodes[v].sentence && rng.gen_bool(0.5) {
                local_edges.push(LocalEdge { u, v, weight: rng.gen_range(1..4) as f64 });
            }
        }
    }
    let mut candidates = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if nodes[u].sentence != nodes[v].sentence {
                candidates.push((u, v));
            }
        }
    }
    let globals: Vec<(usize, usize)> =
        candidates.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
    let zeta = normalization_coefficients(n, &local_edges);
    let h = Tensor::uniform(n, 4, -1.0, 1.0, rng);
    Case {
        graph: DocumentGraph {
            doc_id: "oracle".into(),
            label: 0,
            mode: GraphMode::Ours,
            nodes,
            local_edges,
            candidates,
            zeta,
        },
        globals,
        h,
    }
}

/// Dense normalised adjacency times features: `D^-1/2 A_hat D^-1/2 H`
/// where `A_hat` has the local weights plus unit self-loops.
fn dense_local(case: &Case) -> Vec<Vec<f64>> {
    let n = case.graph.num_nodes();
    let zeta = &case.graph.zeta;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for e in &case.graph.local_edges {
        a[e.u][e.v] = e.weight;
        a[e.v][e.u] = e.weight;
    }
    for (i, row) in a.iter_mut().enumerate() {
        for (j, val) in row.iter_mut().enumerate() {
            *val /= (zeta[i] * zeta[j]).sqrt();
        }
    }
    dense_matmul(&a, &to_rows(&case.h))
}

fn dense_global(case: &Case) -> Vec<Vec<f64>> {
    let n = case.graph.num_nodes();
    let zeta = &case.graph.zeta;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in &case.globals {
        a[u][v] = 1.0 / (zeta[u] * zeta[v]).sqrt();
        a[v][u] = a[u][v];
    }
    dense_matmul(&a, &to_rows(&case.h))
}

#[test]
fn aggregations_match_dense_oracle_on_100_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_901);
    for case_idx in 0..100 {
        let case = random_case(&mut rng);
        let batch = batch_graphs(&[&case.graph]);
        let n = case.graph.num_nodes();

        let mut tape = Tape::new();
        let h = tape.constant(case.h.clone());

        // Local route.
        let ls = LocalStructure::from_batch(&batch);
        let t = local_aggregate(&mut tape, h, &ls);
        let t_oracle = dense_local(&case);
        assert!(
            max_diff(&t_oracle, tape.value(t)) < 1e-10,
            "case {case_idx}: local aggregate deviates from the dense oracle"
        );

        // Global route with unit edge weights.
        let ones = tape.constant(Tensor::new(case.globals.len().max(1), 1, vec![1.0; case.globals.len().max(1)]));
        let edges: Vec<GlobalEdgeRef> = case
            .globals
            .iter()
            .enumerate()
            .map(|(row, &(u, v))| GlobalEdgeRef {
                u,
                v,
                weight: EdgeWeightRef { tensor: ones, row },
            })
            .collect();
        let m = global_aggregate(&mut tape, h, &edges, &case.graph.zeta, n);
        let m_oracle = dense_global(&case);
        match m {
            Some(m) => assert!(
                max_diff(&m_oracle, tape.value(m)) < 1e-10,
                "case {case_idx}: global aggregate deviates from the dense oracle"
            ),
            None => assert!(case.globals.is_empty()),
        }

        // Joint update through random layer weights.
        let w1t = Tensor::uniform(4, 4, -1.0, 1.0, &mut rng);
        let w2t = Tensor::uniform(4, 4, -1.0, 1.0, &mut rng);
        let w3t = Tensor::uniform(4, 4, -1.0, 1.0, &mut rng);
        let layer = LayerNodeIds {
            w1: tape.param(w1t.clone()),
            w2: tape.param(w2t.clone()),
            w3: tape.param(w3t.clone()),
            w_att: tape.param(Tensor::zeros(4, 4)),
            attn: tape.param(Tensor::zeros(8, 1)),
        };
        let h_next = joint_update(&mut tape, h, t, m, &layer, None);

        let hw = dense_matmul(&to_rows(&case.h), &to_rows(&w1t));
        let tw = dense_matmul(&t_oracle, &to_rows(&w2t));
        let mw = dense_matmul(&m_oracle, &to_rows(&w3t));
        let mut expected = vec![vec![0.0; 4]; n];
        for i in 0..n {
            for j in 0..4 {
                let pre = hw[i][j] + tw[i][j] + if case.globals.is_empty() { 0.0 } else { mw[i][j] };
                expected[i][j] = pre.max(0.0);
            }
        }
        assert!(
            max_diff(&expected, tape.value(h_next)) < 1e-10,
            "case {case_idx}: joint update deviates from the dense oracle"
        );
    }
}
