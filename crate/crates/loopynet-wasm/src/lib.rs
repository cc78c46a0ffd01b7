//! Browser bindings for the loopynet demo page.
//!
//! Three operations, each taking and returning JSON strings so the page
//! stays a single static file with vanilla JS rendering:
//!
//! - [`tree_json`]: parse an edge list, extract the spanning tree rooted at
//!   one node's output neuron, and return it with layout-friendly fields;
//! - [`train_json`]: generate a synthetic planted-partition graph, train on
//!   it, and return the loss curve plus final metrics;
//! - [`gradcheck_json`]: run the finite-difference gradient-check suite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use loopynet::backprop::{grad_check, GradCheckSpec};
use loopynet::graph::{generate_synthetic, parse_edge_list, Graph, NodeTable, SynthSpec};
use loopynet::model::{build_model_graph, init_params, InitScheme, LossKind, NeuronId, NeuronKind};
use loopynet::train::{
    evaluate, train, zero_prediction_mse, Algorithm, Convergence, OptState, TrainCfg,
};
use loopynet::tree::{extract, prop_call_bound, PropBound};

fn err_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct TreeNodeOut {
    kind: &'static str,
    layer: Option<usize>,
    node: String,
    depth: usize,
    parent: Option<usize>,
    tag: Option<String>,
}

#[derive(Serialize)]
struct TreeOut {
    node_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    root: String,
    g: usize,
    nodes: Vec<TreeNodeOut>,
    tree_nodes_excl_root: usize,
    depth: usize,
    d_max: usize,
    prop_call_bound: Option<u64>,
}

/// Extract the g-hop spanning tree rooted at `root_id`'s output neuron from
/// a tab-separated edge list.
pub fn tree_json_impl(edges_text: &str, root_id: &str, g: usize, k: usize) -> Result<String, String> {
    let skeleton = parse_edge_list(edges_text).map_err(|e| e.to_string())?.reindex_sorted();
    let n = skeleton.node_count();
    if n == 0 {
        return Err("edge list names no nodes".to_string());
    }
    // Placeholder features/labels: the tree shape only needs adjacency.
    let features = NodeTable { dim: 1, rows: vec![vec![0.0]; n] };
    let labels = NodeTable { dim: 1, rows: vec![vec![0.0]; n] };
    let graph = Graph::assemble(skeleton, features, labels).map_err(|e| e.to_string())?;
    let node = graph
        .index_of(root_id)
        .ok_or_else(|| format!("unknown root node id {root_id:?}"))?;
    let mg = build_model_graph(Arc::new(graph.clone()), k.max(1), &vec![4; k.max(1)])
        .map_err(|e| e.to_string())?;
    let tree = extract(&mg, NeuronId::output(node), g.max(1)).map_err(|e| e.to_string())?;

    let mut edges = Vec::new();
    for i in 0..graph.node_count() {
        for &j in graph.adj(i) {
            if i < j {
                edges.push((i, j));
            }
        }
    }
    let d_max = graph.stats().d_max;
    let bound = if d_max >= 1 {
        match prop_call_bound(d_max, tree.g).map_err(|e| e.to_string())? {
            PropBound::Exact(b) => Some(b),
            PropBound::Saturated => None,
        }
    } else {
        None
    };
    let out = TreeOut {
        node_ids: graph.node_ids().to_vec(),
        edges,
        root: format!("y({root_id})"),
        g: tree.g,
        tree_nodes_excl_root: tree.node_count_excl_root(),
        depth: tree.depth(),
        d_max,
        prop_call_bound: bound,
        nodes: tree
            .nodes
            .iter()
            .map(|t| TreeNodeOut {
                kind: match t.neuron.kind {
                    NeuronKind::Input => "input",
                    NeuronKind::Hidden(_) => "hidden",
                    NeuronKind::Output => "output",
                },
                layer: match t.neuron.kind {
                    NeuronKind::Hidden(l) => Some(l),
                    _ => None,
                },
                node: graph.node_id(t.neuron.node).to_string(),
                depth: t.depth,
                parent: t.parent,
                tag: t.link_tag.map(|tag| format!("{}", tag.weight_var())),
            })
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoTrainCfg {
    #[serde(default = "d_seed")]
    seed: u64,
    #[serde(default = "d_blocks")]
    blocks: usize,
    #[serde(default = "d_npb")]
    nodes_per_block: usize,
    #[serde(default = "d_pin")]
    p_in: f64,
    #[serde(default = "d_pout")]
    p_out: f64,
    #[serde(default = "d_n")]
    feature_dim: usize,
    #[serde(default = "d_noise")]
    noise: f64,
    #[serde(default = "d_k")]
    k: usize,
    #[serde(default = "d_width")]
    hidden_width: usize,
    #[serde(default = "d_g")]
    g_hops: usize,
    #[serde(default = "d_eta")]
    eta: f64,
    #[serde(default = "d_epochs")]
    epochs: usize,
    #[serde(default = "d_adam")]
    adam: bool,
}

fn d_seed() -> u64 {
    7
}
fn d_blocks() -> usize {
    2
}
fn d_npb() -> usize {
    30
}
fn d_pin() -> f64 {
    0.2
}
fn d_pout() -> f64 {
    0.02
}
fn d_n() -> usize {
    4
}
fn d_noise() -> f64 {
    0.1
}
fn d_k() -> usize {
    1
}
fn d_width() -> usize {
    8
}
fn d_g() -> usize {
    2
}
fn d_eta() -> f64 {
    0.5
}
fn d_epochs() -> usize {
    50
}
fn d_adam() -> bool {
    false
}

#[derive(Serialize)]
struct TrainOut {
    nodes: usize,
    edges: usize,
    losses: Vec<f64>,
    mse: f64,
    mae: f64,
    lrs: Option<f64>,
    baseline_mse: f64,
}

/// Generate the configured synthetic graph, train on all nodes, and report
/// the loss curve plus whole-graph metrics.
pub fn train_json_impl(config: &str) -> Result<String, String> {
    let cfg: DemoTrainCfg = serde_json::from_str(config).map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        seed: cfg.seed,
        blocks: cfg.blocks,
        nodes_per_block: cfg.nodes_per_block,
        p_in: cfg.p_in,
        p_out: cfg.p_out,
        feature_dim: cfg.feature_dim,
        label_dim: cfg.blocks,
        noise: cfg.noise,
    };
    let graph = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mg = build_model_graph(Arc::new(graph.clone()), cfg.k, &vec![cfg.hidden_width; cfg.k])
        .map_err(|e| e.to_string())?;
    let dims = mg.dims(cfg.feature_dim, cfg.blocks);
    let mut params =
        init_params(&dims, cfg.seed, InitScheme::Uniform(0.1)).map_err(|e| e.to_string())?;
    let mut opt = if cfg.adam {
        OptState::adam(dims.clone(), cfg.eta, cfg.eta, 0.9, 0.999, 1e-8)
    } else {
        OptState::sgd(cfg.eta, cfg.eta)
    };
    let tcfg = TrainCfg {
        g_hops: cfg.g_hops,
        loss: LossKind::Mse,
        max_epochs: cfg.epochs,
        seed: cfg.seed,
        batch: false,
        convergence: Convergence {
            rel_tol: 0.0,
            patience: 0,
        },
    };
    let nodes: Vec<usize> = (0..graph.node_count()).collect();
    let losses =
        train(&mg, &mut params, &mut opt, &nodes, &tcfg, |_, _| {}).map_err(|e| e.to_string())?;
    let metrics = evaluate(&mg, &params, &nodes, cfg.g_hops).map_err(|e| e.to_string())?;
    let out = TrainOut {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        losses,
        mse: metrics.mse,
        mae: metrics.mae,
        lrs: metrics.lrs,
        baseline_mse: zero_prediction_mse(&graph, &nodes),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Run the gradient-check suite and return its JSON report.
pub fn gradcheck_json_impl(cases: usize, seed: u64, tol: f64) -> Result<String, String> {
    let spec = GradCheckSpec {
        cases,
        seed,
        tol,
        ..GradCheckSpec::default()
    };
    let report = grad_check(&spec).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn tree_json(edges_text: &str, root_id: &str, g: usize, k: usize) -> Result<String, JsValue> {
    tree_json_impl(edges_text, root_id, g, k).map_err(err_js)
}

#[wasm_bindgen]
pub fn train_json(config: &str) -> Result<String, JsValue> {
    train_json_impl(config).map_err(err_js)
}

#[wasm_bindgen]
pub fn gradcheck_json(cases: usize, seed: u64, tol: f64) -> Result<String, JsValue> {
    gradcheck_json_impl(cases, seed, tol).map_err(err_js)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIX_NODE_EDGES: &str = "v1\tv2\nv1\tv3\nv1\tv4\nv2\tv3\nv3\tv4\nv4\tv5\nv5\tv6\n";

    #[test]
    fn tree_json_exposes_the_worked_example() {
        let out = tree_json_impl(SIX_NODE_EDGES, "v1", 3, 1).unwrap();
        let json: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(json["tree_nodes_excl_root"], 9);
        assert_eq!(json["prop_call_bound"], 84);
        assert_eq!(json["nodes"].as_array().unwrap().len(), 10);
        assert_eq!(json["edges"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn tree_json_rejects_unknown_roots() {
        let err = tree_json_impl(SIX_NODE_EDGES, "v99", 3, 1).unwrap_err();
        assert!(err.contains("v99"));
    }

    #[test]
    fn train_json_learns_on_the_default_config() {
        let out = train_json_impl("{\"epochs\": 12, \"nodes_per_block\": 12}").unwrap();
        let json: serde_json::Value = serde_json::from_str(&out).unwrap();
        let losses = json["losses"].as_array().unwrap();
        assert_eq!(losses.len(), 12);
        let first = losses[0].as_f64().unwrap();
        let last = losses[11].as_f64().unwrap();
        assert!(last < first);
        assert!(json["mse"].as_f64().unwrap() < json["baseline_mse"].as_f64().unwrap());
    }

    #[test]
    fn gradcheck_json_reports_clean_runs() {
        let out = gradcheck_json_impl(5, 90210, 1e-6).unwrap();
        let json: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(json["cases"], 5);
        assert_eq!(json["failures"].as_array().unwrap().len(), 0);
    }
}
