//! Tree-unrolled forward evaluation, the gradient recursion realized as one
//! reverse sweep, and the finite-difference oracle that certifies it.
//!
//! The spanning tree is a feedforward computation: each neuron's
//! pre-activation is the sum, over its tree children, of that link's affine
//! map (weight times child value plus bias), passed through the sigmoid.
//! Leaf hidden neurons carry no children; their state is bootstrapped from
//! the node's attached raw features through the input/inter-layer chain.
//! Gradients flow back along tree links only, which is exact for this
//! unrolled loss: every link is visited once, so the sweep performs
//! |tree| - 1 propagation steps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Error;
use crate::graph::Graph;
use crate::linalg::{add_assign, hadamard, Mat};
use crate::model::{
    activation, activation_deriv, build_model_graph, init_params, node_loss, node_loss_grad,
    output_layer_grads, Dims, InitScheme, LinkTag, LossKind, ModelGraph, NeuronId, NeuronKind,
    Params, VarId,
};
use crate::tree::{attach_leaf_inputs, extract, SpanTree};
use crate::Result;

/// Recorded state of one evaluated tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeEntry {
    /// Pre-activation z; `None` for input neurons (their value is the raw
    /// feature vector).
    pub pre: Option<Vec<f64>>,
    /// Post-activation value (σ(z) entry-wise, or the feature vector).
    pub value: Vec<f64>,
}

/// Bootstrap chain of a leaf hidden neuron at layer l: pre- and
/// post-activations of layers 1..=l, fed from the attached features.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    pub pre: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

/// Values recorded by one bottom-up pass over a tree, parallel to
/// `SpanTree::nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub entries: Vec<TapeEntry>,
    pub bootstraps: Vec<Option<Bootstrap>>,
}

impl ForwardTape {
    pub fn root_value(&self) -> &[f64] {
        &self.entries[0].value
    }
}

fn check_dims(tree: &SpanTree, params: &Params, graph: &Graph) -> Result<()> {
    if params.dims.feature != graph.feature_dim() || params.dims.label != graph.label_dim() {
        return Err(Error::Shape(format!(
            "params expect n={}, d={} but graph has n={}, d={}",
            params.dims.feature,
            params.dims.label,
            graph.feature_dim(),
            graph.label_dim()
        )));
    }
    let k = params.dims.k();
    for node in &tree.nodes {
        if let NeuronKind::Hidden(l) = node.neuron.kind {
            if l > k {
                return Err(Error::Shape(format!(
                    "tree references hidden layer {l} but params have k={k}"
                )));
            }
        }
    }
    Ok(())
}

/// Evaluate a tree bottom-up: leaves first, then each neuron from its
/// children's values. Requires leaf inputs to be attached.
pub fn forward_tree(tree: &SpanTree, params: &Params, graph: &Graph) -> Result<ForwardTape> {
    check_dims(tree, params, graph)?;
    let n = tree.nodes.len();
    let mut entries: Vec<Option<TapeEntry>> = vec![None; n];
    let mut bootstraps: Vec<Option<Bootstrap>> = vec![None; n];

    // Children always carry a larger index than their parent, so walking the
    // node list backwards is a bottom-up evaluation.
    for i in (0..n).rev() {
        let node = &tree.nodes[i];
        let entry = match node.neuron.kind {
            NeuronKind::Input => TapeEntry {
                pre: None,
                value: graph.features_of(node.neuron.node).to_vec(),
            },
            NeuronKind::Hidden(l) if node.children.is_empty() => {
                let x = node.leaf_input.as_ref().ok_or_else(|| {
                    Error::State(format!(
                        "leaf hidden neuron of node {} has no attached features",
                        graph.node_id(node.neuron.node)
                    ))
                })?;
                let mut pre_chain = Vec::with_capacity(l);
                let mut val_chain = Vec::with_capacity(l);
                let mut value = x.clone();
                for layer in 1..=l {
                    let tag = if layer == 1 { LinkTag::Input } else { LinkTag::Inter(layer) };
                    let w = params.weight(tag);
                    let mut z = params.bias(tag).to_vec();
                    w.matvec_add(&value, &mut z);
                    value = activation(&z);
                    pre_chain.push(z);
                    val_chain.push(value.clone());
                }
                bootstraps[i] = Some(Bootstrap {
                    pre: pre_chain.clone(),
                    values: val_chain,
                });
                TapeEntry {
                    pre: pre_chain.last().cloned(),
                    value,
                }
            }
            _ => {
                let width = match node.neuron.kind {
                    NeuronKind::Hidden(l) => params.dims.hidden[l - 1],
                    NeuronKind::Output => params.dims.label,
                    NeuronKind::Input => unreachable!(),
                };
                let mut z = vec![0.0; width];
                for &c in &node.children {
                    let tag = tree.nodes[c].link_tag.expect("non-root nodes carry a tag");
                    let child_value = &entries[c].as_ref().expect("children evaluated first").value;
                    params.weight(tag).matvec_add(child_value, &mut z);
                    add_assign(&mut z, params.bias(tag));
                }
                let value = activation(&z);
                TapeEntry {
                    pre: Some(z),
                    value,
                }
            }
        };
        entries[i] = Some(entry);
    }

    Ok(ForwardTape {
        entries: entries.into_iter().map(|e| e.unwrap()).collect(),
        bootstraps,
    })
}

/// Loss of the tree's root output against a target label vector.
pub fn tree_loss(tree: &SpanTree, tape: &ForwardTape, y_hat: &[f64], kind: LossKind) -> Result<f64> {
    if tree.root.kind != NeuronKind::Output {
        return Err(Error::State("tree loss requires an output-layer root".to_string()));
    }
    node_loss(tape.root_value(), y_hat, kind)
}

/// Per-variable gradient buffers plus the propagation-step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccum {
    /// Gradient of each variable, same shapes as [`Params`].
    pub buf: Params,
    /// Number of (parent, child) tree links visited.
    pub prop_calls: u64,
}

impl GradAccum {
    pub fn zeros(dims: Dims) -> GradAccum {
        GradAccum {
            buf: Params::zeros(dims),
            prop_calls: 0,
        }
    }

    pub fn var(&self, id: VarId) -> &[f64] {
        self.buf.var(id)
    }

    /// Entry-wise accumulate another node's gradients (batch mode); callers
    /// merge in a fixed order for determinism.
    pub fn merge(&mut self, other: &GradAccum) {
        for id in self.buf.var_ids() {
            let src = other.buf.var(id).to_vec();
            add_assign(self.buf.var_mut(id), &src);
        }
        self.prop_calls += other.prop_calls;
    }
}

/// One reverse sweep over the tree: the root adjoint is the loss gradient
/// scaled by σ'; each link accumulates its tagged variable's gradient and
/// hands the child its adjoint. Variables tagging no tree link keep an
/// all-zero buffer.
pub fn prop_gradients(
    tree: &SpanTree,
    tape: &ForwardTape,
    params: &Params,
    y_hat: &[f64],
    kind: LossKind,
) -> Result<GradAccum> {
    if tape.entries.len() != tree.nodes.len() {
        return Err(Error::State(format!(
            "tape has {} entries for a tree of {} nodes",
            tape.entries.len(),
            tree.nodes.len()
        )));
    }
    if tree.root.kind != NeuronKind::Output {
        return Err(Error::State("gradients require an output-layer root".to_string()));
    }
    if y_hat.len() != params.dims.label {
        return Err(Error::Shape(format!(
            "target has {} entries, model outputs {}",
            y_hat.len(),
            params.dims.label
        )));
    }

    let mut accum = GradAccum::zeros(params.dims.clone());
    let n = tree.nodes.len();
    // Pre-activation adjoints, filled root-first.
    let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; n];
    {
        let y = tape.root_value();
        let gy = node_loss_grad(y, y_hat, kind)?;
        adjoint[0] = Some(hadamard(&gy, &activation_deriv(y)));
    }

    for i in 0..n {
        let node = &tree.nodes[i];
        // Leaf hidden neurons: differentiate the bootstrap chain.
        if node.children.is_empty() {
            if let (NeuronKind::Hidden(l), Some(boot)) = (node.neuron.kind, &tape.bootstraps[i]) {
                let mut delta = adjoint[i].clone().expect("parent set leaf adjoint");
                for layer in (1..=l).rev() {
                    let tag = if layer == 1 { LinkTag::Input } else { LinkTag::Inter(layer) };
                    let below: &[f64] = if layer == 1 {
                        node.leaf_input.as_ref().expect("bootstrap implies leaf input")
                    } else {
                        &boot.values[layer - 2]
                    };
                    grad_w(&mut accum.buf, tag).outer_add(&delta, below);
                    add_assign(grad_b(&mut accum.buf, tag), &delta);
                    if layer > 1 {
                        let dv = params.weight(tag).transpose_matvec(&delta);
                        delta = hadamard(&dv, &activation_deriv(below));
                    }
                }
            }
            continue;
        }
        let delta = adjoint[i].clone().expect("parents are visited before children");
        for &c in &node.children {
            let tag = tree.nodes[c].link_tag.expect("non-root nodes carry a tag");
            let child_value = &tape.entries[c].value;
            grad_w(&mut accum.buf, tag).outer_add(&delta, child_value);
            add_assign(grad_b(&mut accum.buf, tag), &delta);
            accum.prop_calls += 1;
            if matches!(tree.nodes[c].neuron.kind, NeuronKind::Hidden(_)) {
                let dv = params.weight(tag).transpose_matvec(&delta);
                adjoint[c] = Some(hadamard(&dv, &activation_deriv(child_value)));
            }
        }
    }

    Ok(accum)
}

fn grad_w(buf: &mut Params, tag: LinkTag) -> &mut Mat {
    match tag {
        LinkTag::Input => &mut buf.w_input,
        LinkTag::Intra(l) => &mut buf.w_intra[l - 1],
        LinkTag::Inter(l) => &mut buf.w_inter[l - 2],
        LinkTag::Output => &mut buf.w_output,
    }
}

fn grad_b(buf: &mut Params, tag: LinkTag) -> &mut Vec<f64> {
    match tag {
        LinkTag::Input => &mut buf.b_input,
        LinkTag::Intra(l) => &mut buf.b_intra[l - 1],
        LinkTag::Inter(l) => &mut buf.b_inter[l - 2],
        LinkTag::Output => &mut buf.b_output,
    }
}

/// Eq.-style closed-form output-layer gradients read off a tape: requires
/// the root output value and its single hidden child's value.
pub fn output_layer_grads_from_tape(
    tree: &SpanTree,
    tape: &ForwardTape,
    y_hat: &[f64],
) -> Result<(Mat, Vec<f64>)> {
    if tree.root.kind != NeuronKind::Output {
        return Err(Error::State("closed form requires an output-layer root".to_string()));
    }
    if tape.entries.len() != tree.nodes.len() {
        return Err(Error::State("tape does not match the tree".to_string()));
    }
    let child = *tree.nodes[0]
        .children
        .first()
        .ok_or_else(|| Error::State("root has no hidden child on the tape".to_string()))?;
    output_layer_grads(&tape.entries[child].value, tape.root_value(), y_hat)
}

/// Predict the output of one node by tree-unrolled forward evaluation.
pub fn predict(mg: &ModelGraph, params: &Params, node: usize, g_hops: usize) -> Result<Vec<f64>> {
    let mut tree = extract(mg, NeuronId::output(node), g_hops)?;
    attach_leaf_inputs(&mut tree, mg.graph());
    let tape = forward_tree(&tree, params, mg.graph())?;
    Ok(tape.root_value().to_vec())
}

/// Whole-graph loss: the sum of per-node tree losses.
pub fn graph_loss(mg: &ModelGraph, params: &Params, g_hops: usize, kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for node in 0..mg.graph().node_count() {
        let y = predict(mg, params, node, g_hops)?;
        total += node_loss(&y, mg.graph().labels_of(node), kind)?;
    }
    Ok(total)
}

/// Central finite difference of the tree-unrolled root loss with one
/// parameter entry perturbed; rebuilds the forward pass per evaluation.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient(
    mg: &ModelGraph,
    params: &Params,
    root: NeuronId,
    g_hops: usize,
    var: VarId,
    entry: usize,
    h_step: f64,
    y_hat: &[f64],
    kind: LossKind,
) -> Result<f64> {
    if h_step <= 0.0 {
        return Err(Error::Config("finite-difference step must be > 0".to_string()));
    }
    if entry >= params.var(var).len() {
        return Err(Error::Bounds(format!(
            "entry {entry} out of range for {var} ({} entries)",
            params.var(var).len()
        )));
    }
    let mut tree = extract(mg, root, g_hops)?;
    attach_leaf_inputs(&mut tree, mg.graph());
    let mut p = params.clone();
    p.var_mut(var)[entry] = params.var(var)[entry] + h_step;
    let plus = tree_loss(&tree, &forward_tree(&tree, &p, mg.graph())?, y_hat, kind)?;
    p.var_mut(var)[entry] = params.var(var)[entry] - h_step;
    let minus = tree_loss(&tree, &forward_tree(&tree, &p, mg.graph())?, y_hat, kind)?;
    Ok((plus - minus) / (2.0 * h_step))
}

/// Relative error with an absolute floor: |a - b| / max(1e-8, |a|, |b|).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Configuration of the randomized gradient-check suite.
#[derive(Debug, Clone)]
pub struct GradCheckSpec {
    pub cases: usize,
    pub seed: u64,
    /// Failure threshold on [`relative_error`].
    pub tol: f64,
    pub h_step: f64,
    /// Fault-injection seam for tests: add `delta` to one analytic entry of
    /// one case before comparison.
    pub corrupt: Option<Corruption>,
}

#[derive(Debug, Clone)]
pub struct Corruption {
    pub case: usize,
    pub var: VarId,
    pub entry: usize,
    pub delta: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            cases: 100,
            seed: 90210,
            tol: 1e-6,
            h_step: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckFailure {
    pub seed: u64,
    pub tag: String,
    pub index: usize,
    pub got: f64,
    pub want: f64,
}

/// Per-case bookkeeping used by the call-count bound checks.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub seed: u64,
    pub nodes: usize,
    pub k: usize,
    pub g: usize,
    pub d_max: usize,
    pub tree_nodes: usize,
    pub prop_calls: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub cases: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
    #[serde(skip)]
    pub case_stats: Vec<GradCheckCase>,
}

/// Smallest gradient magnitude a central difference at h = 1e-5 can certify
/// to 1e-6 relative error in f64: the difference of two ~0.1-magnitude
/// losses carries ~1e-11 of rounding noise after division by 2h, so entries
/// below this are indistinguishable from that noise. The suite resamples
/// instances carrying smaller nonzero entries; exact zeros stay (their
/// finite difference is exactly zero too, and a falsely-zero analytic
/// gradient would still be caught against a nonzero difference).
const MIN_CHECKABLE_GRAD: f64 = 1e-4;

/// Run the randomized suite: small random connected graphs, g in 1..=3,
/// k in 1..=2, alternating zero and uniform initialization, every variable
/// entry compared against the central finite difference.
pub fn grad_check(spec: &GradCheckSpec) -> Result<GradCheckReport> {
    grad_check_range(spec, 0, spec.cases)
}

/// The suite restricted to global case indices `lo..hi`; workers running
/// disjoint ranges produce exactly the sequential per-case results.
pub fn grad_check_range(spec: &GradCheckSpec, lo: usize, hi: usize) -> Result<GradCheckReport> {
    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    let mut case_stats = Vec::new();

    for case in lo..hi {
        let mut instance = None;
        for retry in 0..50u64 {
            let case_seed = spec.seed.wrapping_add(case as u64).wrapping_add(retry << 32);
            let candidate = build_case(case_seed, case)?;
            let conditioned = candidate
                .params
                .var_ids()
                .iter()
                .all(|&id| {
                    candidate.grads.buf.var(id).iter().all(|&v| v == 0.0 || v.abs() >= MIN_CHECKABLE_GRAD)
                });
            if conditioned {
                instance = Some(candidate);
                break;
            }
        }
        let CaseInstance {
            case_seed,
            mg,
            params,
            root,
            g_hops,
            kind,
            y_hat,
            tree,
            mut grads,
        } = instance.ok_or_else(|| {
            Error::Numeric(format!("gradcheck case {case}: no conditioned instance in 50 draws"))
        })?;

        if let Some(c) = &spec.corrupt {
            if c.case == case {
                grads.buf.var_mut(c.var)[c.entry] += c.delta;
            }
        }

        case_stats.push(GradCheckCase {
            seed: case_seed,
            nodes: mg.graph().node_count(),
            k: mg.k(),
            g: g_hops,
            d_max: mg.graph().stats().d_max,
            tree_nodes: tree.nodes.len(),
            prop_calls: grads.prop_calls,
        });

        for var in params.var_ids() {
            for entry in 0..params.var(var).len() {
                let fd = fd_gradient(&mg, &params, root, g_hops, var, entry, spec.h_step, &y_hat, kind)?;
                let got = grads.buf.var(var)[entry];
                let rel = relative_error(got, fd);
                max_rel = max_rel.max(rel);
                if rel > spec.tol {
                    failures.push(GradCheckFailure {
                        seed: case_seed,
                        tag: var.to_string(),
                        index: entry,
                        got,
                        want: fd,
                    });
                }
            }
        }
    }

    Ok(GradCheckReport {
        cases: hi - lo,
        max_rel_err: max_rel,
        failures,
        case_stats,
    })
}

struct CaseInstance {
    case_seed: u64,
    mg: ModelGraph,
    params: Params,
    root: NeuronId,
    g_hops: usize,
    kind: LossKind,
    y_hat: Vec<f64>,
    tree: SpanTree,
    grads: GradAccum,
}

/// Draw one suite instance and run the analytic sweep on it.
fn build_case(case_seed: u64, case: usize) -> Result<CaseInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let nodes = rng.gen_range(2..=8);
    let feature_dim = rng.gen_range(1..=3);
    let label_dim = rng.gen_range(1..=3);
    let graph = crate::graph::Graph::from_parts(
        (0..nodes).map(|i| format!("v{i}")).collect(),
        &random_connected_edges(&mut rng, nodes, 0.3),
        (0..nodes)
            .map(|_| (0..feature_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect(),
        (0..nodes)
            .map(|_| (0..label_dim).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
            .collect(),
    )?;
    let k = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
    let g_hops = rng.gen_range(1..=3);
    let root_node = rng.gen_range(0..nodes);
    let scheme = if case % 2 == 0 { InitScheme::Uniform(0.8) } else { InitScheme::Zeros };
    let kind = if case % 3 == 0 { LossKind::CrossEntropy } else { LossKind::Mse };

    let mg = build_model_graph(std::sync::Arc::new(graph), k, &hidden)?;
    let dims = mg.dims(feature_dim, label_dim);
    let params = init_params(&dims, case_seed, scheme)?;
    let root = NeuronId::output(root_node);
    let y_hat = mg.graph().labels_of(root_node).to_vec();

    let mut tree = extract(&mg, root, g_hops)?;
    attach_leaf_inputs(&mut tree, mg.graph());
    let tape = forward_tree(&tree, &params, mg.graph())?;
    let grads = prop_gradients(&tree, &tape, &params, &y_hat, kind)?;
    Ok(CaseInstance {
        case_seed,
        mg,
        params,
        root,
        g_hops,
        kind,
        y_hat,
        tree,
        grads,
    })
}

fn random_connected_edges(rng: &mut ChaCha8Rng, nodes: usize, extra_p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 1..nodes {
        let parent = rng.gen_range(0..i);
        edges.push((parent, i));
    }
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            if !edges.contains(&(i, j)) && rng.gen::<f64>() < extra_p {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::testutil::six_node_graph;
    use crate::graph::Graph;
    use crate::model::sigmoid;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn paper_setup(hidden: usize) -> (Graph, ModelGraph) {
        let graph = six_node_graph(4, 2);
        let mg = build_model_graph(Arc::new(graph.clone()), 1, &[hidden]).unwrap();
        (graph, mg)
    }

    fn tree_at(mg: &ModelGraph, graph: &Graph, node: usize, g: usize) -> SpanTree {
        let mut tree = extract(mg, NeuronId::output(node), g).unwrap();
        attach_leaf_inputs(&mut tree, graph);
        tree
    }

    #[test]
    fn zero_params_give_half_everywhere() {
        let (graph, mg) = paper_setup(8);
        let params = Params::zeros(mg.dims(4, 2));
        let tree = tree_at(&mg, &graph, 0, 3);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        for (node, entry) in tree.nodes.iter().zip(&tape.entries) {
            if node.neuron.kind == NeuronKind::Input {
                continue;
            }
            assert!(entry.value.iter().all(|&v| v == 0.5));
            assert!(entry.pre.as_ref().unwrap().iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn isolated_chain_with_zero_params() {
        let graph =
            Graph::from_parts(vec!["a".into()], &[], vec![vec![0.7]], vec![vec![0.0]]).unwrap();
        let mg = build_model_graph(Arc::new(graph.clone()), 1, &[1]).unwrap();
        let params = Params::zeros(mg.dims(1, 1));
        let tree = tree_at(&mg, &graph, 0, 2);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        assert_eq!(tape.entries[0].value, vec![0.5]); // y
        assert_eq!(tape.entries[1].value, vec![0.5]); // h
        assert_eq!(tape.entries[0].pre.as_deref(), Some(&[0.0][..]));
        assert_eq!(tape.entries[1].pre.as_deref(), Some(&[0.0][..]));
    }

    #[test]
    fn missing_leaf_input_is_a_state_error() {
        let (graph, mg) = paper_setup(4);
        let tree = extract(&mg, NeuronId::output(0), 3).unwrap(); // no attach
        let params = Params::zeros(mg.dims(4, 2));
        assert!(matches!(
            forward_tree(&tree, &params, &graph),
            Err(Error::State(_))
        ));
    }

    /// Independent recursive evaluator of the same tree equations, written
    /// against the tree structure directly.
    fn eval_node(tree: &SpanTree, params: &Params, graph: &Graph, i: usize) -> Vec<f64> {
        let node = &tree.nodes[i];
        match node.neuron.kind {
            NeuronKind::Input => graph.features_of(node.neuron.node).to_vec(),
            NeuronKind::Hidden(l) if node.children.is_empty() => {
                let mut v = node.leaf_input.clone().unwrap();
                for layer in 1..=l {
                    let tag = if layer == 1 { LinkTag::Input } else { LinkTag::Inter(layer) };
                    let mut z = params.bias(tag).to_vec();
                    params.weight(tag).matvec_add(&v, &mut z);
                    v = z.iter().map(|&x| sigmoid(x)).collect();
                }
                v
            }
            _ => {
                let width = match node.neuron.kind {
                    NeuronKind::Hidden(l) => params.dims.hidden[l - 1],
                    _ => params.dims.label,
                };
                let mut z = vec![0.0; width];
                for &c in &node.children {
                    let tag = tree.nodes[c].link_tag.unwrap();
                    let cv = eval_node(tree, params, graph, c);
                    params.weight(tag).matvec_add(&cv, &mut z);
                    for (zi, bi) in z.iter_mut().zip(params.bias(tag)) {
                        *zi += bi;
                    }
                }
                z.iter().map(|&x| sigmoid(x)).collect()
            }
        }
    }

    #[test]
    fn forward_matches_independent_unrolling() {
        let (graph, mg) = paper_setup(3);
        let params = init_params(&mg.dims(4, 2), 3, InitScheme::Uniform(0.5)).unwrap();
        let tree = tree_at(&mg, &graph, 0, 3);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let oracle = eval_node(&tree, &params, &graph, 0);
        for (a, b) in tape.root_value().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (graph, mg) = paper_setup(5);
        let params = init_params(&mg.dims(4, 2), 11, InitScheme::Uniform(0.5)).unwrap();
        let tree = tree_at(&mg, &graph, 2, 3);
        let a = forward_tree(&tree, &params, &graph).unwrap();
        let b = forward_tree(&tree, &params, &graph).unwrap();
        assert_eq!(a, b);
        for (e, _) in a.entries.iter().zip(&b.entries) {
            if let Some(pre) = &e.pre {
                for (z, v) in pre.iter().zip(&e.value) {
                    assert_eq!(sigmoid(*z).to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_residual_kills_all_gradients() {
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 5, InitScheme::Uniform(0.5)).unwrap();
        let tree = tree_at(&mg, &graph, 1, 2);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let y = tape.root_value().to_vec();
        let grads = prop_gradients(&tree, &tape, &params, &y, LossKind::Mse).unwrap();
        for id in grads.buf.var_ids() {
            assert!(grads.buf.var(id).iter().all(|&v| v == 0.0), "{id}");
        }
    }

    #[test]
    fn output_layer_grads_match_closed_form() {
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 9, InitScheme::Uniform(0.7)).unwrap();
        for node in 0..6 {
            let tree = tree_at(&mg, &graph, node, 3);
            let tape = forward_tree(&tree, &params, &graph).unwrap();
            let y_hat = graph.labels_of(node);
            let grads = prop_gradients(&tree, &tape, &params, y_hat, LossKind::Mse).unwrap();
            let (w, b) = output_layer_grads_from_tape(&tree, &tape, y_hat).unwrap();
            for (a, g) in w.iter().zip(grads.buf.w_output.iter()) {
                assert!((a - g).abs() <= 1e-12);
            }
            for (a, g) in b.iter().zip(&grads.buf.b_output) {
                assert!((a - g).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn prop_matches_finite_differences_smoke() {
        let spec = GradCheckSpec {
            cases: 10,
            seed: 7,
            ..GradCheckSpec::default()
        };
        let report = grad_check(&spec).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert!(report.max_rel_err < 1e-6, "{}", report.max_rel_err);
    }

    #[test]
    fn zeros_init_sits_in_the_near_linear_regime() {
        let graph =
            Graph::from_parts(vec!["a".into(), "b".into()], &[(0, 1)], vec![vec![0.3], vec![-0.2]], vec![vec![1.0], vec![0.0]]).unwrap();
        let mg = build_model_graph(Arc::new(graph.clone()), 1, &[2]).unwrap();
        let params = Params::zeros(mg.dims(1, 1));
        let root = NeuronId::output(0);
        let mut tree = extract(&mg, root, 2).unwrap();
        attach_leaf_inputs(&mut tree, &graph);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let grads = prop_gradients(&tree, &tape, &params, &[1.0], LossKind::Mse).unwrap();
        let mut worst = 0.0f64;
        for var in params.var_ids() {
            for entry in 0..params.var(var).len() {
                let fd = fd_gradient(&mg, &params, root, 2, var, entry, 1e-5, &[1.0], LossKind::Mse).unwrap();
                worst = worst.max(relative_error(grads.buf.var(var)[entry], fd));
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn fd_zero_residual_is_zero() {
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 5, InitScheme::Uniform(0.5)).unwrap();
        let root = NeuronId::output(1);
        let tree = tree_at(&mg, &graph, 1, 2);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let y = tape.root_value().to_vec();
        let fd = fd_gradient(&mg, &params, root, 2, VarId::WOutput, 0, 1e-5, &y, LossKind::Mse).unwrap();
        assert!(fd.abs() < 1e-9, "{fd}");
    }

    #[test]
    fn fd_halving_is_richardson_consistent() {
        // Near z = 0 the loss is locally smooth; halving the step changes the
        // central estimate by O(h^2).
        let graph =
            Graph::from_parts(vec!["a".into()], &[], vec![vec![0.5]], vec![vec![1.0]]).unwrap();
        let mg = build_model_graph(Arc::new(graph.clone()), 1, &[1]).unwrap();
        let params = Params::zeros(mg.dims(1, 1));
        let root = NeuronId::output(0);
        let h = 1e-3;
        let d1 = fd_gradient(&mg, &params, root, 2, VarId::BOutput, 0, h, &[1.0], LossKind::Mse).unwrap();
        let d2 = fd_gradient(&mg, &params, root, 2, VarId::BOutput, 0, h / 2.0, &[1.0], LossKind::Mse).unwrap();
        assert!((d1 - d2).abs() < 10.0 * h * h, "{d1} vs {d2}");
        assert!(d1.abs() > 1e-3); // the derivative itself is not trivially zero
    }

    #[test]
    fn bad_fd_arguments_are_rejected() {
        let (graph, mg) = paper_setup(2);
        let params = Params::zeros(mg.dims(4, 2));
        let _ = graph;
        assert!(matches!(
            fd_gradient(&mg, &params, NeuronId::output(0), 2, VarId::WOutput, 999, 1e-5, &[1.0, 0.0], LossKind::Mse),
            Err(Error::Bounds(_))
        ));
        assert!(matches!(
            fd_gradient(&mg, &params, NeuronId::output(0), 2, VarId::WOutput, 0, 0.0, &[1.0, 0.0], LossKind::Mse),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn absent_variable_tags_have_zero_gradients() {
        // g = 1 tree at y: the only tree link is h -> y; the leaf bootstrap
        // touches the input pair, so exactly the intra pair must stay zero.
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 13, InitScheme::Uniform(0.5)).unwrap();
        let tree = tree_at(&mg, &graph, 0, 1);
        assert_eq!(tree.nodes.len(), 2);
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let grads =
            prop_gradients(&tree, &tape, &params, graph.labels_of(0), LossKind::Mse).unwrap();
        assert!(grads.buf.w_intra[0].iter().all(|v| v == 0.0));
        assert!(grads.buf.b_intra[0].iter().all(|&v| v == 0.0));
        assert!(grads.buf.w_output.iter().any(|v| v != 0.0));
        assert!(grads.buf.w_input.iter().any(|v| v != 0.0));
        // And finite differences agree the loss is flat in the intra pair.
        for entry in 0..params.var(VarId::WIntra(1)).len() {
            let fd = fd_gradient(&mg, &params, NeuronId::output(0), 1, VarId::WIntra(1), entry, 1e-5, graph.labels_of(0), LossKind::Mse).unwrap();
            assert_eq!(fd, 0.0);
        }
    }

    #[test]
    fn loss_is_exactly_local_to_the_tree() {
        // Perturbing features of a node outside the tree leaves the loss
        // bit-identical.
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 21, InitScheme::Uniform(0.5)).unwrap();
        let tree = tree_at(&mg, &graph, 0, 2); // reaches v1..v4 only
        let tape = forward_tree(&tree, &params, &graph).unwrap();
        let base = tree_loss(&tree, &tape, graph.labels_of(0), LossKind::Mse).unwrap();

        let mut features: Vec<Vec<f64>> = (0..6).map(|i| graph.features_of(i).to_vec()).collect();
        features[4][0] += 10.0; // v5
        features[5][2] -= 3.0; // v6
        let labels: Vec<Vec<f64>> = (0..6).map(|i| graph.labels_of(i).to_vec()).collect();
        let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (3, 4), (4, 5)];
        let perturbed = Graph::from_parts(
            (1..=6).map(|i| format!("v{i}")).collect(),
            &edges,
            features,
            labels,
        )
        .unwrap();
        let mg2 = build_model_graph(Arc::new(perturbed.clone()), 1, &[4]).unwrap();
        let tree2 = tree_at(&mg2, &perturbed, 0, 2);
        let tape2 = forward_tree(&tree2, &params, &perturbed).unwrap();
        let moved = tree_loss(&tree2, &tape2, perturbed.labels_of(0), LossKind::Mse).unwrap();
        assert_eq!(base.to_bits(), moved.to_bits());
    }

    #[test]
    fn corrupted_gradient_trips_exactly_one_failure() {
        let spec = GradCheckSpec {
            cases: 5,
            seed: 7,
            corrupt: Some(Corruption {
                case: 2,
                var: VarId::WOutput,
                entry: 0,
                delta: 0.1,
            }),
            ..GradCheckSpec::default()
        };
        let report = grad_check(&spec).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].tag, "w_output");
        assert_eq!(report.failures[0].index, 0);
    }

    #[test]
    fn whole_graph_loss_is_the_sum_of_node_losses() {
        let (graph, mg) = paper_setup(4);
        let params = init_params(&mg.dims(4, 2), 17, InitScheme::Uniform(0.4)).unwrap();
        let total = graph_loss(&mg, &params, 2, LossKind::Mse).unwrap();
        let mut sum = 0.0;
        for node in 0..graph.node_count() {
            let y = predict(&mg, &params, node, 2).unwrap();
            sum += node_loss(&y, graph.labels_of(node), LossKind::Mse).unwrap();
        }
        assert!((total - sum).abs() <= 1e-12 * total.abs().max(1.0));
    }

    #[test]
    fn merge_is_entrywise_addition() {
        let (graph, mg) = paper_setup(3);
        let params = init_params(&mg.dims(4, 2), 23, InitScheme::Uniform(0.5)).unwrap();
        let mut total = GradAccum::zeros(params.dims.clone());
        let mut sum_calls = 0;
        for node in 0..3 {
            let tree = tree_at(&mg, &graph, node, 2);
            let tape = forward_tree(&tree, &params, &graph).unwrap();
            let g = prop_gradients(&tree, &tape, &params, graph.labels_of(node), LossKind::Mse).unwrap();
            sum_calls += g.prop_calls;
            total.merge(&g);
        }
        assert_eq!(total.prop_calls, sum_calls);
    }

    proptest! {
        /// prop_calls equals the link count of every extracted tree.
        #[test]
        fn prop_calls_equal_tree_links(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nodes = 2 + (seed as usize % 7);
            let graph = crate::graph::testutil::random_graph(&mut rng, nodes, 2, 1);
            let mg = build_model_graph(Arc::new(graph.clone()), 1, &[2]).unwrap();
            let params = init_params(&mg.dims(2, 1), seed, InitScheme::Uniform(0.5)).unwrap();
            let g = 1 + (seed as usize) % 3;
            let node = seed as usize % nodes;
            let mut tree = extract(&mg, NeuronId::output(node), g).unwrap();
            attach_leaf_inputs(&mut tree, &graph);
            let tape = forward_tree(&tree, &params, &graph).unwrap();
            let grads = prop_gradients(&tree, &tape, &params, graph.labels_of(node), LossKind::Mse).unwrap();
            prop_assert_eq!(grads.prop_calls as usize, tree.nodes.len() - 1);
        }
    }
}
