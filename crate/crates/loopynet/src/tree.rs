//! g-hop subgraphs and rooted spanning trees of the neuron graph.
//!
//! Error information can only travel against the forward links, so both
//! structures are built by BFS over reversed links from the root. The
//! spanning tree places every reachable neuron at its BFS hop depth exactly
//! once; parents claim unclaimed feeding neurons in canonical order (inter-
//! layer source first, then same-layer neighbors by ascending node index),
//! which makes extraction deterministic byte for byte.

use serde::Serialize;

use crate::error::Error;
use crate::graph::Graph;
use crate::model::{link_tag, LinkTag, ModelGraph, NeuronId, NeuronKind};
use crate::Result;

/// Neurons reachable from the root within g reversed hops.
///
/// Non-root output neurons are never members: no link leaves an output
/// neuron, so nothing can be propagated to them.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGraph {
    pub root: NeuronId,
    pub g: usize,
    /// BFS visit order; `members[0]` is the root.
    pub members: Vec<NeuronId>,
    /// Reversed-BFS hop distance of each member, parallel to `members`.
    pub hops: Vec<usize>,
    /// Forward links of the model with both endpoints among the members.
    pub links: Vec<(NeuronId, NeuronId)>,
}

/// BFS over reversed links from `root`, up to `g` hops inclusive.
pub fn extract_subgraph(mg: &ModelGraph, root: NeuronId, g: usize) -> Result<SubGraph> {
    if g < 1 {
        return Err(Error::Config("subgraph radius g must be >= 1".to_string()));
    }
    if !mg.contains(root) {
        return Err(Error::Bounds(format!("root neuron {root:?} is not in the model graph")));
    }

    let mut visited = vec![false; mg.neuron_count()];
    let mut members = Vec::new();
    let mut hops = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    visited[mg.compact_index(root)] = true;
    members.push(root);
    hops.push(0);
    queue.push_back((root, 0usize));

    let mut feeds = Vec::new();
    while let Some((u, d)) = queue.pop_front() {
        if d == g {
            continue;
        }
        mg.feeds(u, &mut feeds);
        for &f in &feeds {
            let idx = mg.compact_index(f);
            if !visited[idx] {
                visited[idx] = true;
                members.push(f);
                hops.push(d + 1);
                queue.push_back((f, d + 1));
            }
        }
    }

    let mut links = Vec::new();
    for &u in &members {
        mg.feeds(u, &mut feeds);
        for &f in &feeds {
            if visited[mg.compact_index(f)] {
                links.push((f, u));
            }
        }
    }

    Ok(SubGraph {
        root,
        g,
        members,
        hops,
        links,
    })
}

/// One placed neuron of a spanning tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub neuron: NeuronId,
    pub depth: usize,
    /// Index of the parent in `SpanTree::nodes`; `None` for the root.
    pub parent: Option<usize>,
    /// Indices of children, in claim order.
    pub children: Vec<usize>,
    /// Variable pair on the link to the parent; `None` for the root.
    pub link_tag: Option<LinkTag>,
    /// Raw feature vector attached to leaf hidden neurons for bootstrapping.
    pub leaf_input: Option<Vec<f64>>,
}

/// A g-hop rooted spanning tree: every subgraph member appears exactly once,
/// at its BFS depth, with a single parent.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanTree {
    pub root: NeuronId,
    pub g: usize,
    /// BFS claim order; `nodes[0]` is the root, parents precede children.
    pub nodes: Vec<TreeNode>,
}

/// Extract the BFS spanning tree of a subgraph.
pub fn extract_tree(mg: &ModelGraph, sg: &SubGraph) -> SpanTree {
    let mut claimed = vec![usize::MAX; mg.neuron_count()];
    let mut nodes = vec![TreeNode {
        neuron: sg.root,
        depth: 0,
        parent: None,
        children: Vec::new(),
        link_tag: None,
        leaf_input: None,
    }];
    claimed[mg.compact_index(sg.root)] = 0;

    let member = {
        let mut set = vec![false; mg.neuron_count()];
        for &m in &sg.members {
            set[mg.compact_index(m)] = true;
        }
        set
    };

    let mut feeds = Vec::new();
    let mut cursor = 0;
    while cursor < nodes.len() {
        let (u, depth) = (nodes[cursor].neuron, nodes[cursor].depth);
        if depth == sg.g {
            cursor += 1;
            continue;
        }
        mg.feeds(u, &mut feeds);
        for &f in &feeds {
            let idx = mg.compact_index(f);
            if member[idx] && claimed[idx] == usize::MAX {
                claimed[idx] = nodes.len();
                let child = nodes.len();
                nodes.push(TreeNode {
                    neuron: f,
                    depth: depth + 1,
                    parent: Some(cursor),
                    children: Vec::new(),
                    link_tag: link_tag(f, u),
                    leaf_input: None,
                });
                nodes[cursor].children.push(child);
            }
        }
        cursor += 1;
    }

    debug_assert_eq!(nodes.len(), sg.members.len(), "tree must span the subgraph");
    SpanTree {
        root: sg.root,
        g: sg.g,
        nodes,
    }
}

/// Extract the spanning tree rooted at `root` in one step.
pub fn extract(mg: &ModelGraph, root: NeuronId, g: usize) -> Result<SpanTree> {
    let sg = extract_subgraph(mg, root, g)?;
    Ok(extract_tree(mg, &sg))
}

/// Attach each node's raw feature vector to leaf hidden neurons; the forward
/// pass bootstraps their state from it.
pub fn attach_leaf_inputs(tree: &mut SpanTree, graph: &Graph) {
    for node in &mut tree.nodes {
        if node.children.is_empty() && matches!(node.neuron.kind, NeuronKind::Hidden(_)) {
            node.leaf_input = Some(graph.features_of(node.neuron.node).to_vec());
        }
    }
}

impl SpanTree {
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn node_count_excl_root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Neurons at a given depth, in claim order.
    pub fn at_depth(&self, depth: usize) -> Vec<NeuronId> {
        self.nodes
            .iter()
            .filter(|n| n.depth == depth)
            .map(|n| n.neuron)
            .collect()
    }

    pub fn contains(&self, neuron: NeuronId) -> bool {
        self.nodes.iter().any(|n| n.neuron == neuron)
    }

    /// Distinct link tags present in the tree.
    pub fn tags(&self) -> Vec<LinkTag> {
        let mut tags: Vec<LinkTag> = Vec::new();
        for n in &self.nodes {
            if let Some(t) = n.link_tag {
                if !tags.contains(&t) {
                    tags.push(t);
                }
            }
        }
        tags
    }

    /// Canonical JSON dump for inspection and golden-file comparison.
    pub fn to_json(&self, graph: &Graph) -> String {
        #[derive(Serialize)]
        struct NodeDump<'a> {
            kind: &'static str,
            layer: Option<usize>,
            node: &'a str,
            depth: usize,
            parent: Option<usize>,
            tag: Option<String>,
        }
        #[derive(Serialize)]
        struct TreeDump<'a> {
            root: String,
            g: usize,
            nodes: Vec<NodeDump<'a>>,
        }
        let dump = TreeDump {
            root: neuron_name(self.root, graph),
            g: self.g,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    kind: match n.neuron.kind {
                        NeuronKind::Input => "input",
                        NeuronKind::Hidden(_) => "hidden",
                        NeuronKind::Output => "output",
                    },
                    layer: match n.neuron.kind {
                        NeuronKind::Hidden(l) => Some(l),
                        _ => None,
                    },
                    node: graph.node_id(n.neuron.node),
                    depth: n.depth,
                    parent: n.parent,
                    tag: n.link_tag.map(tag_name),
                })
                .collect(),
        };
        serde_json::to_string(&dump).expect("tree serialize")
    }
}

/// Human-readable neuron name, e.g. `x(v1)`, `h1(v3)`, `y(v6)`.
pub fn neuron_name(n: NeuronId, graph: &Graph) -> String {
    let id = graph.node_id(n.node);
    match n.kind {
        NeuronKind::Input => format!("x({id})"),
        NeuronKind::Hidden(l) => format!("h{l}({id})"),
        NeuronKind::Output => format!("y({id})"),
    }
}

fn tag_name(tag: LinkTag) -> String {
    match tag {
        LinkTag::Input => "input".to_string(),
        LinkTag::Intra(l) => format!("intra_{l}"),
        LinkTag::Inter(l) => format!("inter_{l}"),
        LinkTag::Output => "output".to_string(),
    }
}

/// The Prop-call bound of a tree of depth g over a graph of maximum degree
/// d_max, in exact integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropBound {
    Exact(u64),
    /// The bound exceeds 64 bits.
    Saturated,
}

/// ((d_max + 1)^(g+1) - d_max - 1) / d_max, the geometric sum
/// (d_max+1) + (d_max+1)^2 + ... + (d_max+1)^g.
pub fn prop_call_bound(d_max: usize, g: usize) -> Result<PropBound> {
    if d_max < 1 {
        return Err(Error::Config("prop-call bound requires d_max >= 1".to_string()));
    }
    let base = d_max as u128 + 1;
    let mut pow: u128 = 1;
    for _ in 0..=g {
        pow = match pow.checked_mul(base) {
            Some(p) => p,
            None => return Ok(PropBound::Saturated),
        };
    }
    let bound = (pow - base) / d_max as u128;
    Ok(u64::try_from(bound).map(PropBound::Exact).unwrap_or(PropBound::Saturated))
}

/// Size, depth, and Theorem-style call bound of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeStats {
    pub node_count_excl_root: usize,
    pub depth: usize,
    pub prop_call_bound: PropBound,
}

pub fn tree_stats(tree: &SpanTree, d_max: usize, g: usize) -> Result<TreeStats> {
    Ok(TreeStats {
        node_count_excl_root: tree.node_count_excl_root(),
        depth: tree.depth(),
        prop_call_bound: prop_call_bound(d_max, g)?,
    })
}
