//! The neuron graph built over an input graph, its trainable parameters,
//! activations, losses, and the closed-form output-layer gradients used as a
//! unit-test oracle.
//!
//! For a graph with node set V and hidden depth k, the neuron graph has one
//! input neuron x_i, hidden neurons h_i^(1..k), and one output neuron y_i per
//! node. Inter-layer links form the chain x_i -> h_i^(1) -> ... -> h_i^(k) ->
//! y_i; intra-layer links connect h_j^(l) -> h_i^(l) in both directions for
//! every edge (v_i, v_j). The forward rule at a hidden neuron is an affine
//! map of each feeding neuron (weight and bias per link kind) summed and
//! passed through the logistic sigmoid.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::{Diameter, Graph};
use crate::linalg::Mat;
use crate::Result;

/// Layer a neuron lives in. Hidden layers are 1-based (1..=k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeuronKind {
    Input,
    Hidden(usize),
    Output,
}

impl NeuronKind {
    /// Canonical rank: input < hidden(1) < ... < hidden(k) < output.
    fn rank(self) -> usize {
        match self {
            NeuronKind::Input => 0,
            NeuronKind::Hidden(l) => l,
            NeuronKind::Output => usize::MAX,
        }
    }
}

/// Identity of one neuron: (kind, graph node index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeuronId {
    pub kind: NeuronKind,
    pub node: usize,
}

impl NeuronId {
    pub fn input(node: usize) -> Self {
        NeuronId { kind: NeuronKind::Input, node }
    }
    pub fn hidden(layer: usize, node: usize) -> Self {
        NeuronId { kind: NeuronKind::Hidden(layer), node }
    }
    pub fn output(node: usize) -> Self {
        NeuronId { kind: NeuronKind::Output, node }
    }
}

impl Ord for NeuronId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.kind.rank(), self.node).cmp(&(other.kind.rank(), other.node))
    }
}

impl PartialOrd for NeuronId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Which (weight, bias) pair parameterizes a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkTag {
    /// x_i -> h_i^(1)
    Input,
    /// h_j^(l) -> h_i^(l), same layer l
    Intra(usize),
    /// h_i^(l-1) -> h_i^(l); the value is the target layer l (2..=k)
    Inter(usize),
    /// h_i^(k) -> y_i
    Output,
}

/// One trainable variable (a weight matrix or bias vector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarId {
    WInput,
    BInput,
    /// Same-layer weight/bias of hidden layer l (1..=k).
    WIntra(usize),
    BIntra(usize),
    /// Layer-(l-1) to layer-l weight/bias, keyed by target layer l (2..=k).
    WInter(usize),
    BInter(usize),
    WOutput,
    BOutput,
}

impl VarId {
    pub fn is_weight(self) -> bool {
        matches!(self, VarId::WInput | VarId::WIntra(_) | VarId::WInter(_) | VarId::WOutput)
    }
}

impl std::fmt::Display for VarId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarId::WInput => write!(f, "w_input"),
            VarId::BInput => write!(f, "b_input"),
            VarId::WIntra(l) => write!(f, "w_intra_{l}"),
            VarId::BIntra(l) => write!(f, "b_intra_{l}"),
            VarId::WInter(l) => write!(f, "w_inter_{l}"),
            VarId::BInter(l) => write!(f, "b_inter_{l}"),
            VarId::WOutput => write!(f, "w_output"),
            VarId::BOutput => write!(f, "b_output"),
        }
    }
}

impl LinkTag {
    pub fn weight_var(self) -> VarId {
        match self {
            LinkTag::Input => VarId::WInput,
            LinkTag::Intra(l) => VarId::WIntra(l),
            LinkTag::Inter(l) => VarId::WInter(l),
            LinkTag::Output => VarId::WOutput,
        }
    }
    pub fn bias_var(self) -> VarId {
        match self {
            LinkTag::Input => VarId::BInput,
            LinkTag::Intra(l) => VarId::BIntra(l),
            LinkTag::Inter(l) => VarId::BInter(l),
            LinkTag::Output => VarId::BOutput,
        }
    }
}

/// The kind of (weight, bias) pair on a forward link `from -> to`, or `None`
/// if no such link exists in the model.
pub fn link_tag(from: NeuronId, to: NeuronId) -> Option<LinkTag> {
    match (from.kind, to.kind) {
        (NeuronKind::Input, NeuronKind::Hidden(1)) if from.node == to.node => Some(LinkTag::Input),
        (NeuronKind::Hidden(a), NeuronKind::Hidden(b)) if a == b => Some(LinkTag::Intra(a)),
        (NeuronKind::Hidden(a), NeuronKind::Hidden(b)) if a + 1 == b && from.node == to.node => {
            Some(LinkTag::Inter(b))
        }
        (NeuronKind::Hidden(_), NeuronKind::Output) if from.node == to.node => Some(LinkTag::Output),
        _ => None,
    }
}

/// Layer widths of the model: feature dim n, hidden widths m^(1..k), label dim d.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub feature: usize,
    pub hidden: Vec<usize>,
    pub label: usize,
}

impl Dims {
    pub fn k(&self) -> usize {
        self.hidden.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("hidden depth k must be >= 1".to_string()));
        }
        if self.feature == 0 || self.label == 0 || self.hidden.iter().any(|&m| m == 0) {
            return Err(Error::Config("all layer widths must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// The neuron graph for a [`Graph`] and hidden depth k. Links are derived
/// from the adjacency on the fly rather than materialized.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    graph: Arc<Graph>,
    k: usize,
    hidden_dims: Vec<usize>,
}

/// Build the neuron graph for `graph` with `k` hidden layers of the given widths.
pub fn build_model_graph(graph: Arc<Graph>, k: usize, hidden_dims: &[usize]) -> Result<ModelGraph> {
    if graph.node_count() == 0 {
        return Err(Error::Config("cannot build a model over an empty graph".to_string()));
    }
    if k == 0 {
        return Err(Error::Config("hidden depth k must be >= 1".to_string()));
    }
    if hidden_dims.len() != k {
        return Err(Error::Config(format!(
            "hidden_dims has {} entries, expected k = {k}",
            hidden_dims.len()
        )));
    }
    if hidden_dims.iter().any(|&m| m == 0) {
        return Err(Error::Config("hidden widths must be >= 1".to_string()));
    }
    Ok(ModelGraph {
        graph,
        k,
        hidden_dims: hidden_dims.to_vec(),
    })
}

impl ModelGraph {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn dims(&self, feature_dim: usize, label_dim: usize) -> Dims {
        Dims {
            feature: feature_dim,
            hidden: self.hidden_dims.clone(),
            label: label_dim,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.graph.node_count() * (self.k + 2)
    }

    pub fn intra_link_count(&self) -> usize {
        2 * self.graph.edge_count() * self.k
    }

    pub fn inter_link_count(&self) -> usize {
        self.graph.node_count() * (self.k + 1)
    }

    pub fn contains(&self, n: NeuronId) -> bool {
        n.node < self.graph.node_count()
            && match n.kind {
                NeuronKind::Input | NeuronKind::Output => true,
                NeuronKind::Hidden(l) => l >= 1 && l <= self.k,
            }
    }

    /// Dense index of a neuron within `0..neuron_count()`, for bitmaps.
    pub fn compact_index(&self, n: NeuronId) -> usize {
        let slot = match n.kind {
            NeuronKind::Input => 0,
            NeuronKind::Hidden(l) => l,
            NeuronKind::Output => self.k + 1,
        };
        n.node * (self.k + 2) + slot
    }

    /// Width of the vector a neuron carries.
    pub fn width_of(&self, n: NeuronId, feature_dim: usize, label_dim: usize) -> usize {
        match n.kind {
            NeuronKind::Input => feature_dim,
            NeuronKind::Hidden(l) => self.hidden_dims[l - 1],
            NeuronKind::Output => label_dim,
        }
    }

    /// Neurons feeding `n` (sources of forward links into `n`), in canonical
    /// order: the inter-layer source first, then same-layer neighbors by
    /// ascending node index.
    pub fn feeds(&self, n: NeuronId, out: &mut Vec<NeuronId>) {
        out.clear();
        match n.kind {
            NeuronKind::Input => {}
            NeuronKind::Hidden(l) => {
                if l == 1 {
                    out.push(NeuronId::input(n.node));
                } else {
                    out.push(NeuronId::hidden(l - 1, n.node));
                }
                for &j in self.graph.adj(n.node) {
                    out.push(NeuronId::hidden(l, j));
                }
            }
            NeuronKind::Output => out.push(NeuronId::hidden(self.k, n.node)),
        }
    }

    /// All directed forward links; intended for small graphs in tests.
    pub fn all_links(&self) -> Vec<(NeuronId, NeuronId)> {
        let mut links = Vec::new();
        let mut buf = Vec::new();
        for node in 0..self.graph.node_count() {
            for l in 1..=self.k {
                let target = NeuronId::hidden(l, node);
                self.feeds(target, &mut buf);
                links.extend(buf.iter().map(|&f| (f, target)));
            }
            links.push((NeuronId::hidden(self.k, node), NeuronId::output(node)));
        }
        links
    }

    /// Diameter of the neuron graph with link directions ignored.
    pub fn diameter(&self) -> Diameter {
        let total = self.neuron_count();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
        for (from, to) in self.all_links() {
            let (a, b) = (self.compact_index(from), self.compact_index(to));
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut diameter = 0usize;
        for start in 0..total {
            let mut dist = vec![None; total];
            let mut queue = std::collections::VecDeque::new();
            dist[start] = Some(0usize);
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                let du = dist[u].unwrap();
                for &v in &adj[u] {
                    if dist[v].is_none() {
                        dist[v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
            for d in dist {
                match d {
                    Some(d) => diameter = diameter.max(d),
                    None => return Diameter::Infinite,
                }
            }
        }
        Diameter::Finite(diameter)
    }
}

/// All trainable variables of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub dims: Dims,
    /// m^(1) x n
    pub w_input: Mat,
    pub b_input: Vec<f64>,
    /// Per layer l in 1..=k: m^(l) x m^(l), indexed by l-1.
    pub w_intra: Vec<Mat>,
    pub b_intra: Vec<Vec<f64>>,
    /// Per layer l in 2..=k: m^(l) x m^(l-1), indexed by l-2.
    pub w_inter: Vec<Mat>,
    pub b_inter: Vec<Vec<f64>>,
    /// d x m^(k)
    pub w_output: Mat,
    pub b_output: Vec<f64>,
}

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Zeros,
    /// Entries drawn uniformly from [-a, a].
    Uniform(f64),
}

/// Deterministically initialize parameters for `dims`.
pub fn init_params(dims: &Dims, seed: u64, scheme: InitScheme) -> Result<Params> {
    dims.validate()?;
    if let InitScheme::Uniform(a) = scheme {
        if a <= 0.0 {
            return Err(Error::Config("uniform init scale must be > 0".to_string()));
        }
    }
    let mut params = Params::zeros(dims.clone());
    if let InitScheme::Uniform(a) = scheme {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in params.var_ids() {
            for v in params.var_mut(id) {
                *v = rng.gen_range(-a..=a);
            }
        }
    }
    Ok(params)
}

impl Params {
    pub fn zeros(dims: Dims) -> Params {
        let k = dims.k();
        let m = &dims.hidden;
        Params {
            w_input: Mat::zeros(m[0], dims.feature),
            b_input: vec![0.0; m[0]],
            w_intra: (0..k).map(|i| Mat::zeros(m[i], m[i])).collect(),
            b_intra: (0..k).map(|i| vec![0.0; m[i]]).collect(),
            w_inter: (1..k).map(|i| Mat::zeros(m[i], m[i - 1])).collect(),
            b_inter: (1..k).map(|i| vec![0.0; m[i]]).collect(),
            w_output: Mat::zeros(dims.label, m[k - 1]),
            b_output: vec![0.0; dims.label],
            dims,
        }
    }

    /// Every variable id, in canonical order.
    pub fn var_ids(&self) -> Vec<VarId> {
        let k = self.dims.k();
        let mut ids = vec![VarId::WInput, VarId::BInput];
        for l in 1..=k {
            ids.push(VarId::WIntra(l));
            ids.push(VarId::BIntra(l));
        }
        for l in 2..=k {
            ids.push(VarId::WInter(l));
            ids.push(VarId::BInter(l));
        }
        ids.push(VarId::WOutput);
        ids.push(VarId::BOutput);
        ids
    }

    pub fn weight(&self, tag: LinkTag) -> &Mat {
        match tag {
            LinkTag::Input => &self.w_input,
            LinkTag::Intra(l) => &self.w_intra[l - 1],
            LinkTag::Inter(l) => &self.w_inter[l - 2],
            LinkTag::Output => &self.w_output,
        }
    }

    pub fn bias(&self, tag: LinkTag) -> &[f64] {
        match tag {
            LinkTag::Input => &self.b_input,
            LinkTag::Intra(l) => &self.b_intra[l - 1],
            LinkTag::Inter(l) => &self.b_inter[l - 2],
            LinkTag::Output => &self.b_output,
        }
    }

    /// Flat view of one variable's entries (matrices row-major).
    pub fn var(&self, id: VarId) -> &[f64] {
        match id {
            VarId::WInput => &self.w_input.data,
            VarId::BInput => &self.b_input,
            VarId::WIntra(l) => &self.w_intra[l - 1].data,
            VarId::BIntra(l) => &self.b_intra[l - 1],
            VarId::WInter(l) => &self.w_inter[l - 2].data,
            VarId::BInter(l) => &self.b_inter[l - 2],
            VarId::WOutput => &self.w_output.data,
            VarId::BOutput => &self.b_output,
        }
    }

    pub fn var_mut(&mut self, id: VarId) -> &mut [f64] {
        match id {
            VarId::WInput => &mut self.w_input.data,
            VarId::BInput => &mut self.b_input,
            VarId::WIntra(l) => &mut self.w_intra[l - 1].data,
            VarId::BIntra(l) => &mut self.b_intra[l - 1],
            VarId::WInter(l) => &mut self.w_inter[l - 2].data,
            VarId::BInter(l) => &mut self.b_inter[l - 2],
            VarId::WOutput => &mut self.w_output.data,
            VarId::BOutput => &mut self.b_output,
        }
    }

    pub fn entry_count(&self) -> usize {
        self.var_ids().iter().map(|&id| self.var(id).len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.var_ids()
            .iter()
            .all(|&id| self.var(id).iter().all(|v| v.is_finite()))
    }

    /// Serialize to the single-document JSON format: dims header plus flat
    /// row-major arrays. Finite doubles round-trip bit-exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ParamsFile::from(self)).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Params> {
        let file: ParamsFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("params JSON: {e}")))?;
        file.into_params()
    }
}

/// On-disk params schema: dims header + flat row-major arrays.
#[derive(Serialize, Deserialize)]
struct ParamsFile {
    dims: Dims,
    w_input: Vec<f64>,
    b_input: Vec<f64>,
    w_intra: Vec<Vec<f64>>,
    b_intra: Vec<Vec<f64>>,
    w_inter: Vec<Vec<f64>>,
    b_inter: Vec<Vec<f64>>,
    w_output: Vec<f64>,
    b_output: Vec<f64>,
}

impl From<&Params> for ParamsFile {
    fn from(p: &Params) -> Self {
        ParamsFile {
            dims: p.dims.clone(),
            w_input: p.w_input.data.clone(),
            b_input: p.b_input.clone(),
            w_intra: p.w_intra.iter().map(|m| m.data.clone()).collect(),
            b_intra: p.b_intra.clone(),
            w_inter: p.w_inter.iter().map(|m| m.data.clone()).collect(),
            b_inter: p.b_inter.clone(),
            w_output: p.w_output.data.clone(),
            b_output: p.b_output.clone(),
        }
    }
}

impl ParamsFile {
    fn into_params(self) -> Result<Params> {
        self.dims.validate()?;
        let mut p = Params::zeros(self.dims.clone());
        let fill = |dst: &mut [f64], src: Vec<f64>, what: &str| -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::Shape(format!(
                    "params JSON: {what} has {} entries, dims imply {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&src);
            Ok(())
        };
        fill(&mut p.w_input.data, self.w_input, "w_input")?;
        fill(&mut p.b_input, self.b_input, "b_input")?;
        let k = p.dims.k();
        if self.w_intra.len() != k || self.b_intra.len() != k {
            return Err(Error::Shape("params JSON: w_intra/b_intra layer count mismatch".to_string()));
        }
        if self.w_inter.len() != k - 1 || self.b_inter.len() != k - 1 {
            return Err(Error::Shape("params JSON: w_inter/b_inter layer count mismatch".to_string()));
        }
        for (l, src) in self.w_intra.into_iter().enumerate() {
            fill(&mut p.w_intra[l].data, src, "w_intra")?;
        }
        for (l, src) in self.b_intra.into_iter().enumerate() {
            fill(&mut p.b_intra[l], src, "b_intra")?;
        }
        for (l, src) in self.w_inter.into_iter().enumerate() {
            fill(&mut p.w_inter[l].data, src, "w_inter")?;
        }
        for (l, src) in self.b_inter.into_iter().enumerate() {
            fill(&mut p.b_inter[l], src, "b_inter")?;
        }
        fill(&mut p.w_output.data, self.w_output, "w_output")?;
        fill(&mut p.b_output, self.b_output, "b_output")?;
        Ok(p)
    }
}

/// Logistic sigmoid, entry-wise.
pub fn activation(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| sigmoid(v)).collect()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// σ'(z) computed from the post-activation value v = σ(z): v (1 - v).
pub fn activation_deriv(value: &[f64]) -> Vec<f64> {
    value.iter().map(|&v| v * (1.0 - v)).collect()
}

/// Node loss functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

const CE_CLAMP: f64 = 1e-12;

fn clamp_prob(y: f64) -> f64 {
    y.clamp(CE_CLAMP, 1.0 - CE_CLAMP)
}

/// E(v) for one node: mse = 1/2 Σ (y - ŷ)²; cross-entropy with predictions
/// clamped to [1e-12, 1-1e-12].
pub fn node_loss(y: &[f64], y_hat: &[f64], kind: LossKind) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "loss: prediction has {} entries, label has {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(match kind {
        LossKind::Mse => 0.5 * y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        LossKind::CrossEntropy => y
            .iter()
            .zip(y_hat)
            .map(|(&yv, &t)| {
                let p = clamp_prob(yv);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum(),
    })
}

/// ∂E/∂y for one node.
pub fn node_loss_grad(y: &[f64], y_hat: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "loss grad: prediction has {} entries, label has {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(match kind {
        LossKind::Mse => y.iter().zip(y_hat).map(|(a, b)| a - b).collect(),
        LossKind::CrossEntropy => y
            .iter()
            .zip(y_hat)
            .map(|(&yv, &t)| {
                let p = clamp_prob(yv);
                -t / p + (1.0 - t) / (1.0 - p)
            })
            .collect(),
    })
}

/// Closed-form mean-square-error gradients of the output-layer variables for
/// one node: entry (j, e) of the weight gradient is
/// (y(j) - ŷ(j)) · y(j)(1 - y(j)) · h(e), and the bias gradient drops the h
/// factor. `h` is the top hidden state h^(k), `y` the node output.
pub fn output_layer_grads(h: &[f64], y: &[f64], y_hat: &[f64]) -> Result<(Mat, Vec<f64>)> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape("output grads: y and ŷ lengths differ".to_string()));
    }
    let mut w = Mat::zeros(y.len(), h.len());
    let mut b = vec![0.0; y.len()];
    for j in 0..y.len() {
        let delta = (y[j] - y_hat[j]) * y[j] * (1.0 - y[j]);
        b[j] = delta;
        for e in 0..h.len() {
            w.set(j, e, delta * h[e]);
        }
    }
    Ok((w, b))
}
