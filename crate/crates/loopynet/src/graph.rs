//! Input graphs: loading, validation, queries, and synthetic generation.
//!
//! A [`Graph`] is an undirected adjacency structure over string-identified
//! nodes, plus one feature vector and one label vector per node. Loading is
//! two-phase: an edge list yields a [`Skeleton`] (nodes + adjacency), node
//! tables then attach features and labels.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::Read;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Node ordering produced by the loaders.
///
/// `FirstAppearance` indexes nodes in the order the edge list mentions them;
/// `SortedId` re-indexes by ascending node id and is what every golden
/// fixture uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexingMode {
    #[default]
    FirstAppearance,
    SortedId,
}

/// Nodes and adjacency only; features and labels not yet attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub node_ids: Vec<String>,
    adjacency: Vec<BTreeSet<usize>>,
    /// Count of `v<TAB>v` lines dropped on load.
    pub self_loops_dropped: usize,
}

impl Skeleton {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|s| s.len()).sum::<usize>() / 2
    }

    /// Re-index nodes by ascending id (the canonical mode).
    pub fn reindex_sorted(self) -> Skeleton {
        let mut order: Vec<usize> = (0..self.node_ids.len()).collect();
        order.sort_by(|&a, &b| self.node_ids[a].cmp(&self.node_ids[b]));
        let mut new_index = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let mut adjacency = vec![BTreeSet::new(); order.len()];
        for (old, set) in self.adjacency.iter().enumerate() {
            for &nb in set {
                adjacency[new_index[old]].insert(new_index[nb]);
            }
        }
        Skeleton {
            node_ids: order.into_iter().map(|o| self.node_ids[o].clone()).collect(),
            adjacency,
            self_loops_dropped: self.self_loops_dropped,
        }
    }

    pub fn apply_indexing(self, mode: IndexingMode) -> Skeleton {
        match mode {
            IndexingMode::FirstAppearance => self,
            IndexingMode::SortedId => self.reindex_sorted(),
        }
    }

    fn index_of(&self) -> HashMap<&str, usize> {
        self.node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// Parse edge-list text: one `src<TAB>dst` per line, `#` comments ignored,
/// edges deduplicated, self-loops dropped (counted), adjacency symmetrized.
pub fn parse_edge_list(text: &str) -> Result<Skeleton> {
    let mut node_ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut adjacency: Vec<BTreeSet<usize>> = Vec::new();
    let mut self_loops = 0usize;

    let mut intern = |id: &str, node_ids: &mut Vec<String>, adjacency: &mut Vec<BTreeSet<usize>>| {
        if let Some(&i) = index.get(id) {
            return i;
        }
        let i = node_ids.len();
        node_ids.push(id.to_string());
        adjacency.push(BTreeSet::new());
        index.insert(id.to_string(), i);
        i
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse(format!(
                "line {}: expected `src<TAB>dst`, got {:?}",
                lineno + 1,
                raw
            )));
        }
        let a = intern(fields[0], &mut node_ids, &mut adjacency);
        let b = intern(fields[1], &mut node_ids, &mut adjacency);
        if a == b {
            self_loops += 1;
            continue;
        }
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }

    Ok(Skeleton {
        node_ids,
        adjacency,
        self_loops_dropped: self_loops,
    })
}

/// Load an edge list from a file. See [`parse_edge_list`] for the format.
pub fn load_edge_list(path: &Path) -> Result<Skeleton> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io_open(path, e))?;
    parse_edge_list(&text)
}

/// Which per-node table a CSV provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Features,
    Labels,
}

/// A per-node dense table aligned to a skeleton's node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Parse a node table (`id,c0,c1,...` CSV) against a skeleton. Every node
/// must appear exactly once; label values must lie in [0, 1].
pub fn parse_node_table<R: Read>(reader: R, skeleton: &Skeleton, kind: TableKind) -> Result<NodeTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("node table: {e}")))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("id") {
        return Err(Error::Parse(
            "node table: header must start with an `id` column".to_string(),
        ));
    }
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(Error::Schema(
            "node table: no value columns after `id`".to_string(),
        ));
    }

    let index = skeleton.index_of();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; skeleton.node_count()];
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(format!("node table: {e}")))?;
        let id = record.get(0).unwrap_or("");
        let &node = index
            .get(id)
            .ok_or_else(|| Error::Schema(format!("node table row for unknown node {id}")))?;
        if rows[node].is_some() {
            return Err(Error::Schema(format!("duplicate node table row for {id}")));
        }
        let mut values = Vec::with_capacity(dim);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("node {id}, column c{col}: not a number: {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "node {id}, column c{col}: non-finite value"
                )));
            }
            if kind == TableKind::Labels && !(0.0..=1.0).contains(&v) {
                return Err(Error::Range(format!(
                    "label for node {id}, column c{col}: {v} outside [0, 1]"
                )));
            }
            values.push(v);
        }
        rows[node] = Some(values);
    }

    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Schema(format!(
                    "node table missing row for node {}",
                    skeleton.node_ids[i]
                )))
            }
        }
    }
    Ok(NodeTable { dim, rows: out })
}

/// Load a node table CSV from a file.
pub fn load_node_table(path: &Path, skeleton: &Skeleton, kind: TableKind) -> Result<NodeTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io_open(path, e))?;
    parse_node_table(file, skeleton, kind)
}

/// Finite or flagged-infinite graph diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diameter {
    Finite(usize),
    /// The graph is disconnected.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub d_max: usize,
    pub diameter: Diameter,
}

/// The input graph: undirected adjacency plus per-node features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_ids: Vec<String>,
    index_of: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    features: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
    feature_dim: usize,
    label_dim: usize,
}

impl Graph {
    /// Combine a skeleton with its feature and label tables.
    pub fn assemble(skeleton: Skeleton, features: NodeTable, labels: NodeTable) -> Result<Graph> {
        let adjacency: Vec<Vec<usize>> = skeleton
            .adjacency
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        Graph::validate_parts(skeleton.node_ids, adjacency, features, labels)
    }

    /// Build directly from parts; used by the synthetic generator and tests.
    /// `edges` are undirected pairs of node indices.
    pub fn from_parts(
        node_ids: Vec<String>,
        edges: &[(usize, usize)],
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<f64>>,
    ) -> Result<Graph> {
        let n = node_ids.len();
        let mut adj = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Bounds(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                continue;
            }
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let adjacency: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().copied().collect()).collect();
        let feature_dim = features.first().map(|f| f.len()).unwrap_or(0);
        let label_dim = labels.first().map(|l| l.len()).unwrap_or(0);
        Graph::validate_parts(
            node_ids,
            adjacency,
            NodeTable {
                dim: feature_dim,
                rows: features,
            },
            NodeTable {
                dim: label_dim,
                rows: labels,
            },
        )
    }

    fn validate_parts(
        node_ids: Vec<String>,
        adjacency: Vec<Vec<usize>>,
        features: NodeTable,
        labels: NodeTable,
    ) -> Result<Graph> {
        let n = node_ids.len();
        if features.rows.len() != n || labels.rows.len() != n {
            return Err(Error::Shape(format!(
                "graph has {n} nodes but {} feature rows and {} label rows",
                features.rows.len(),
                labels.rows.len()
            )));
        }
        if features.dim == 0 || labels.dim == 0 {
            return Err(Error::Config("feature and label dimensions must be >= 1".to_string()));
        }
        for (i, row) in features.rows.iter().enumerate() {
            if row.len() != features.dim {
                return Err(Error::Shape(format!(
                    "feature row for {} has length {}, expected {}",
                    node_ids[i],
                    row.len(),
                    features.dim
                )));
            }
        }
        for (i, row) in labels.rows.iter().enumerate() {
            if row.len() != labels.dim {
                return Err(Error::Shape(format!(
                    "label row for {} has length {}, expected {}",
                    node_ids[i],
                    row.len(),
                    labels.dim
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Range(format!(
                    "label for node {}: {v} outside [0, 1]",
                    node_ids[i]
                )));
            }
        }
        // Adjacency is built from sets keyed both ways, so symmetry and
        // no-self-loop hold by construction; assert in debug builds.
        debug_assert!(adjacency
            .iter()
            .enumerate()
            .all(|(i, nbs)| nbs.iter().all(|&j| j != i && adjacency[j].contains(&i))));
        let index_of = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Graph {
            node_ids,
            index_of,
            adjacency,
            feature_dim: features.dim,
            label_dim: labels.dim,
            features: features.rows,
            labels: labels.rows,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, i: usize) -> &str {
        &self.node_ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index_of.get(id).copied()
    }

    /// Γ(v_i), sorted ascending. Bounds-checked.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Bounds(format!("node index {i} out of range ({} nodes)", self.node_count())))
    }

    /// Γ(v_i) without the bounds check; callers hold a valid index.
    #[inline]
    pub fn adj(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn features_of(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels_of(&self, i: usize) -> &[f64] {
        &self.labels[i]
    }

    /// Maximum degree and BFS diameter (flagged infinite when disconnected).
    pub fn stats(&self) -> GraphStats {
        let d_max = self.adjacency.iter().map(|a| a.len()).max().unwrap_or(0);
        let n = self.node_count();
        let mut diameter = 0usize;
        for start in 0..n {
            let dist = self.bfs_distances(start);
            for d in &dist {
                match d {
                    Some(d) => diameter = diameter.max(*d),
                    None => {
                        return GraphStats {
                            d_max,
                            diameter: Diameter::Infinite,
                        }
                    }
                }
            }
        }
        GraphStats {
            d_max,
            diameter: Diameter::Finite(diameter),
        }
    }

    /// BFS hop distances from `start`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        dist[start] = Some(0);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in self.adj(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() <= 1
            || self.bfs_distances(0).iter().all(|d| d.is_some())
    }
}

/// Parameters of the planted-partition synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub blocks: usize,
    pub nodes_per_block: usize,
    /// Within-block edge probability.
    pub p_in: f64,
    /// Between-block edge probability.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Must equal `blocks`: labels are one-hot block membership.
    pub label_dim: usize,
    /// Features are the block prototype plus uniform noise in [-noise, noise].
    pub noise: f64,
}

/// Deterministic planted-partition graph: one-hot block labels, features are
/// a per-block prototype plus uniform noise.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Graph> {
    if !(0.0..=1.0).contains(&spec.p_in) || !(0.0..=1.0).contains(&spec.p_out) {
        return Err(Error::Config("p_in and p_out must lie in [0, 1]".to_string()));
    }
    if spec.feature_dim < 1 || spec.label_dim < 1 {
        return Err(Error::Config("feature_dim and label_dim must be >= 1".to_string()));
    }
    let n = spec.blocks * spec.nodes_per_block;
    if n == 0 {
        return Err(Error::Config("synthetic spec produces 0 nodes".to_string()));
    }
    if spec.label_dim != spec.blocks {
        return Err(Error::Config(format!(
            "label_dim ({}) must equal blocks ({}) for one-hot labels",
            spec.label_dim, spec.blocks
        )));
    }
    if spec.noise < 0.0 {
        return Err(Error::Config("noise must be >= 0".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Uniform::new_inclusive(0.0f64, 1.0);

    let prototypes: Vec<Vec<f64>> = (0..spec.blocks)
        .map(|_| (0..spec.feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let block_of = |i: usize| i / spec.nodes_per_block;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of(i) == block_of(j) { spec.p_in } else { spec.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let b = block_of(i);
        let feat: Vec<f64> = prototypes[b]
            .iter()
            .map(|p| {
                if spec.noise == 0.0 {
                    *p
                } else {
                    p + rng.gen_range(-spec.noise..=spec.noise)
                }
            })
            .collect();
        features.push(feat);
        let mut label = vec![0.0; spec.label_dim];
        label[b] = 1.0;
        labels.push(label);
    }

    let width = (n - 1).max(1).to_string().len();
    let node_ids = (0..n).map(|i| format!("n{i:0width$}")).collect();
    Graph::from_parts(node_ids, &edges, features, labels)
}
