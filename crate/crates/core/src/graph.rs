//! Undirected attributed graphs, the self-looped normalized adjacency, edge
//! gradients, Dirichlet energies and homophily statistics.
//!
//! Two degree conventions coexist here. Homophily statistics use the raw
//! degree `D_ii = |Γ(i)|`. The normalized adjacency and every edge gradient
//! use `D_ii + 1`, i.e. the degree after adding a self-loop.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{spmm, Tensor2};

/// An undirected edge stored with the smaller endpoint first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Edge(usize, usize);

impl Edge {
    pub fn new(i: usize, j: usize) -> Self {
        if i <= j {
            Edge(i, j)
        } else {
            Edge(j, i)
        }
    }

    #[inline]
    pub fn lo(self) -> usize {
        self.0
    }

    #[inline]
    pub fn hi(self) -> usize {
        self.1
    }

    pub fn is_loop(self) -> bool {
        self.0 == self.1
    }
}

impl From<[usize; 2]> for Edge {
    fn from([i, j]: [usize; 2]) -> Self {
        Edge::new(i, j)
    }
}

impl From<Edge> for [usize; 2] {
    fn from(e: Edge) -> Self {
        [e.0, e.1]
    }
}

impl From<(usize, usize)> for Edge {
    fn from((i, j): (usize, usize)) -> Self {
        Edge::new(i, j)
    }
}

/// Immutable undirected graph with node features and class labels.
///
/// Features and labels sit behind `Arc` so that message-passing subgraphs
/// built with [`Graph::with_edges`] share them.
#[derive(Debug, Clone)]
pub struct Graph {
    features: Arc<Tensor2>,
    labels: Arc<Vec<usize>>,
    edges: Vec<Edge>,
    degrees: Vec<usize>,
    num_classes: usize,
}

/// Symmetrizes, deduplicates and drops self-loops from `edge_list`.
pub fn build_graph(edge_list: &[(usize, usize)], features: Tensor2, labels: Vec<usize>) -> Result<Graph> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::dims("build_graph labels", n, labels.len()));
    }
    let mut set = BTreeSet::new();
    for &(i, j) in edge_list {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, num_nodes: n });
            }
        }
        if i != j {
            set.insert(Edge::new(i, j));
        }
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Graph::assemble(
        Arc::new(features),
        Arc::new(labels),
        set.into_iter().collect(),
        num_classes,
    ))
}

impl Graph {
    fn assemble(features: Arc<Tensor2>, labels: Arc<Vec<usize>>, edges: Vec<Edge>, num_classes: usize) -> Self {
        let mut degrees = vec![0; features.rows()];
        for e in &edges {
            degrees[e.lo()] += 1;
            degrees[e.hi()] += 1;
        }
        Graph {
            features,
            labels,
            edges,
            degrees,
            num_classes,
        }
    }

    /// Same nodes, features and labels; a different edge set.
    pub fn with_edges(&self, edges: &[Edge]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut set = BTreeSet::new();
        for &e in edges {
            if e.hi() >= n {
                return Err(Error::IndexOutOfRange { index: e.hi(), num_nodes: n });
            }
            if !e.is_loop() {
                set.insert(e);
            }
        }
        Ok(Graph::assemble(
            self.features.clone(),
            self.labels.clone(),
            set.into_iter().collect(),
            self.num_classes,
        ))
    }

    /// Overrides the class count, e.g. from bundle metadata when some classes are unused.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Graph> {
        if self.labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "labels exceed declared class count {num_classes}"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig("not a permutation".into()));
        }
        let mut feats = Tensor2::zeros(n, self.feature_dim());
        let mut labels = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            feats.row_mut(new).copy_from_slice(self.features.row(old));
            labels[new] = self.labels[old];
        }
        let mut edges: Vec<Edge> = self.edges.iter().map(|e| Edge::new(perm[e.lo()], perm[e.hi()])).collect();
        edges.sort_unstable();
        Ok(Graph::assemble(Arc::new(feats), Arc::new(labels), edges, self.num_classes))
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted, unique undirected edges.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.binary_search(&e).is_ok()
    }
}

/// `D̃^{-1/2} (I + A) D̃^{-1/2}` in CSR layout.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    scales: Vec<f64>,
}

pub fn normalized_adjacency(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_edges(g.num_nodes(), g.edges())
}

impl NormalizedAdjacency {
    /// Builds the operator from a loop-free, duplicate-free edge list.
    pub fn from_edges(n: usize, edges: &[Edge]) -> Self {
        let mut degree = vec![0usize; n];
        for e in edges {
            degree[e.lo()] += 1;
            degree[e.hi()] += 1;
        }
        let scales: Vec<f64> = degree.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for &d in &degree {
            row_ptr.push(row_ptr.last().unwrap() + d + 1);
        }
        let nnz = *row_ptr.last().unwrap();
        let mut col_idx = vec![0u32; nnz];
        let mut fill = row_ptr[..n].to_vec();
        for i in 0..n {
            col_idx[fill[i]] = i as u32;
            fill[i] += 1;
        }
        for e in edges {
            let (i, j) = (e.lo(), e.hi());
            col_idx[fill[i]] = j as u32;
            fill[i] += 1;
            col_idx[fill[j]] = i as u32;
            fill[j] += 1;
        }
        let mut values = vec![0.0; nnz];
        for i in 0..n {
            let row = &mut col_idx[row_ptr[i]..row_ptr[i + 1]];
            row.sort_unstable();
            for (k, &j) in row.iter().enumerate() {
                // s_i * s_j is commutative in IEEE arithmetic, so the operator is bitwise symmetric.
                values[row_ptr[i] + k] = scales[i] * scales[j as usize];
            }
        }
        NormalizedAdjacency {
            row_ptr,
            col_idx,
            values,
            scales,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.scales.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`, sorted by column.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// `1/√(D_ii + 1)`
    #[inline]
    pub fn scale(&self, i: usize) -> f64 {
        self.scales[i]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Entry lookup by binary search; zero when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor2 {
        let n = self.num_nodes();
        let mut out = Tensor2::zeros(n, n);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[(i, j as usize)] = v;
            }
        }
        out
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_nodes() {
            return Err(Error::IndexOutOfRange {
                index: i,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(())
    }
}

/// `(∇H)_ij = s_j h_j − s_i h_i`
pub fn edge_gradient(h: &Tensor2, adj: &NormalizedAdjacency, i: usize, j: usize) -> Result<Vec<f64>> {
    adj.check_index(i)?;
    adj.check_index(j)?;
    if h.rows() != adj.num_nodes() {
        return Err(Error::dims("edge_gradient", adj.num_nodes(), h.rows()));
    }
    let (si, sj) = (adj.scale(i), adj.scale(j));
    Ok(h.row(i).iter().zip(h.row(j)).map(|(&hi, &hj)| sj * hj - si * hi).collect())
}

/// Squared norm of the edge gradient, computed without allocating.
#[inline]
pub(crate) fn edge_gradient_sq_norm(h: &Tensor2, adj: &NormalizedAdjacency, e: Edge) -> f64 {
    let (i, j) = (e.lo(), e.hi());
    let (si, sj) = (adj.scale(i), adj.scale(j));
    h.row(i)
        .iter()
        .zip(h.row(j))
        .map(|(&hi, &hj)| {
            let g = sj * hj - si * hi;
            g * g
        })
        .sum()
}

/// Sum of squared edge gradients over `edges`, each undirected edge once.
pub fn dirichlet_energy(h: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<f64> {
    if h.rows() != adj.num_nodes() {
        return Err(Error::dims("dirichlet_energy", adj.num_nodes(), h.rows()));
    }
    let mut total = 0.0;
    for &e in edges {
        adj.check_index(e.hi())?;
        total += edge_gradient_sq_norm(h, adj, e);
    }
    Ok(total)
}

/// `Σ_i ⟨h_i, Ω h_i⟩ − Σ_{i,j} 𝔸_ij ⟨h_i, W h_j⟩`
pub fn parametrized_dirichlet_energy(
    h: &Tensor2,
    omega: &Tensor2,
    w: &Tensor2,
    adj: &NormalizedAdjacency,
) -> Result<f64> {
    let d = h.cols();
    for (name, m) in [("omega", omega), ("w", w)] {
        if m.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                op: "parametrized_dirichlet_energy",
                expected: format!("{name} {d}x{d}"),
                actual: format!("{}x{}", m.rows(), m.cols()),
            });
        }
    }
    let h_omega = h.matmul(omega)?;
    let ah = spmm(adj, h)?;
    let hw = h.matmul(w)?;
    let self_term: f64 = h.as_slice().iter().zip(h_omega.as_slice()).map(|(a, b)| a * b).sum();
    let pair_term: f64 = ah.as_slice().iter().zip(hw.as_slice()).map(|(a, b)| a * b).sum();
    Ok(self_term - pair_term)
}

/// Fraction of edges joining same-class endpoints.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::UndefinedHomophily("graph has no edges"));
    }
    let y = g.labels();
    let same = g.edges().iter().filter(|e| y[e.lo()] == y[e.hi()]).count();
    Ok(same as f64 / g.num_edges() as f64)
}

/// Edge homophily corrected for the class degree mass `𝒟_k = Σ_{y_i = k} D_ii`.
///
/// All terms are integers, so the ratio is formed exactly as
/// `(4|E|·same − Σ𝒟²) / (4|E|² − Σ𝒟²)` and rounded once.
pub fn adjusted_homophily(g: &Graph) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::UndefinedHomophily("graph has no edges"));
    }
    let y = g.labels();
    let same = g.edges().iter().filter(|e| y[e.lo()] == y[e.hi()]).count() as i128;
    let mut mass = vec![0i128; g.num_classes().max(1)];
    for (i, &d) in g.degrees().iter().enumerate() {
        mass[y[i]] += d as i128;
    }
    let e = g.num_edges() as i128;
    let sum_sq: i128 = mass.iter().map(|m| m * m).sum();
    let den = 4 * e * e - sum_sq;
    if den == 0 {
        return Err(Error::UndefinedHomophily("all degree mass lies in one class"));
    }
    Ok((4 * e * same - sum_sq) as f64 / den as f64)
}

/// Same-class (`hm`) and cross-class (`ht`) edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgePartition {
    pub hm: Vec<Edge>,
    pub ht: Vec<Edge>,
}

pub fn partition_by_class(edges: &[Edge], labels: &[usize]) -> EdgePartition {
    let (hm, ht) = edges.iter().partition(|e| labels[e.lo()] == labels[e.hi()]);
    EdgePartition { hm, ht }
}
