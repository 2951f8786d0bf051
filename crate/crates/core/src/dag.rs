//! Weighted DAGs, mixing matrices and reachability.
//!
//! Edge convention used everywhere in the crate: a nonzero `a[(j, i)]` is the
//! weight of the directed edge `i -> j`, so row `j` holds the parents of `j`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, max_abs, Matrix};

/// Tolerance on `‖B(I−A) − I‖_max` accepted by [`mixing_matrix`].
pub const MIXING_TOL: f64 = 1e-10;

/// Causal coefficient matrix whose support is a DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDag {
    weights: Matrix,
}

impl WeightedDag {
    /// Validates a zero diagonal and an acyclic support.
    pub fn new(weights: Matrix) -> Result<Self> {
        check_square_finite(&weights)?;
        if (0..weights.nrows()).any(|i| weights[(i, i)] != 0.0) {
            return Err(Error::InvalidMatrix("diagonal must be zero".into()));
        }
        if !is_acyclic(&weights)? {
            return Err(Error::NotAcyclic);
        }
        Ok(Self { weights })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            weights: Matrix::zeros(p, p),
        }
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn into_weights(self) -> Matrix {
        self.weights
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn graph(&self) -> EdgeGraph {
        EdgeGraph::from_weights(&self.weights)
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topological_order(&self.weights).expect("WeightedDag is acyclic by construction")
    }

    pub fn mixing_matrix(&self) -> Result<MixingMatrix> {
        mixing_matrix(&self.weights)
    }

    /// Thresholding never creates edges, so the result stays acyclic.
    pub fn threshold(&self, tau: f64) -> Result<WeightedDag> {
        Ok(WeightedDag {
            weights: hard_threshold(&self.weights, tau)?,
        })
    }
}

/// `B = (I − A)⁻¹` for an acyclic `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: Matrix,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// Unweighted directed graph on `p` nodes; `(i, j)` means `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeGraph {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeGraph {
    pub fn new(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= p {
                return Err(Error::InvalidNode { node: i, p });
            }
            if j >= p {
                return Err(Error::InvalidNode { node: j, p });
            }
            if i == j {
                return Err(Error::InvalidMatrix(format!("self-loop on node {i}")));
            }
            set.insert((i, j));
        }
        Ok(Self { p, edges: set })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
        }
    }

    /// Support graph of a coefficient matrix; diagonal entries are ignored.
    pub fn from_weights(a: &Matrix) -> Self {
        let p = a.nrows();
        let mut edges = BTreeSet::new();
        for j in 0..p {
            for i in 0..p {
                if i != j && a[(j, i)] != 0.0 {
                    edges.insert((i, j));
                }
            }
        }
        Self { p, edges }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p];
        for &(i, j) in &self.edges {
            out[i].push(j);
        }
        out
    }

    fn parents(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p];
        for &(i, j) in &self.edges {
            out[j].push(i);
        }
        out
    }

    pub fn descendants(&self, v: usize) -> Result<BTreeSet<usize>> {
        self.check_node(v)?;
        Ok(reach(&self.children(), v))
    }

    pub fn ancestors(&self, v: usize) -> Result<BTreeSet<usize>> {
        self.check_node(v)?;
        Ok(reach(&self.parents(), v))
    }

    pub fn is_acyclic(&self) -> bool {
        kahn(self.p, &self.children()).is_some()
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            p: self.p,
            edges: self
                .edges
                .iter()
                .map(|&(i, j)| (perm[i], perm[j]))
                .collect(),
        }
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.p {
            Err(Error::InvalidNode { node: v, p: self.p })
        } else {
            Ok(())
        }
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> BTreeSet<usize> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut out = BTreeSet::new();
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                out.insert(w);
                queue.push_back(w);
            }
        }
    }
    out
}

/// Kahn's algorithm, always releasing the smallest available node first.
fn kahn(p: usize, children: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; p];
    for kids in children {
        for &k in kids {
            indegree[k] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..p).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(p);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &k in &children[v] {
            indegree[k] -= 1;
            if indegree[k] == 0 {
                ready.push(Reverse(k));
            }
        }
    }
    (order.len() == p).then_some(order)
}

fn support_children(a: &Matrix) -> Vec<Vec<usize>> {
    let p = a.nrows();
    let mut children = vec![Vec::new(); p];
    for j in 0..p {
        for i in 0..p {
            if i != j && a[(j, i)] != 0.0 {
                children[i].push(j);
            }
        }
    }
    children
}

fn has_self_loop(a: &Matrix) -> bool {
    (0..a.nrows()).any(|i| a[(i, i)] != 0.0)
}

/// True iff the support digraph of `a` (self-loops included) has no directed cycle.
pub fn is_acyclic(a: &Matrix) -> Result<bool> {
    check_square_finite(a)?;
    if has_self_loop(a) {
        return Ok(false);
    }
    Ok(kahn(a.nrows(), &support_children(a)).is_some())
}

/// Topological order of the support, ties broken by ascending node index.
pub fn topological_order(a: &Matrix) -> Result<Vec<usize>> {
    check_square_finite(a)?;
    if has_self_loop(a) {
        return Err(Error::NotAcyclic);
    }
    kahn(a.nrows(), &support_children(a)).ok_or(Error::NotAcyclic)
}

/// Computes `B = (I − A)⁻¹` by forward substitution along a topological order.
///
/// Row `j` of `B` satisfies `B[j,:] = e_j + Σ_i A[j,i] B[i,:]`, where every parent
/// `i` precedes `j` in the order, so each row only reads finished rows.
pub fn mixing_matrix(a: &Matrix) -> Result<MixingMatrix> {
    let order = topological_order(a)?;
    let p = a.nrows();
    let mut b = Matrix::zeros(p, p);
    for &j in &order {
        let mut row = nalgebra::RowDVector::<f64>::zeros(p);
        row[j] = 1.0;
        for i in 0..p {
            let w = a[(j, i)];
            if w != 0.0 {
                row += b.row(i) * w;
            }
        }
        b.set_row(j, &row);
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem("mixing matrix overflowed".into()));
    }
    for j in 0..p {
        b[(j, j)] = 1.0;
    }
    let id = Matrix::identity(p, p);
    let gap = max_abs(&(&b * (&id - a) - &id));
    let scale = max_abs(&b).max(1.0);
    if gap > MIXING_TOL * scale {
        return Err(Error::SingularSystem(format!(
            "‖B(I−A) − I‖_max = {gap:e} exceeds tolerance"
        )));
    }
    Ok(MixingMatrix { matrix: b })
}

/// Entrywise hard thresholding: keeps `a` where `|a| ≥ tau`, zero elsewhere.
/// Topological order of the greedy maximum-weight acyclic subgraph of `a`:
/// off-diagonal edges are admitted by decreasing `|a_ji|` unless they close a cycle.
pub fn greedy_acyclic_order(a: &Matrix) -> Result<Vec<usize>> {
    check_square_finite(a)?;
    let p = a.nrows();
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..p {
        for i in 0..p {
            if i != j && a[(j, i)] != 0.0 {
                edges.push((a[(j, i)].abs(), i, j));
            }
        }
    }
    edges.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut children = vec![Vec::new(); p];
    for (_, i, j) in edges {
        if !reach(&children, j).contains(&i) {
            children[i].push(j);
        }
    }
    Ok(kahn(p, &children).expect("greedy subgraph is acyclic"))
}

pub fn hard_threshold(a: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    Ok(a.map(|x| if x.abs() >= tau { x } else { 0.0 }))
}
