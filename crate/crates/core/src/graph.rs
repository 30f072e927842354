//! Directed acyclic graphs encoding partial orders, and their oriented
//! incidence matrices.
//!
//! A [`Dag`] is a validated vertex count plus an *ordered* edge list; the
//! edge order is part of the graph's identity because it fixes the row order
//! of the incidence matrix and therefore the layout of every edge-indexed
//! vector the solver produces.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("a graph needs at least one vertex")]
    NoVertices,
    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },
    #[error("edge {edge} repeats the pair ({source_vertex}, {target_vertex})")]
    DuplicateEdge {
        edge: usize,
        source_vertex: usize,
        target_vertex: usize,
    },
    #[error("edge {edge} uses vertex {vertex}, but the graph has {n_vertices} vertices")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("the edge list contains a directed cycle")]
    CycleDetected,
}

/// A directed acyclic graph with vertices `0..n_vertices` and an ordered
/// edge list. Immutable after construction, so it can be shared freely
/// across concurrent solver runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl Dag {
    /// Validates and builds a DAG from an ordered `(source, target)` edge
    /// list. Edge order is preserved as given.
    pub fn from_edge_list(
        n_vertices: usize,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        if n_vertices == 0 {
            return Err(GraphError::NoVertices);
        }
        let mut seen = BTreeSet::new();
        for (e, &(s, t)) in edges.iter().enumerate() {
            for v in [s, t] {
                if v >= n_vertices {
                    return Err(GraphError::VertexOutOfRange {
                        edge: e,
                        vertex: v,
                        n_vertices,
                    });
                }
            }
            if s == t {
                return Err(GraphError::SelfLoop { edge: e, vertex: s });
            }
            if !seen.insert((s, t)) {
                return Err(GraphError::DuplicateEdge {
                    edge: e,
                    source_vertex: s,
                    target_vertex: t,
                });
            }
        }
        let dag = Dag { n_vertices, edges };
        if dag.topological_order().is_none() {
            return Err(GraphError::CycleDetected);
        }
        Ok(dag)
    }

    /// Total order on `s` vertices: edges `(k, k+1)` for `k = 0..s-2`.
    pub fn chain(s: usize) -> Result<Self, GraphError> {
        if s == 0 {
            return Err(GraphError::NoVertices);
        }
        let edges = (0..s.saturating_sub(1)).map(|k| (k, k + 1)).collect();
        Ok(Dag {
            n_vertices: s,
            edges,
        })
    }

    /// Componentwise order on an `s1 x s2` grid with row-major vertex ids.
    ///
    /// Grid cell `(l, k)` (1-based) maps to vertex `(l-1)*s2 + (k-1)`.
    /// Edges are all `((l,k),(l,k+1))` in lexicographic `(l,k)` order,
    /// followed by all `((l,k),(l+1,k))` in lexicographic order, giving
    /// `s1*(s2-1) + s2*(s1-1)` edges in total.
    pub fn grid2d(s1: usize, s2: usize) -> Result<Self, GraphError> {
        if s1 == 0 || s2 == 0 {
            return Err(GraphError::NoVertices);
        }
        let id = |l: usize, k: usize| (l - 1) * s2 + (k - 1);
        let mut edges = Vec::with_capacity(s1 * (s2 - 1) + s2 * (s1 - 1));
        for l in 1..=s1 {
            for k in 1..s2 {
                edges.push((id(l, k), id(l, k + 1)));
            }
        }
        for l in 1..s1 {
            for k in 1..=s2 {
                edges.push((id(l, k), id(l + 1, k)));
            }
        }
        Ok(Dag {
            n_vertices: s1 * s2,
            edges,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// A topological order of the vertices, or `None` if a cycle exists.
    /// Kahn's algorithm; ties broken by smallest vertex id.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n_vertices;
        let mut indegree = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            indegree[t] += 1;
            out[s].push(t);
        }
        // BTreeSet keeps the frontier ordered by vertex id.
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(v);
            for &t in &out[v] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Oriented incidence matrix: one row per edge, `+1` at the source
    /// column and `-1` at the target column.
    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            n_vertices: self.n_vertices,
            edges: self.edges.clone(),
        }
    }

    /// Partition of the vertices into undirected connected components of
    /// the subgraph keeping only the edges selected by `keep_edge`.
    ///
    /// Components are listed by smallest member, members ascending.
    pub fn connected_components(&self, mut keep_edge: impl FnMut(usize) -> bool) -> Vec<Vec<usize>> {
        let n = self.n_vertices;
        let mut adj = vec![Vec::new(); n];
        for (e, &(s, t)) in self.edges.iter().enumerate() {
            if keep_edge(e) {
                adj[s].push(t);
                adj[t].push(s);
            }
        }
        let mut component = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let idx = groups.len();
            let mut members = Vec::new();
            component[start] = idx;
            stack.push(start);
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in &adj[v] {
                    if component[w] == usize::MAX {
                        component[w] = idx;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            groups.push(members);
        }
        groups
    }

    /// Subgraph on the same vertex set keeping only the selected edges,
    /// in their original relative order.
    pub fn edge_subgraph(&self, mut keep_edge: impl FnMut(usize) -> bool) -> Dag {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(e, _)| keep_edge(*e))
            .map(|(_, &pair)| pair)
            .collect();
        Dag {
            n_vertices: self.n_vertices,
            edges,
        }
    }
}

/// Sparse oriented incidence matrix `D` of a [`Dag`]: `m` rows (edges),
/// `n` columns (vertices), exactly two nonzeros per row. For any vector
/// `beta`, `D beta` lists the per-edge differences `beta_src - beta_tgt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.edges.len()
    }

    pub fn cols(&self) -> usize {
        self.n_vertices
    }

    /// The nonzero entries as `(edge, vertex, value)` triplets, row by row:
    /// `+1` at the source, then `-1` at the target.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(e, &(s, t))| [(e, s, 1.0), (e, t, -1.0)])
    }

    /// `out = D beta` (edge differences). Panics if lengths disagree.
    pub fn apply(&self, beta: &[f64], out: &mut [f64]) {
        assert_eq!(beta.len(), self.n_vertices);
        assert_eq!(out.len(), self.edges.len());
        for (e, &(s, t)) in self.edges.iter().enumerate() {
            out[e] = beta[s] - beta[t];
        }
    }

    /// `out = D^T v` (scatter edge values onto vertices).
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.edges.len());
        assert_eq!(out.len(), self.n_vertices);
        out.fill(0.0);
        for (e, &(s, t)) in self.edges.iter().enumerate() {
            out[s] += v[e];
            out[t] -= v[e];
        }
    }

    /// Dense row-major copy; intended for tests and tiny graphs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.n_vertices]; self.edges.len()];
        for (e, v, x) in self.triplets() {
            rows[e][v] = x;
        }
        rows
    }
}
