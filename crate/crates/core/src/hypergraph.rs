//! Temporal hypergraph data model.
//!
//! A hypergraph over `n` nodes and `m` hyperedges is stored as a weighted
//! incidence matrix with strengths in `[0, 1]`; a temporal hypergraph is one
//! such matrix per timestep over a shared node and edge set. The normalized
//! hypergraph Laplacian
//!
//! ```text
//! L = I - Dv^{-1/2} H W De^{-1} H^T Dv^{-1/2}
//! ```
//!
//! serves as the node relatedness operator used to smooth the predictor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

/// Zero-based timestep ordinal. Calendar labels live on the owning
/// [`TemporalHypergraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeIndex(pub usize);

/// Sparse row-major incidence matrix. Unstored cells are exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceMatrix {
    n_rows: usize,
    n_cols: usize,
    /// Per row, `(column, strength)` sorted by column, strengths in (0, 1].
    rows: Vec<Vec<(usize, f64)>>,
}

fn check_strength(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("strength {s} outside [0, 1]")));
    }
    Ok(())
}

impl IncidenceMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        IncidenceMatrix {
            n_rows,
            n_cols,
            rows: vec![Vec::new(); n_rows],
        }
    }

    /// Builds a matrix from `(node, edge, strength)` memberships.
    /// Duplicate cells keep the maximum strength.
    pub fn from_memberships(
        memberships: &[(NodeId, EdgeId, f64)],
        n: usize,
        m: usize,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(NodeId(v), EdgeId(e), s) in memberships {
            if v >= n {
                return Err(Error::index(format!("node {v} >= {n}")));
            }
            if e >= m {
                return Err(Error::index(format!("edge {e} >= {m}")));
            }
            check_strength(s)?;
            rows[v].push((e, s));
        }
        for row in &mut rows {
            row.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            row.dedup_by_key(|c| c.0);
            row.retain(|&(_, s)| s > 0.0);
        }
        Ok(IncidenceMatrix {
            n_rows: n,
            n_cols: m,
            rows,
        })
    }

    /// Stores every strictly positive entry of a dense matrix.
    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let (n, m) = dense.dim();
        let mut rows = Vec::with_capacity(n);
        for r in dense.rows() {
            let mut row = Vec::new();
            for (c, &s) in r.iter().enumerate() {
                check_strength(s)?;
                if s > 0.0 {
                    row.push((c, s));
                }
            }
            rows.push(row);
        }
        Ok(IncidenceMatrix {
            n_rows: n,
            n_cols: m,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = &self.rows[row];
        match r.binary_search_by_key(&col, |c| c.0) {
            Ok(i) => r[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    /// Stored cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, s)| (r, c, s)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, s) in self.iter() {
            out[[r, c]] = s;
        }
        out
    }

    /// Returns a copy with the given cells overwritten (zero removes the cell).
    pub fn with_overwrites(&self, cells: &[(usize, usize, f64)]) -> Result<Self> {
        let mut out = self.clone();
        for &(r, c, s) in cells {
            if r >= self.n_rows || c >= self.n_cols {
                return Err(Error::index(format!(
                    "cell ({r}, {c}) outside {}x{}",
                    self.n_rows, self.n_cols
                )));
            }
            check_strength(s)?;
            let row = &mut out.rows[r];
            match row.binary_search_by_key(&c, |x| x.0) {
                Ok(i) if s > 0.0 => row[i].1 = s,
                Ok(i) => {
                    row.remove(i);
                }
                Err(i) if s > 0.0 => row.insert(i, (c, s)),
                Err(_) => {}
            }
        }
        Ok(out)
    }

    pub fn min_max(&self) -> (f64, f64) {
        let full = self.nnz() == self.n_rows * self.n_cols;
        let mut lo: f64 = if full { 1.0 } else { 0.0 };
        let mut hi: f64 = 0.0;
        for (_, _, s) in self.iter() {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }
}

/// Shorthand for [`IncidenceMatrix::from_memberships`].
pub fn build_incidence(
    memberships: &[(NodeId, EdgeId, f64)],
    n: usize,
    m: usize,
) -> Result<IncidenceMatrix> {
    IncidenceMatrix::from_memberships(memberships, n, m)
}

/// Vertex degrees (row sums) and edge degrees (column sums).
pub fn degrees(i: &IncidenceMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut dv = vec![0.0; i.n_rows];
    let mut de = vec![0.0; i.n_cols];
    for (r, c, s) in i.iter() {
        dv[r] += s;
        de[c] += s;
    }
    (dv, de)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Metadata-derived auxiliary hypergraph.
    Explicit,
    /// Behaviour-derived hypergraph whose future links are predicted.
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalHypergraph {
    role: Role,
    node_labels: Vec<String>,
    edge_labels: Vec<String>,
    time_labels: Vec<String>,
    slices: Vec<IncidenceMatrix>,
}

impl TemporalHypergraph {
    pub fn new(
        role: Role,
        node_labels: Vec<String>,
        edge_labels: Vec<String>,
        time_labels: Vec<String>,
        slices: Vec<IncidenceMatrix>,
    ) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::domain(
                "a temporal hypergraph needs at least one timestep",
            ));
        }
        if time_labels.len() != slices.len() {
            return Err(Error::dimension(format!(
                "{} time labels for {} slices",
                time_labels.len(),
                slices.len()
            )));
        }
        let shape = (node_labels.len(), edge_labels.len());
        for (t, s) in slices.iter().enumerate() {
            if s.shape() != shape {
                return Err(Error::dimension(format!(
                    "slice {t} is {:?}, expected {:?}",
                    s.shape(),
                    shape
                )));
            }
        }
        Ok(TemporalHypergraph {
            role,
            node_labels,
            edge_labels,
            time_labels,
            slices,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn n_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_labels.len()
    }

    pub fn n_timesteps(&self) -> usize {
        self.slices.len()
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn edge_labels(&self) -> &[String] {
        &self.edge_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn slices(&self) -> &[IncidenceMatrix] {
        &self.slices
    }

    pub fn slice(&self, t: TimeIndex) -> Result<&IncidenceMatrix> {
        self.slices
            .get(t.0)
            .ok_or_else(|| Error::index(format!("timestep {} >= {}", t.0, self.slices.len())))
    }

    /// Nodes sharing at least one hyperedge with `v` at time `t`, where
    /// membership means strength >= `threshold`. `v` itself is excluded.
    pub fn neighborhood(&self, t: TimeIndex, v: NodeId, threshold: f64) -> Result<NeighborSet> {
        let slice = self.slice(t)?;
        if v.0 >= self.n_nodes() {
            return Err(Error::index(format!("node {} >= {}", v.0, self.n_nodes())));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::domain(format!(
                "membership threshold {threshold} outside (0, 1]"
            )));
        }
        let mut edges = vec![false; self.n_edges()];
        for &(e, s) in slice.row(v.0) {
            if s >= threshold {
                edges[e] = true;
            }
        }
        let mut out = Vec::new();
        for w in 0..self.n_nodes() {
            if w == v.0 {
                continue;
            }
            if slice
                .row(w)
                .iter()
                .any(|&(e, s)| s >= threshold && edges[e])
            {
                out.push(NodeId(w));
            }
        }
        Ok(NeighborSet(out))
    }
}

/// Sorted set of neighbouring nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborSet(pub Vec<NodeId>);

impl NeighborSet {
    pub fn contains(&self, v: NodeId) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Dense symmetric relatedness operator over nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianMatrix {
    values: Array2<f64>,
    role: Role,
}

impl LaplacianMatrix {
    /// Wraps a dense matrix after checking it is square, finite and symmetric.
    pub fn from_dense(values: Array2<f64>, role: Role) -> Result<Self> {
        let (n, m) = values.dim();
        if n != m {
            return Err(Error::dimension(format!(
                "laplacian must be square, got {n}x{m}"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = values[[i, j]];
                if !a.is_finite() {
                    return Err(Error::Numeric {
                        context: format!("laplacian ({i}, {j})"),
                        detail: a.to_string(),
                    });
                }
                if (a - values[[j, i]]).abs() > 1e-12 {
                    return Err(Error::domain(format!(
                        "laplacian not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(LaplacianMatrix { values, role })
    }

    /// The all-zero operator: disables smoothing.
    pub fn zeros(n: usize) -> Self {
        LaplacianMatrix {
            values: Array2::zeros((n, n)),
            role: Role::Explicit,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn role(&self) -> Role {
        self.role
    }
}

/// Normalized hypergraph Laplacian of slice `t`.
///
/// `edge_weights` defaults to all ones. A node with zero weighted degree gets
/// a zero inverse square root, so its row is the unit row of the identity.
pub fn normalized_laplacian(
    h: &TemporalHypergraph,
    t: TimeIndex,
    edge_weights: Option<&[f64]>,
) -> Result<LaplacianMatrix> {
    let slice = h.slice(t)?;
    let (n, m) = slice.shape();
    let ones;
    let w = match edge_weights {
        Some(w) => {
            if w.len() != m {
                return Err(Error::dimension(format!(
                    "{} edge weights for {m} edges",
                    w.len()
                )));
            }
            if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::domain(format!(
                    "edge weight {bad} must be finite and >= 0"
                )));
            }
            w
        }
        None => {
            ones = vec![1.0; m];
            &ones[..]
        }
    };

    let (_, de) = degrees(slice);
    let mut dv = vec![0.0; n];
    let mut members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (r, c, s) in slice.iter() {
        dv[r] += w[c] * s;
        members[c].push((r, s));
    }
    let inv_sqrt: Vec<f64> = dv
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();

    // A = H W De^{-1} H^T, accumulated edge by edge.
    let mut a = Array2::<f64>::zeros((n, n));
    for (e, mem) in members.iter().enumerate() {
        if de[e] <= 0.0 {
            continue;
        }
        let scale = w[e] / de[e];
        for &(i, hi) in mem {
            for &(j, hj) in mem {
                if i <= j {
                    a[[i, j]] += scale * hi * hj;
                }
            }
        }
    }

    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let off = inv_sqrt[i] * a[[i, j]] * inv_sqrt[j];
            let v = if i == j { 1.0 - off } else { -off };
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(LaplacianMatrix {
        values,
        role: h.role(),
    })
}
