//! Matrix seriation: pairwise distances, agglomerative clustering and the
//! row/column orderings derived from it.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Cosine,
    /// Set distance over vectors binarized at `threshold`.
    Jaccard {
        threshold: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    Average,
    Ward,
}

impl DistanceMetric {
    fn validate(&self) -> Result<()> {
        if let DistanceMetric::Jaccard { threshold } = *self {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::domain(format!(
                    "jaccard threshold {threshold} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn distance(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b.iter()) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                match (na == 0.0, nb == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    // Rounding can push the similarity a hair past 1.
                    _ => (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0),
                }
            }
            DistanceMetric::Jaccard { threshold } => {
                let (mut inter, mut union) = (0usize, 0usize);
                for (x, y) in a.iter().zip(b.iter()) {
                    let (p, q) = (*x >= threshold, *y >= threshold);
                    inter += (p && q) as usize;
                    union += (p || q) as usize;
                }
                if union == 0 {
                    0.0
                } else {
                    1.0 - inter as f64 / union as f64
                }
            }
        }
    }
}

/// Dense symmetric distance matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    metric: Option<DistanceMetric>,
}

impl DistanceMatrix {
    /// Wraps precomputed distances; the metric is unknown to the clusterer.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(Error::dimension(format!(
                    "distance row {i} has {} entries, expected {n}",
                    r.len()
                )));
            }
            values.extend(r);
        }
        Ok(DistanceMatrix {
            n,
            values,
            metric: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn metric(&self) -> Option<DistanceMetric> {
        self.metric
    }
}

/// Distances between the rows of `vectors`.
pub fn pairwise_distances(
    vectors: ArrayView2<f64>,
    metric: DistanceMetric,
) -> Result<DistanceMatrix> {
    metric.validate()?;
    let n = vectors.nrows();
    if n < 2 {
        return Err(Error::domain(format!("need at least two vectors, got {n}")));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(vectors.row(i), vectors.row(j));
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix {
        n,
        values,
        metric: Some(metric),
    })
}

/// Convenience wrapper over a slice of equal-length vectors.
pub fn pairwise_distances_of(
    vectors: &[Vec<f64>],
    metric: DistanceMetric,
) -> Result<DistanceMatrix> {
    let len = vectors.first().map_or(0, Vec::len);
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != len) {
        return Err(Error::dimension(format!(
            "vector {i} has length {}, expected {len}",
            v.len()
        )));
    }
    let flat: Vec<f64> = vectors.iter().flatten().copied().collect();
    let a = ndarray::Array2::from_shape_vec((vectors.len(), len), flat)
        .map_err(|e| Error::dimension(e.to_string()))?;
    pairwise_distances(a.view(), metric)
}

/// One agglomeration step. Clusters are numbered like SciPy: leaves are
/// `0..n`, the cluster made by merge `k` is `n + k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Depth-first leaf order, left (lower-index) subtree first.
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.leaves == 0 {
            return Vec::new();
        }
        if self.merges.is_empty() {
            return (0..self.leaves).collect();
        }
        let mut out = Vec::with_capacity(self.leaves);
        let mut stack = vec![self.leaves + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < self.leaves {
                out.push(c);
            } else {
                let m = &self.merges[c - self.leaves];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Leaves under cluster `id`.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            if c < self.leaves {
                out.push(c);
            } else {
                let m = &self.merges[c - self.leaves];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out.sort_unstable();
        out
    }
}

fn lance_williams(
    linkage: Linkage,
    sa: f64,
    sb: f64,
    sk: f64,
    dak: f64,
    dbk: f64,
    dab: f64,
) -> f64 {
    match linkage {
        Linkage::Single => dak.min(dbk),
        Linkage::Complete => dak.max(dbk),
        Linkage::Average => (sa * dak + sb * dbk) / (sa + sb),
        Linkage::Ward => {
            let v =
                ((sa + sk) * dak * dak + (sb + sk) * dbk * dbk - sk * dab * dab) / (sa + sb + sk);
            v.max(0.0).sqrt()
        }
    }
}

/// Agglomerative clustering over a distance matrix.
///
/// Each step merges the closest pair of active clusters; among equally
/// close pairs the one with the lexicographically smallest `(i, j)` of
/// smallest member leaves wins. Inter-cluster distances follow the
/// Lance-Williams updates of the chosen linkage (Ward in its Euclidean form).
pub fn hierarchical_cluster(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = d.n;
    if let (Linkage::Ward, Some(m)) = (linkage, d.metric) {
        if m != DistanceMetric::Euclidean {
            return Err(Error::domain("ward linkage requires euclidean distances"));
        }
    }
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("distance ({i}, {j}) = {v}")));
            }
            if v != d.get(j, i) {
                return Err(Error::domain(format!(
                    "distance matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if n == 0 {
        return Ok(Dendrogram {
            leaves: 0,
            merges: Vec::new(),
        });
    }

    let mut dist = d.values.clone();
    let at = |i: usize, j: usize| i * n + j;
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    // Slot i holds the cluster whose smallest leaf is i.
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];

    let nearest = |dist: &[f64], active: &[bool], i: usize| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in i + 1..n {
            if active[j] && dist[at(i, j)] < best.1 {
                best = (j, dist[at(i, j)]);
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nn_d[i]) = nearest(&dist, &active, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut a = usize::MAX;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nn_d[i] < nn_d[a]) {
                a = i;
            }
        }
        let b = nn[a];
        let height = nn_d[a];
        let dab = dist[at(a, b)];
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        merges.push(Merge {
            left: cluster_id[a],
            right: cluster_id[b],
            height,
            size: size[a] + size[b],
        });
        active[b] = false;
        for k in 0..n {
            if active[k] && k != a {
                let v = lance_williams(
                    linkage,
                    sa,
                    sb,
                    size[k] as f64,
                    dist[at(a, k)],
                    dist[at(b, k)],
                    dab,
                );
                dist[at(a, k)] = v;
                dist[at(k, a)] = v;
            }
        }
        size[a] += size[b];
        cluster_id[a] = n + step;

        for i in 0..b {
            if !active[i] {
                continue;
            }
            if i == a || nn[i] == a || nn[i] == b {
                (nn[i], nn_d[i]) = nearest(&dist, &active, i);
            } else if i < a {
                let v = dist[at(i, a)];
                if v < nn_d[i] || (v == nn_d[i] && a < nn[i]) {
                    nn[i] = a;
                    nn_d[i] = v;
                }
            }
        }
    }
    Ok(Dendrogram { leaves: n, merges })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Dendrogram {
        metric: DistanceMetric,
        linkage: Linkage,
    },
    Size,
    FirstOccurrence,
}

/// A permutation of one axis: `permutation[k]` is the original index shown
/// at position `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub permutation: Vec<usize>,
    pub axis: Axis,
    pub strategy: Strategy,
}

impl Ordering {
    pub fn identity(len: usize, axis: Axis) -> Self {
        Ordering {
            permutation: (0..len).collect(),
            axis,
            strategy: Strategy::FirstOccurrence,
        }
    }

    /// `rank[i]` = display position of original index `i`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.permutation.len()];
        for (pos, &i) in self.permutation.iter().enumerate() {
            r[i] = pos;
        }
        r
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        self.permutation
            .iter()
            .all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }
}

/// Orders one axis of `matrix`.
///
/// With `filter = Some(t)` cells below the cutoff `t` are treated as zero
/// before any vector comparison. The dendrogram strategy clusters the axis
/// vectors in a canonical (lexicographic) order so the result depends on the
/// vectors, not on where they sat in the input; only exact duplicates fall
/// back to their input order.
pub fn compute_ordering(
    matrix: ArrayView2<f64>,
    axis: Axis,
    strategy: Strategy,
    filter: Option<f64>,
) -> Result<Ordering> {
    let view = match axis {
        Axis::Rows => matrix,
        Axis::Cols => matrix.reversed_axes(),
    };
    let vectors = match filter {
        Some(t) => view.mapv(|v| if v >= t { v } else { 0.0 }),
        None => view.to_owned(),
    };
    let len = vectors.nrows();
    let permutation = match strategy {
        Strategy::FirstOccurrence => (0..len).collect(),
        Strategy::Size => {
            let sums: Vec<f64> = vectors.rows().into_iter().map(|r| r.sum()).collect();
            let mut idx: Vec<usize> = (0..len).collect();
            idx.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]));
            idx
        }
        Strategy::Dendrogram { metric, linkage } => {
            if linkage == Linkage::Ward && metric != DistanceMetric::Euclidean {
                return Err(Error::domain("ward linkage requires euclidean distances"));
            }
            if len < 2 {
                (0..len).collect()
            } else {
                let mut canon: Vec<usize> = (0..len).collect();
                canon.sort_by(|&a, &b| {
                    let (ra, rb) = (vectors.row(a), vectors.row(b));
                    ra.iter()
                        .zip(rb.iter())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let sorted = vectors.select(ndarray::Axis(0), &canon);
                let d = pairwise_distances(sorted.view(), metric)?;
                let tree = hierarchical_cluster(&d, linkage)?;
                tree.leaf_order().into_iter().map(|p| canon[p]).collect()
            }
        }
    };
    Ok(Ordering {
        permutation,
        axis,
        strategy,
    })
}
