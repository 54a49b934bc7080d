use ndarray::Array2;

use super::{ModelParams, SupervisionMask};
use crate::error::{Error, Result};
use crate::hypergraph::{IncidenceMatrix, LaplacianMatrix};

/// Numerically stable `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary cross-entropy of `sigmoid(z)` against a soft label `a` in [0, 1].
pub(crate) fn bce_logit(z: f64, a: f64) -> f64 {
    softplus(z) - a * z
}

/// Training objective for one step of link prediction:
///
/// ```text
/// L(X, Y) = sum_ij w_ij BCE(s(x_i.y_j), a_ij)        reconstruction of the input slice
///         + sum_(i,j) in mask BCE(s(x_i.y_j), l_ij)  supervision from the next slice
///         + lambda_lap tr(X^T L X)
///         + lambda_frob (|X|_F^2 + |Y|_F^2)
/// ```
///
/// `w_ij` is `recon_weight` except for explicitly weighted cells (feedback
/// assertions).
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    target: Array2<f64>,
    weights: Array2<f64>,
    supervision: Vec<(usize, usize, f64)>,
    laplacian: &'a LaplacianMatrix,
    pub lambda_lap: f64,
    pub lambda_frob: f64,
}

/// Individual terms of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub supervision: f64,
    pub laplacian: f64,
    pub frobenius: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.supervision + self.laplacian + self.frobenius
    }
}

impl<'a> Objective<'a> {
    pub fn new(
        input: &IncidenceMatrix,
        mask: &SupervisionMask,
        labels: &IncidenceMatrix,
        laplacian: &'a LaplacianMatrix,
        lambda_lap: f64,
        lambda_frob: f64,
    ) -> Result<Self> {
        let (n, m) = input.shape();
        if labels.shape() != (n, m) {
            return Err(Error::dimension(format!(
                "labels {:?} vs input {:?}",
                labels.shape(),
                input.shape()
            )));
        }
        if laplacian.dim() != n {
            return Err(Error::dimension(format!(
                "laplacian over {} nodes, input has {n}",
                laplacian.dim()
            )));
        }
        let mut supervision = Vec::with_capacity(mask.len());
        for &(i, j) in mask.cells() {
            if i >= n || j >= m {
                return Err(Error::index(format!(
                    "mask cell ({i}, {j}) outside {n}x{m}"
                )));
            }
            supervision.push((i, j, labels.get(i, j)));
        }
        Ok(Objective {
            target: input.to_dense(),
            weights: Array2::from_elem((n, m), 1.0),
            supervision,
            laplacian,
            lambda_lap,
            lambda_frob,
        })
    }

    /// Reconstruction-only objective (no supervision cells).
    pub fn unsupervised(
        input: &IncidenceMatrix,
        laplacian: &'a LaplacianMatrix,
        lambda_lap: f64,
        lambda_frob: f64,
    ) -> Result<Self> {
        let (n, m) = input.shape();
        Objective::new(
            input,
            &SupervisionMask::empty(n, m),
            &IncidenceMatrix::zeros(n, m),
            laplacian,
            lambda_lap,
            lambda_frob,
        )
    }

    /// Scales every reconstruction weight; zero drops the term.
    pub fn with_recon_weight(mut self, w: f64) -> Self {
        self.weights.fill(w);
        self
    }

    /// Overrides the reconstruction weight of individual cells.
    pub fn with_cell_weights(mut self, cells: &[(usize, usize, f64)]) -> Result<Self> {
        let (n, m) = self.weights.dim();
        for &(i, j, w) in cells {
            if i >= n || j >= m {
                return Err(Error::index(format!(
                    "weighted cell ({i}, {j}) outside {n}x{m}"
                )));
            }
            self.weights[[i, j]] = w;
        }
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.target.dim()
    }

    pub fn laplacian(&self) -> &LaplacianMatrix {
        self.laplacian
    }

    fn check_params(&self, p: &ModelParams) -> Result<()> {
        let (n, m) = self.shape();
        if p.x.nrows() != n || p.y.nrows() != m || p.x.ncols() != p.y.ncols() {
            return Err(Error::dimension(format!(
                "factors {:?} / {:?} for a {n}x{m} objective",
                p.x.dim(),
                p.y.dim()
            )));
        }
        Ok(())
    }

    /// Evaluates every term. Non-finite logits are reported with their cell.
    pub fn breakdown(&self, p: &ModelParams) -> Result<LossBreakdown> {
        Ok(self.evaluate(p)?.breakdown)
    }

    pub fn loss(&self, p: &ModelParams) -> Result<f64> {
        Ok(self.evaluate(p)?.breakdown.total())
    }

    /// Loss terms plus the intermediates the gradient reuses. One pass over
    /// the logits computes both `softplus` and `sigmoid` from a single `exp`.
    pub fn evaluate(&self, p: &ModelParams) -> Result<Evaluation> {
        self.check_params(p)?;
        let mut sig = p.x.dot(&p.y.t());
        let mut out = LossBreakdown::default();
        if let Some(((i, j), z)) = sig.indexed_iter().find(|(_, z)| !z.is_finite()) {
            return Err(Error::Numeric {
                context: format!("logit ({i}, {j})"),
                detail: z.to_string(),
            });
        }
        let mut reconstruction = 0.0;
        ndarray::Zip::from(&mut sig)
            .and(&self.weights)
            .and(&self.target)
            .for_each(|z, &w, &a| {
                let zij = *z;
                let e = (-zij.abs()).exp();
                if w != 0.0 {
                    reconstruction += w * (zij.max(0.0) + e.ln_1p() - a * zij);
                }
                let r = 1.0 / (1.0 + e);
                *z = if zij >= 0.0 { r } else { e * r };
            });
        out.reconstruction = reconstruction;
        // `sig` now holds sigmoid values; the supervision term needs logits.
        for &(i, j, l) in &self.supervision {
            let zij = p.x.row(i).dot(&p.y.row(j));
            out.supervision += bce_logit(zij, l);
        }
        let lx = if self.lambda_lap != 0.0 {
            let lx = self.laplacian.values().dot(&p.x);
            out.laplacian = self.lambda_lap * (&p.x * &lx).sum();
            Some(lx)
        } else {
            None
        };
        out.frobenius = self.lambda_frob
            * (p.x.iter().map(|v| v * v).sum::<f64>() + p.y.iter().map(|v| v * v).sum::<f64>());
        if !out.total().is_finite() {
            return Err(Error::Numeric {
                context: "loss".into(),
                detail: format!("{out:?}"),
            });
        }
        Ok(Evaluation {
            breakdown: out,
            sigmoid: sig,
            lx,
        })
    }

    /// Exact gradients with respect to both factor matrices.
    pub fn gradients(&self, p: &ModelParams) -> Result<(Array2<f64>, Array2<f64>)> {
        let e = self.evaluate(p)?;
        Ok(self.gradients_at(p, &e))
    }

    /// Gradients from an [`Evaluation`] of the same parameters.
    pub fn gradients_at(&self, p: &ModelParams, e: &Evaluation) -> (Array2<f64>, Array2<f64>) {
        let mut g = &e.sigmoid - &self.target;
        g *= &self.weights;
        for &(i, j, l) in &self.supervision {
            g[[i, j]] += e.sigmoid[[i, j]] - l;
        }
        let mut dx = g.dot(&p.y);
        let mut dy = g.t().dot(&p.x);
        if let Some(lx) = &e.lx {
            dx.scaled_add(2.0 * self.lambda_lap, lx);
        }
        dx.scaled_add(2.0 * self.lambda_frob, &p.x);
        dy.scaled_add(2.0 * self.lambda_frob, &p.y);
        (dx, dy)
    }
}

/// Result of [`Objective::evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    sigmoid: Array2<f64>,
    lx: Option<Array2<f64>>,
}

impl Evaluation {
    pub fn loss(&self) -> f64 {
        self.breakdown.total()
    }
}
