use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::IncidenceMatrix;

/// Strength at or above which a label counts as a positive link.
pub const POSITIVE_CUTOFF: f64 = 0.5;

/// Cells of the next timestep whose labels are known to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionMask {
    n_rows: usize,
    n_cols: usize,
    fraction: f64,
    cells: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl SupervisionMask {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SupervisionMask {
            n_rows,
            n_cols,
            fraction: 0.0,
            cells: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Mask over explicit cells; duplicates are dropped.
    pub fn from_cells(
        n_rows: usize,
        n_cols: usize,
        mut cells: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= n_rows || j >= n_cols) {
            return Err(Error::index(format!(
                "cell ({i}, {j}) outside {n_rows}x{n_cols}"
            )));
        }
        cells.sort_unstable();
        cells.dedup();
        let total = (n_rows * n_cols).max(1) as f64;
        Ok(SupervisionMask {
            n_rows,
            n_cols,
            fraction: cells.len() as f64 / total,
            cells,
            warnings: Vec::new(),
        })
    }

    /// Sorted row-major cell list.
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn contains(&self, cell: (usize, usize)) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }
}

/// Draws disjoint train and evaluation masks of `floor(fraction * n * m)`
/// cells each, balanced between positive and negative labels where the
/// labels allow it.
///
/// Positives and negatives are shuffled once with the seeded generator and
/// split in halves, so train and eval never share a cell.
pub fn split_supervision(
    h_next: &IncidenceMatrix,
    fraction: f64,
    seed: u64,
) -> Result<(SupervisionMask, SupervisionMask)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::domain(format!(
            "supervision fraction {fraction} outside (0, 0.5]"
        )));
    }
    let (n, m) = h_next.shape();
    let want = (fraction * (n * m) as f64).floor() as usize;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if h_next.get(i, j) >= POSITIVE_CUTOFF {
                pos.push((i, j));
            } else {
                neg.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let want_pos = want.div_ceil(2);
    let pos_each = want_pos.min(pos.len() / 2);
    let neg_each = (want - pos_each).min(neg.len() / 2);
    let mut warnings = Vec::new();
    if pos_each < want_pos {
        let msg =
            format!("only {pos_each} of {want_pos} requested positive cells available per mask");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if pos_each + neg_each < want {
        let msg = format!(
            "masks hold {} of {want} requested cells",
            pos_each + neg_each
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let build = |p: &[(usize, usize)], q: &[(usize, usize)]| {
        let mut cells: Vec<_> = p.iter().chain(q).copied().collect();
        cells.sort_unstable();
        SupervisionMask {
            n_rows: n,
            n_cols: m,
            fraction,
            cells,
            warnings: warnings.clone(),
        }
    };
    let train = build(&pos[..pos_each], &neg[..neg_each]);
    let eval = build(&pos[pos_each..2 * pos_each], &neg[neg_each..2 * neg_each]);
    Ok((train, eval))
}
