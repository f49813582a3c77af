//! Affinity construction, normalized spectral clustering and metrics.

mod metrics;

pub use metrics::{accuracy, ari, contingency, max_assignment, nmi};

use crate::error::{Error, Result};
use crate::numerics::{kmeans, sym_eig, Matrix, Rng};
use serde::{Deserialize, Serialize};

pub const KMEANS_RESTARTS: usize = 10;

/// How the signed coefficient matrix becomes a similarity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    /// `|W| + |W|ᵀ`.
    #[default]
    Abs,
    /// `W + Wᵀ` as is, possibly with negative entries.
    Raw,
}

impl std::str::FromStr for AffinityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(AffinityMode::Abs),
            "raw" => Ok(AffinityMode::Raw),
            other => Err(Error::InvalidInput(format!(
                "unknown affinity mode {other:?} (expected abs or raw)"
            ))),
        }
    }
}

/// Symmetric, zero-diagonal similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    a: Matrix,
}

impl AffinityMatrix {
    /// Wraps a matrix after checking squareness, symmetry and the diagonal.
    pub fn new(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::InvalidInput(format!("affinity must be square, got {:?}", a.shape())));
        }
        if !a.all_finite() {
            return Err(Error::InvalidInput("affinity has non-finite entries".into()));
        }
        if a.asymmetry() > 0.0 {
            return Err(Error::InvalidInput("affinity must be symmetric".into()));
        }
        if (0..a.rows()).any(|i| a[(i, i)] != 0.0) {
            return Err(Error::InvalidInput("affinity must have a zero diagonal".into()));
        }
        Ok(AffinityMatrix { a })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn into_matrix(self) -> Matrix {
        self.a
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }
}

pub fn affinity(w: &Matrix, mode: AffinityMode) -> Result<AffinityMatrix> {
    if w.rows() != w.cols() {
        return Err(Error::InvalidInput(format!("W must be square, got {:?}", w.shape())));
    }
    let n = w.rows();
    if let Some(i) = (0..n).find(|&i| w[(i, i)] != 0.0) {
        return Err(Error::InvalidInput(format!(
            "W has nonzero diagonal entry {} at index {i}",
            w[(i, i)]
        )));
    }
    let f = |v: f64| match mode {
        AffinityMode::Abs => v.abs(),
        AffinityMode::Raw => v,
    };
    AffinityMatrix::new(Matrix::from_fn(n, n, |i, j| f(w[(i, j)]) + f(w[(j, i)])))
}

/// Spectral embedding: eigenvectors of the `k` smallest eigenvalues of
/// `I - D^{-1/2} A D^{-1/2}`, rows scaled to unit length. Nodes of zero
/// degree get `D^{-1/2} = 0`.
pub fn spectral_embedding(a: &AffinityMatrix, k: usize) -> Result<Matrix> {
    let n = a.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cluster count {k} must lie in 1..={n}")));
    }
    let m = a.matrix();
    let dinv: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = m.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - dinv[i] * m[(i, j)] * dinv[j]
    });
    let eig = sym_eig(&lap)?;
    // values are descending; the k smallest are the trailing columns
    let mut u = Matrix::from_fn(n, k, |i, c| eig.vectors[(i, n - 1 - c)]);
    for i in 0..n {
        let row = u.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(u)
}

pub fn spectral_cluster(a: &AffinityMatrix, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let u = spectral_embedding(a, k)?;
    Ok(kmeans(&u, k, rng, KMEANS_RESTARTS)?.labels)
}

/// Agreement of predicted labels with ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl Metrics {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Metrics {
            acc: accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub labels: Vec<usize>,
    /// Present when ground-truth labels were available.
    pub metrics: Option<Metrics>,
    /// Trainable parameters of the whole model, counting only the active
    /// self-expressive entries.
    pub params: usize,
    pub selfexpr_params: usize,
}

impl ClusterReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        if let Some(m) = &self.metrics {
            s += &format!("ACC     {:.4}\nNMI     {:.4}\nARI     {:.4}\n", m.acc, m.nmi, m.ari);
        }
        s += &format!("params  {}\nW params {}\n", self.params, self.selfexpr_params);
        s
    }
}

/// Clusters the samples described by coefficient matrix `w` into `k` groups.
pub fn cluster_coefficients(
    w: &Matrix,
    k: usize,
    mode: AffinityMode,
    truth: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Option<Metrics>)> {
    let a = affinity(w, mode)?;
    let labels = spectral_cluster(&a, k, rng)?;
    let metrics = truth.map(|t| Metrics::compute(&labels, t)).transpose()?;
    Ok((labels, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_examples() {
        let a = affinity(&Matrix::zeros(3, 3), AffinityMode::Abs).unwrap();
        assert_eq!(a.matrix().max_abs(), 0.0);
        let w = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let a = affinity(&w, AffinityMode::Abs).unwrap();
        assert_eq!(a.matrix().data(), &[0.0, 1.0, 1.0, 0.0]);
        let w = Matrix::from_rows(&[vec![0.0, -2.0], vec![1.0, 0.0]]);
        assert_eq!(affinity(&w, AffinityMode::Abs).unwrap().matrix().data(), &[0.0, 3.0, 3.0, 0.0]);
        assert_eq!(affinity(&w, AffinityMode::Raw).unwrap().matrix().data(), &[0.0, -1.0, -1.0, 0.0]);
    }

    #[test]
    fn nonzero_diagonal_rejected() {
        let w = Matrix::identity(2);
        assert!(matches!(affinity(&w, AffinityMode::Abs), Err(Error::InvalidInput(_))));
    }

    fn blocks(sizes: &[usize]) -> (AffinityMatrix, Vec<usize>) {
        let truth: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
        let n = truth.len();
        let a = Matrix::from_fn(n, n, |i, j| if i != j && truth[i] == truth[j] { 1.0 } else { 0.0 });
        (AffinityMatrix::new(a).unwrap(), truth)
    }

    #[test]
    fn planted_blocks_recovered() {
        let (a, truth) = blocks(&[4, 5, 3]);
        let labels = spectral_cluster(&a, 3, &mut Rng::new(0)).unwrap();
        assert_eq!(accuracy(&labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn isolated_nodes_each_separate() {
        let a = AffinityMatrix::new(Matrix::zeros(4, 4)).unwrap();
        let labels = spectral_cluster(&a, 4, &mut Rng::new(1)).unwrap();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let (a, _) = blocks(&[2, 2]);
        assert!(matches!(spectral_cluster(&a, 5, &mut Rng::new(0)), Err(Error::InvalidInput(_))));
    }
}
