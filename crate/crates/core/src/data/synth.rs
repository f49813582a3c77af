use super::{Modality, MultiModalDataset};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Tensor3};
use serde::{Deserialize, Serialize};

/// Union-of-subspaces generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub clusters: usize,
    pub subspace_dim: usize,
    /// Ambient dimension; must be a perfect square (images are `√m x √m`).
    pub ambient: usize,
    pub per_cluster: usize,
    pub modalities: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clusters: 5,
            subspace_dim: 3,
            ambient: 1024,
            per_cluster: 40,
            modalities: 3,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn side(&self) -> Option<usize> {
        let s = (self.ambient as f64).sqrt().round() as usize;
        (s * s == self.ambient).then_some(s)
    }

    fn validate(&self) -> Result<usize> {
        let side = self.side().ok_or_else(|| {
            Error::InvalidInput(format!("ambient dimension {} is not a perfect square", self.ambient))
        })?;
        if self.clusters == 0 || self.per_cluster == 0 || self.modalities == 0 {
            return Err(Error::InvalidInput(
                "clusters, per_cluster and modalities must be positive".into(),
            ));
        }
        if self.subspace_dim == 0 || self.subspace_dim > self.ambient {
            return Err(Error::InvalidInput(format!(
                "subspace dimension {} must lie in 1..={}",
                self.subspace_dim, self.ambient
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(side)
    }
}

/// Generated dataset plus the quantities it was built from.
#[derive(Clone, Debug)]
pub struct SynthTruth {
    pub dataset: MultiModalDataset,
    /// `bases[t][p]` is the `m x d` orthonormal basis of cluster `p` in modality `t`.
    pub bases: Vec<Vec<Matrix>>,
    /// Per modality, the `n x m` samples before the affine rescale to `[0, 1]`.
    pub raw: Vec<Matrix>,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<MultiModalDataset> {
    Ok(synth_generate_with_truth(spec)?.dataset)
}

/// Draws orthonormal bases `B_p(t)`, samples `B_p(t) z + noise` with one
/// coefficient vector `z ~ N(0, I)` per sample shared by all modalities,
/// then rescales each modality as a whole onto `[0, 1]`. Samples are
/// ordered cluster by cluster.
pub fn synth_generate_with_truth(spec: &SynthSpec) -> Result<SynthTruth> {
    let side = spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut basis_rng = root.derive(1);
    let mut coef_rng = root.derive(2);
    let (m, d) = (spec.ambient, spec.subspace_dim);
    let n = spec.clusters * spec.per_cluster;

    let bases: Vec<Vec<Matrix>> = (0..spec.modalities)
        .map(|_| {
            (0..spec.clusters)
                .map(|_| orthonormal_basis(m, d, &mut basis_rng))
                .collect()
        })
        .collect();
    let coefs = Matrix::from_fn(n, d, |_, _| coef_rng.normal());
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_cluster).collect();

    let mut raw = Vec::with_capacity(spec.modalities);
    let mut modalities = Vec::with_capacity(spec.modalities);
    for (t, modality_bases) in bases.iter().enumerate() {
        let mut noise_rng = root.derive(3 + t as u64);
        let mut x = Matrix::zeros(n, m);
        for i in 0..n {
            let b = &modality_bases[labels[i]];
            let z = coefs.row(i);
            let row = x.row_mut(i);
            for (r, v) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for (k, zk) in z.iter().enumerate() {
                    s += b[(r, k)] * zk;
                }
                *v = s;
            }
            if spec.noise_sigma > 0.0 {
                for v in row.iter_mut() {
                    *v += spec.noise_sigma * noise_rng.normal();
                }
            }
        }
        let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let samples = (0..n)
            .map(|i| {
                let px = x
                    .row(i)
                    .iter()
                    .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                    .collect();
                Tensor3::from_vec(side, side, 1, px)
            })
            .collect::<Result<Vec<_>>>()?;
        modalities.push(Modality {
            name: format!("modality{t}"),
            samples,
        });
        raw.push(x);
    }
    let ids = (0..n).map(|i| format!("s{i:05}")).collect();
    let dataset = MultiModalDataset::new(modalities, Some(labels), ids)?;
    Ok(SynthTruth {
        dataset,
        bases,
        raw,
    })
}

/// Modified Gram-Schmidt on a Gaussian `m x d` matrix.
fn orthonormal_basis(m: usize, d: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..d).map(|_| (0..m).map(|_| rng.normal()).collect()).collect();
        let mut ok = true;
        for k in 0..d {
            for prev in 0..k {
                let (head, tail) = cols.split_at_mut(k);
                let proj: f64 = head[prev].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
                for (v, u) in tail[0].iter_mut().zip(&head[prev]) {
                    *v -= proj * u;
                }
            }
            let norm = cols[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[k].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return Matrix::from_fn(m, d, |r, c| cols[c][r]);
        }
    }
}
