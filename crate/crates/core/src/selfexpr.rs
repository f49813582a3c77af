//! The self-expressive layer.
//!
//! Holds the `n x n` coefficient matrix `W` that re-expresses every latent
//! code as a combination of the others: output row `i` is
//! `Σ_j W[j][i] * L[j]`, i.e. the layer computes `Wᵀ L` for row-sample
//! latents. `W` always has a zero diagonal. Three structures are supported:
//! dense, dense with a fixed random pruning mask, and a CSC product of
//! sparse circulant layers.

use crate::csc::CscStack;
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, Rng};
use serde::{Deserialize, Serialize};

/// Standard deviation of the dense coefficient init.
pub const INIT_SIGMA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    /// `Σ |w_ij|`
    #[default]
    L1,
    /// `Σ w_ij²`
    L2,
}

/// Which weights a CSC layer's penalty is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CscPenalty {
    /// Entries of the effective product matrix.
    #[default]
    Effective,
    /// The individual support-layer weights.
    PerLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskKind {
    Full,
    RandomPruned { ratio: f64, seed: u64 },
    Csc { fan: usize, depth: usize, penalty: CscPenalty },
}

impl CscPenalty {
    pub fn as_str(&self) -> &'static str {
        match self {
            CscPenalty::Effective => "effective",
            CscPenalty::PerLayer => "per-layer",
        }
    }
}

impl std::str::FromStr for CscPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "effective" => Ok(CscPenalty::Effective),
            "per-layer" => Ok(CscPenalty::PerLayer),
            other => Err(Error::InvalidInput(format!("unknown CSC penalty {other:?}"))),
        }
    }
}

impl RegKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
        }
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(RegKind::L1),
            "l2" => Ok(RegKind::L2),
            other => Err(Error::InvalidInput(format!("unknown regularizer {other:?}"))),
        }
    }
}

/// Text form: `full`, `pruned:<ratio>:<seed>` or `csc:<F>:<L>[:<penalty>]`.
impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskKind::Full => write!(f, "full"),
            MaskKind::RandomPruned { ratio, seed } => write!(f, "pruned:{ratio:?}:{seed}"),
            MaskKind::Csc {
                fan,
                depth,
                penalty,
            } => write!(f, "csc:{fan}:{depth}:{}", penalty.as_str()),
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse mask {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["full"] => Ok(MaskKind::Full),
            ["pruned", ratio, seed] => Ok(MaskKind::RandomPruned {
                ratio: ratio.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            ["csc", fan, depth, rest @ ..] if rest.len() <= 1 => Ok(MaskKind::Csc {
                fan: fan.parse().map_err(|_| bad())?,
                depth: depth.parse().map_err(|_| bad())?,
                penalty: match rest.first() {
                    None => CscPenalty::Effective,
                    Some(p) => p.parse().map_err(|_| bad())?,
                },
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Coefficients {
    Dense {
        w: Matrix,
        /// `true` where an entry is trainable; `None` means all off-diagonal.
        active: Option<Vec<bool>>,
    },
    Csc {
        stack: CscStack,
        /// `weights[layer][row * F + j]` sits on edge `row -> column(layer, row, j)`.
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfExpressiveLayer {
    n: usize,
    kind: MaskKind,
    coeffs: Coefficients,
}

/// Random edge removal: `true` marks a kept entry. The diagonal is never
/// kept and exactly `floor(ratio * (n² - n))` off-diagonal entries are dropped.
pub fn prune_random(n: usize, ratio: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!(
            "pruning ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let off: Vec<usize> = (0..n * n).filter(|&k| k / n != k % n).collect();
    let drop = (ratio * off.len() as f64).floor() as usize;
    let mut order = off.clone();
    rng.shuffle(&mut order);
    let mut keep = vec![false; n * n];
    for &k in &off {
        keep[k] = true;
    }
    for &k in &order[..drop] {
        keep[k] = false;
    }
    Ok(keep)
}

impl SelfExpressiveLayer {
    /// Fresh layer for `n` samples. Dense weights start Gaussian with
    /// `σ = 1e-4`; CSC layer weights start Gaussian with `σ = 1e-4^(1/L)`
    /// so the product has the same scale.
    pub fn new(n: usize, kind: MaskKind, rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "self-expression needs at least 2 samples, got {n}"
            )));
        }
        let coeffs = match &kind {
            MaskKind::Full => Coefficients::Dense {
                w: Matrix::from_fn(n, n, |_, _| INIT_SIGMA * rng.normal()),
                active: None,
            },
            MaskKind::RandomPruned { ratio, seed } => {
                let active = prune_random(n, *ratio, &mut Rng::new(*seed))?;
                Coefficients::Dense {
                    w: Matrix::from_fn(n, n, |_, _| INIT_SIGMA * rng.normal()),
                    active: Some(active),
                }
            }
            MaskKind::Csc { fan, depth, .. } => {
                let stack = CscStack::padded(n, *fan, *depth)?;
                let sigma = INIT_SIGMA.powf(1.0 / stack.depth() as f64);
                let per_layer = stack.n() * stack.fan();
                let weights = (0..stack.depth())
                    .map(|_| (0..per_layer).map(|_| sigma * rng.normal()).collect())
                    .collect();
                Coefficients::Csc { stack, weights }
            }
        };
        let mut layer = SelfExpressiveLayer { n, kind, coeffs };
        layer.project();
        Ok(layer)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &MaskKind {
        &self.kind
    }

    pub fn csc_stack(&self) -> Option<&CscStack> {
        match &self.coeffs {
            Coefficients::Csc { stack, .. } => Some(stack),
            Coefficients::Dense { .. } => None,
        }
    }

    /// Node count of the coefficient structure (`n`, or the padded CSC size).
    pub fn padded_n(&self) -> usize {
        self.csc_stack().map_or(self.n, CscStack::n)
    }

    /// Whether `W[i][j]` may be nonzero.
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match &self.coeffs {
            Coefficients::Dense { active: None, .. } | Coefficients::Csc { .. } => true,
            Coefficients::Dense {
                active: Some(mask), ..
            } => mask[i * self.n + j],
        }
    }

    /// Number of trainable coefficients.
    pub fn active_param_count(&self) -> usize {
        match &self.coeffs {
            Coefficients::Dense { active: None, .. } => self.n * self.n - self.n,
            Coefficients::Dense {
                active: Some(mask), ..
            } => mask.iter().filter(|&&k| k).count(),
            Coefficients::Csc { stack, .. } => stack.edge_count(),
        }
    }

    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        match &self.coeffs {
            Coefficients::Dense { .. } => self.n * self.n,
            Coefficients::Csc { weights, .. } => weights.iter().map(Vec::len).sum(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::Dense { w, .. } => w.data().to_vec(),
            Coefficients::Csc { weights, .. } => weights.concat(),
        }
    }

    /// Replaces all parameters, then re-applies the structural constraints.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "self-expressive layer has {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        match &mut self.coeffs {
            Coefficients::Dense { w, .. } => w.data_mut().copy_from_slice(params),
            Coefficients::Csc { weights, .. } => {
                let mut at = 0;
                for layer in weights.iter_mut() {
                    let len = layer.len();
                    layer.copy_from_slice(&params[at..at + len]);
                    at += len;
                }
            }
        }
        self.project();
        Ok(())
    }

    /// Zeroes the diagonal and every masked-out entry of a dense `W`.
    pub fn project(&mut self) {
        let n = self.n;
        if let Coefficients::Dense { w, active } = &mut self.coeffs {
            w.zero_diagonal();
            if let Some(mask) = active {
                for (v, &keep) in w.data_mut().iter_mut().zip(mask.iter()) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
            debug_assert_eq!(w.rows(), n);
        }
    }

    /// The `n x n` coefficient matrix actually applied: for CSC, the
    /// leading block of the support-layer product with its diagonal zeroed.
    pub fn effective(&self) -> Matrix {
        match &self.coeffs {
            Coefficients::Dense { w, .. } => w.clone(),
            Coefficients::Csc { stack, weights } => {
                let full = csc_prefixes(stack, weights).pop().expect("depth >= 1");
                let np = stack.n();
                let mut w = Matrix::from_fn(self.n, self.n, |i, j| full[i * np + j]);
                w.zero_diagonal();
                w
            }
        }
    }

    /// `Wᵀ L`: row `i` of the result is `Σ_j W[j][i] L[j]`.
    pub fn self_express(&self, latents: &Matrix) -> Result<Matrix> {
        if latents.rows() != self.n {
            return Err(Error::Shape(format!(
                "self-expression over {} samples given {} latent rows",
                self.n,
                latents.rows()
            )));
        }
        let w = self.effective();
        let mut out = Matrix::zeros(self.n, latents.cols());
        gemm(1.0, &w, true, latents, false, 0.0, &mut out)?;
        Ok(out)
    }

    /// Sparsity penalty: `Σ|w|` or `Σ w²` over trainable coefficients.
    pub fn regularizer(&self, kind: RegKind) -> f64 {
        let penalize = |vals: &[f64]| -> f64 {
            match kind {
                RegKind::L1 => vals.iter().map(|v| v.abs()).sum(),
                RegKind::L2 => vals.iter().map(|v| v * v).sum(),
            }
        };
        match (&self.coeffs, &self.kind) {
            (
                Coefficients::Csc { weights, .. },
                MaskKind::Csc {
                    penalty: CscPenalty::PerLayer,
                    ..
                },
            ) => weights.iter().map(|w| penalize(w)).sum(),
            _ => penalize(self.effective().data()),
        }
    }

    /// Chains a gradient with respect to the effective matrix, plus
    /// `reg_weight` times the penalty gradient, back onto the parameters.
    /// Diagonal and masked-out positions receive exactly zero.
    pub fn param_grad(&self, grad_eff: &Matrix, reg: RegKind, reg_weight: f64) -> Result<Vec<f64>> {
        let n = self.n;
        if grad_eff.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "coefficient gradient is {:?}, expected {n}x{n}",
                grad_eff.shape()
            )));
        }
        let penalty_grad = |v: f64| match reg {
            RegKind::L1 => reg_weight * sign(v),
            RegKind::L2 => reg_weight * 2.0 * v,
        };
        match &self.coeffs {
            Coefficients::Dense { w, .. } => {
                let mut g = grad_eff.clone();
                for i in 0..n {
                    for j in 0..n {
                        g[(i, j)] = if self.is_active(i, j) {
                            grad_eff[(i, j)] + penalty_grad(w[(i, j)])
                        } else {
                            0.0
                        };
                    }
                }
                Ok(g.into_vec())
            }
            Coefficients::Csc { stack, weights } => {
                let per_layer = matches!(
                    self.kind,
                    MaskKind::Csc {
                        penalty: CscPenalty::PerLayer,
                        ..
                    }
                );
                let np = stack.n();
                let mut g = vec![0.0; np * np];
                let eff = (!per_layer).then(|| self.effective());
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let mut v = grad_eff[(i, j)];
                        if let Some(e) = &eff {
                            v += penalty_grad(e[(i, j)]);
                        }
                        g[i * np + j] = v;
                    }
                }
                let mut grads = csc_backprop(stack, weights, g);
                if per_layer {
                    for (gl, wl) in grads.iter_mut().zip(weights) {
                        for (gv, &wv) in gl.iter_mut().zip(wl) {
                            *gv += penalty_grad(wv);
                        }
                    }
                }
                Ok(grads.concat())
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dense prefix products `V_0`, `V_0 V_1`, ..., row-major `N x N`.
fn csc_prefixes(stack: &CscStack, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let np = stack.n();
    let fan = stack.fan();
    let mut out = Vec::with_capacity(stack.depth());
    let mut first = vec![0.0; np * np];
    for r in 0..np {
        for j in 0..fan {
            first[r * np + stack.column(0, r, j)] += weights[0][r * fan + j];
        }
    }
    out.push(first);
    for layer in 1..stack.depth() {
        let prev = out.last().expect("non-empty");
        let mut next = vec![0.0; np * np];
        for a in 0..np {
            let src = &prev[a * np..(a + 1) * np];
            let dst = &mut next[a * np..(a + 1) * np];
            for (r, &pv) in src.iter().enumerate() {
                if pv == 0.0 {
                    continue;
                }
                for j in 0..fan {
                    dst[stack.column(layer, r, j)] += pv * weights[layer][r * fan + j];
                }
            }
        }
        out.push(next);
    }
    out
}

/// Gradients of every support layer given the gradient `g` of the full
/// `N x N` product.
fn csc_backprop(stack: &CscStack, weights: &[Vec<f64>], mut g: Vec<f64>) -> Vec<Vec<f64>> {
    let np = stack.n();
    let fan = stack.fan();
    let prefixes = csc_prefixes(stack, weights);
    let mut grads = vec![Vec::new(); stack.depth()];
    for layer in (0..stack.depth()).rev() {
        let mut gl = vec![0.0; np * fan];
        if layer == 0 {
            for r in 0..np {
                for j in 0..fan {
                    gl[r * fan + j] = g[r * np + stack.column(0, r, j)];
                }
            }
        } else {
            let p = &prefixes[layer - 1];
            for a in 0..np {
                let prow = &p[a * np..(a + 1) * np];
                let grow = &g[a * np..(a + 1) * np];
                for (r, &pv) in prow.iter().enumerate() {
                    if pv == 0.0 {
                        continue;
                    }
                    for j in 0..fan {
                        gl[r * fan + j] += pv * grow[stack.column(layer, r, j)];
                    }
                }
            }
            // Gradient with respect to the previous prefix: g V_layerᵀ.
            let mut prev = vec![0.0; np * np];
            for a in 0..np {
                let grow = &g[a * np..(a + 1) * np];
                let dst = &mut prev[a * np..(a + 1) * np];
                for (r, d) in dst.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for j in 0..fan {
                        s += grow[stack.column(layer, r, j)] * weights[layer][r * fan + j];
                    }
                    *d = s;
                }
            }
            g = prev;
        }
        grads[layer] = gl;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(n: usize, rows: &[Vec<f64>]) -> SelfExpressiveLayer {
        let mut layer = SelfExpressiveLayer::new(n, MaskKind::Full, &mut Rng::new(0)).unwrap();
        layer.set_params(&Matrix::from_rows(rows).into_vec()).unwrap();
        layer
    }

    #[test]
    fn zero_w_gives_zero_output() {
        let layer = dense(3, &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]);
        let l = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let out = layer.self_express(&l).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(l.sub(&out).unwrap().frobenius_sq(), l.frobenius_sq());
    }

    #[test]
    fn swap_matrix_swaps_rows() {
        let layer = dense(2, &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let l = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let out = layer.self_express(&l).unwrap();
        assert_eq!(out, Matrix::from_rows(&[vec![4.0, 5.0, 6.0], vec![1.0, 2.0, 3.0]]));
    }

    #[test]
    fn regularizer_values() {
        let zero = dense(2, &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(zero.regularizer(RegKind::L1), 0.0);
        assert_eq!(zero.regularizer(RegKind::L2), 0.0);
        let w = dense(2, &[vec![0.0, -2.0], vec![3.0, 0.0]]);
        assert_eq!(w.regularizer(RegKind::L1), 5.0);
        assert_eq!(w.regularizer(RegKind::L2), 13.0);
    }

    #[test]
    fn diagonal_is_projected_away() {
        let layer = dense(2, &[vec![5.0, 1.0], vec![1.0, 7.0]]);
        let w = layer.effective();
        assert_eq!((w[(0, 0)], w[(1, 1)]), (0.0, 0.0));
    }

    #[test]
    fn prune_random_counts_and_determinism() {
        let mask = prune_random(10, 0.0, &mut Rng::new(1)).unwrap();
        assert_eq!(mask.iter().filter(|&&k| !k).count(), 10);
        let a = prune_random(10, 0.5, &mut Rng::new(2)).unwrap();
        let b = prune_random(10, 0.5, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
        let dropped_off_diag = (0..100).filter(|&k| k / 10 != k % 10 && !a[k]).count();
        assert_eq!(dropped_off_diag, 45);
        assert!((0..10).all(|i| !a[i * 10 + i]));
        assert!(prune_random(10, 1.0, &mut Rng::new(0)).is_err());
        assert!(prune_random(10, -0.1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn active_counts() {
        let mut rng = Rng::new(3);
        let full = SelfExpressiveLayer::new(100, MaskKind::Full, &mut rng).unwrap();
        assert_eq!(full.active_param_count(), 9900);
        let pruned = SelfExpressiveLayer::new(
            10,
            MaskKind::RandomPruned {
                ratio: 0.3,
                seed: 9,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(pruned.active_param_count(), 63);
        let csc = SelfExpressiveLayer::new(
            8,
            MaskKind::Csc {
                fan: 2,
                depth: 3,
                penalty: CscPenalty::Effective,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(csc.active_param_count(), 48);
    }

    #[test]
    fn masked_entries_stay_zero_and_get_zero_gradient() {
        let mut rng = Rng::new(4);
        let mut layer = SelfExpressiveLayer::new(
            6,
            MaskKind::RandomPruned {
                ratio: 0.5,
                seed: 1,
            },
            &mut rng,
        )
        .unwrap();
        let ones = vec![1.0; 36];
        layer.set_params(&ones).unwrap();
        let w = layer.effective();
        let grad = layer
            .param_grad(&Matrix::from_fn(6, 6, |_, _| 1.0), RegKind::L1, 1.0)
            .unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if !layer.is_active(i, j) {
                    assert_eq!(w[(i, j)], 0.0);
                    assert_eq!(grad[i * 6 + j], 0.0);
                } else {
                    assert_eq!(w[(i, j)], 1.0);
                }
            }
        }
    }

    #[test]
    fn csc_effective_is_zero_diagonal_product() {
        let mut rng = Rng::new(5);
        let layer = SelfExpressiveLayer::new(
            4,
            MaskKind::Csc {
                fan: 2,
                depth: 2,
                penalty: CscPenalty::Effective,
            },
            &mut rng,
        )
        .unwrap();
        let w = layer.effective();
        assert!((0..4).all(|i| w[(i, i)] == 0.0));
        assert!((0..4).all(|i| (0..4).any(|j| i != j && w[(i, j)] != 0.0)));
    }
}
