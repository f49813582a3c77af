//! Slow, literal reference implementations used as test oracles.

use vmsc::csc::CscStack;
use vmsc::data::MultiModalDataset;
use vmsc::model::{DecoderInput, VmscModel};
use vmsc::numerics::{Matrix, Tensor3};
use vmsc::selfexpr::RegKind;
use vmsc::volterra::{BankOutput, VolterraBank, VolterraChannel};

/// Zero-padded patch of `ch` centered at `(y, x)`, tap order `c, dy, dx`.
fn patch(ch: &VolterraChannel, input: &Tensor3, y: usize, x: usize) -> Vec<f64> {
    let k = ch.filter_size();
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(ch.taps());
    for c in 0..ch.in_channels() {
        for dy in 0..k {
            for dx in 0..k {
                let yy = y as isize + dy as isize - r;
                let xx = x as isize + dx as isize - r;
                let inside = yy >= 0
                    && xx >= 0
                    && (yy as usize) < input.height()
                    && (xx as usize) < input.width();
                out.push(if inside {
                    input.get(yy as usize, xx as usize, ch.input_offset() + c)
                } else {
                    0.0
                });
            }
        }
    }
    out
}

/// The full double sum `Σ h1 x + Σ_τ1 Σ_τ2 h2[τ1][τ2] x_τ1 x_τ2`.
pub fn volterra_channel(ch: &VolterraChannel, input: &Tensor3) -> Vec<f64> {
    let (h, w) = (input.height(), input.width());
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = patch(ch, input, y, x);
            let mut acc = 0.0;
            for t1 in 0..p.len() {
                acc += ch.linear()[t1] * p[t1];
                for t2 in 0..p.len() {
                    acc += ch.h2(t1, t2) * p[t1] * p[t2];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

pub fn volterra_bank(bank: &VolterraBank, input: &Tensor3) -> Tensor3 {
    let (h, w) = (input.height(), input.width());
    let maps: Vec<Vec<f64>> = bank.channels().iter().map(|c| volterra_channel(c, input)).collect();
    match bank.output_mode() {
        BankOutput::Stacked => Tensor3::from_vec(h, w, maps.len(), maps.concat()).unwrap(),
        BankOutput::Summed => {
            let mut sum = vec![0.0; h * w];
            for m in &maps {
                for (s, v) in sum.iter_mut().zip(m) {
                    *s += v;
                }
            }
            Tensor3::from_vec(h, w, 1, sum).unwrap()
        }
    }
}

/// Best fraction matched over all bijections between padded label sets.
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permutations(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permutations(v: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == v.len() {
        f(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permutations(v, at + 1, f);
        v.swap(at, i);
    }
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| labels.iter().filter(|&&l| l == c).count() as f64 / n)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// `I(P;T) / sqrt(H(P) H(T))`, counting joint events sample by sample.
pub fn brute_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let (hp, ht) = (entropy(pred), entropy(truth));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let mut mi = 0.0;
    for a in 0..kp {
        for b in 0..kt {
            let joint = pred.iter().zip(truth).filter(|(x, y)| **x == a && **y == b).count() as f64 / n;
            if joint > 0.0 {
                let pa = pred.iter().filter(|&&x| x == a).count() as f64 / n;
                let pb = truth.iter().filter(|&&y| y == b).count() as f64 / n;
                mi += joint * (joint / (pa * pb)).ln();
            }
        }
    }
    mi / (hp * ht).sqrt()
}

/// Adjusted Rand index from explicit pair enumeration.
pub fn brute_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut in_pred, mut in_truth, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let p = pred[i] == pred[j];
            let t = truth[i] == truth[j];
            pairs += 1.0;
            in_pred += p as u8 as f64;
            in_truth += t as u8 as f64;
            both += (p && t) as u8 as f64;
        }
    }
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = in_pred * in_truth / pairs;
    let max = 0.5 * (in_pred + in_truth);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Calls `f` with every labeling of `n` samples over `k` labels.
pub fn for_each_labeling(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    let mut v = vec![0usize; n];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            v[i] += 1;
            if v[i] < k {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

/// Support layer `i` as a dense 0/1 integer matrix.
pub fn support_matrix(stack: &CscStack, layer: usize) -> Vec<Vec<u64>> {
    let n = stack.n();
    let mut a = vec![vec![0u64; n]; n];
    for (r, row) in a.iter_mut().enumerate() {
        for j in 0..stack.fan() {
            row[stack.column(layer, r, j)] += 1;
        }
    }
    a
}

pub fn int_matmul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let n = a.len();
    let m = b[0].len();
    let mut c = vec![vec![0u64; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            if a[i][k] != 0 {
                for j in 0..m {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    c
}

/// Product of two polynomials modulo `x^n - 1`, by explicit coefficients.
pub fn cyclic_convolve(a: &[u64], b: &[u64], n: usize) -> Vec<u64> {
    let mut out = vec![0u64; n];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[(i + j) % n] += x * y;
        }
    }
    out
}

/// Flattened latent row of sample `i` (modality, channel, row, col order).
pub fn latent_row(model: &VmscModel, data: &MultiModalDataset, i: usize) -> Vec<f64> {
    (0..data.modality_count())
        .flat_map(|t| volterra_bank(&model.encoders()[t], &data.modality(t).samples[i]).into_vec())
        .collect()
}

/// The objective evaluated term by term with the slow oracles, as
/// `(reg, recon, selfexpr)` with weights applied.
pub fn straight_line_loss(model: &VmscModel, data: &MultiModalDataset) -> (f64, f64, f64) {
    let n = data.n();
    let weights = *model.weights();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| latent_row(model, data, i)).collect();
    let d = rows[0].len();
    let w = model.coefficients();
    // z_i = Σ_j W[j][i] l_j
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|c| (0..n).map(|j| w[(j, i)] * rows[j][c]).sum())
                .collect()
        })
        .collect();
    let mut se = 0.0;
    for i in 0..n {
        for c in 0..d {
            se += (rows[i][c] - z[i][c]).powi(2);
        }
    }
    let mut recon = 0.0;
    for i in 0..n {
        let source = match model.decoder_input() {
            DecoderInput::Latent => &rows[i],
            DecoderInput::SelfExpressed => &z[i],
        };
        let mut at = 0;
        for t in 0..data.modality_count() {
            let (h, wd, _) = data.shape(t);
            let c = model.encoders()[t].out_channels();
            let latent = Tensor3::from_vec(h, wd, c, source[at..at + h * wd * c].to_vec()).unwrap();
            at += h * wd * c;
            let xr = volterra_bank(&model.decoders()[t], &latent);
            let x = &data.modality(t).samples[i];
            recon += xr.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    let reg = match weights.reg {
        RegKind::L1 => w.data().iter().map(|v| v.abs()).sum::<f64>(),
        RegKind::L2 => w.data().iter().map(|v| v * v).sum::<f64>(),
    };
    (
        weights.lambda * reg,
        0.5 * weights.gamma * recon,
        0.5 * weights.mu * se,
    )
}

/// Dense matrix from a closure, for readability in tests.
pub fn dense(n: usize, f: impl FnMut(usize, usize) -> f64) -> Matrix {
    Matrix::from_fn(n, n, f)
}
