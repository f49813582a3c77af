use super::Matrix;
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Output rows handed to one gemm task. Fixed so that results are
/// independent of the thread count.
const ROW_BLOCK: usize = 32;

/// Below this many multiply-adds a single gemm call is used.
const PARALLEL_WORK: usize = 1 << 20;

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) -> Result<()> {
    let (m, k) = if trans_a {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let (kb, n) = if trans_b {
        (b.cols(), b.rows())
    } else {
        (b.rows(), b.cols())
    };
    if k != kb || c.rows() != m || c.cols() != n {
        return Err(Error::Shape(format!(
            "gemm: op(a) is {m}x{k}, op(b) is {kb}x{n}, c is {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.scale(beta);
        return Ok(());
    }
    // Strides of op(a) and op(b) in elements.
    let (rsa, csa) = if trans_a {
        (1, a.cols() as isize)
    } else {
        (a.cols() as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols() as isize)
    } else {
        (b.cols() as isize, 1)
    };
    let a_data = a.data();
    let b_data = b.data();

    let run = |row0: usize, rows: usize, out: &mut [f64]| {
        let a_off = row0 as isize * rsa;
        debug_assert!(out.len() == rows * n);
        // SAFETY: the pointers and strides describe in-bounds views of
        // `a_data` (rows row0..row0+rows of op(a)), `b_data` (all of op(b))
        // and `out` (a contiguous rows x n row-major block).
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                alpha,
                a_data.as_ptr().offset(a_off),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                beta,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };

    if m * n * k < PARALLEL_WORK || m <= ROW_BLOCK {
        run(0, m, c.data_mut());
    } else {
        c.data_mut()
            .par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(blk, out)| run(blk * ROW_BLOCK, out.len() / n, out));
    }
    Ok(())
}

/// `l * lᵀ`, computing only the upper block triangle and mirroring it, so
/// the result is exactly symmetric.
pub fn gram(l: &Matrix) -> Matrix {
    let n = l.rows();
    let d = l.cols();
    let mut g = Matrix::zeros(n, n);
    if n == 0 {
        return g;
    }
    let data = l.data();
    g.data_mut()
        .par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, out)| {
            let row0 = blk * ROW_BLOCK;
            let rows = out.len() / n;
            if d == 0 {
                return;
            }
            // SAFETY: rows row0.. of `l` times rows row0..n of `l` transposed,
            // written into columns row0..n of this contiguous output block.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    d,
                    n - row0,
                    1.0,
                    data.as_ptr().add(row0 * d),
                    d as isize,
                    1,
                    data.as_ptr().add(row0 * d),
                    1,
                    d as isize,
                    0.0,
                    out.as_mut_ptr().add(row0),
                    n as isize,
                    1,
                );
            }
        });
    for i in 0..n {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs().max(1.0);
    if a.asymmetry() > 1e-9 * scale {
        return Err(Error::InvalidInput(format!(
            "sym_eig input is not symmetric (max |a_ij - a_ji| = {:e})",
            a.asymmetry()
        )));
    }
    if !a.all_finite() {
        return Err(Error::InvalidInput("sym_eig input has non-finite entries".into()));
    }
    let n = a.rows();
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let norm = m.frobenius();
    let target = JACOBI_TOL * norm;

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    let (row_p, row_q) = {
        let data = m.data_mut();
        let (lo, hi) = data.split_at_mut(q * n);
        (&mut lo[p * n..(p + 1) * n], &mut hi[..n])
    };
    for (mp, mq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let a = *mp;
        let b = *mq;
        *mp = c * a - s * b;
        *mq = s * a + c * b;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
