//! Cyclic sparsely connected (CSC) support stacks.
//!
//! A stack replaces a dense `N x N` layer with `L` circulant support layers
//! of fan-out `F`. Layer `i` is generated by `p_i(x) = Σ_{j<F} x^(S_i j)`
//! with stride `S_i = F^i`: the first row of its adjacency matrix has ones
//! at columns `S_i j mod N` and every further row is the previous one
//! shifted right by one. With `F^L = N C` every input reaches every output
//! along exactly `C` paths, and the stack has `E = N F L` edges.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CscStack {
    n: usize,
    fan: usize,
    depth: usize,
    connectivity: usize,
    strides: Vec<usize>,
}

impl CscStack {
    /// Stack with connectivity 1; requires `fan^depth == n`.
    pub fn build(n: usize, fan: usize, depth: usize) -> Result<Self> {
        Self::with_connectivity(n, fan, depth, 1)
    }

    pub fn with_connectivity(n: usize, fan: usize, depth: usize, connectivity: usize) -> Result<Self> {
        if n == 0 || fan == 0 || depth == 0 {
            return Err(Error::InvalidInput(format!(
                "CSC needs positive N, F, L (got N={n}, F={fan}, L={depth})"
            )));
        }
        if connectivity != 1 {
            return Err(Error::InvalidInput(format!(
                "only connectivity C = 1 is supported, got {connectivity}"
            )));
        }
        let reach = checked_pow(fan, depth);
        if reach != n.checked_mul(connectivity) {
            return Err(Error::ConstraintViolation(format!(
                "F^L = N*C does not hold: {fan}^{depth} = {} but N*C = {n}*{connectivity} = {}",
                reach.map_or_else(|| "overflow".to_string(), |r| r.to_string()),
                n * connectivity
            )));
        }
        let strides = (0..depth).map(|i| fan.pow(i as u32)).collect();
        Ok(CscStack {
            n,
            fan,
            depth,
            connectivity,
            strides,
        })
    }

    /// Smallest stack covering `samples` nodes with at least `min_depth`
    /// layers: depth `max(min_depth, ceil(log_F samples))`, `N = F^depth`.
    pub fn padded(samples: usize, fan: usize, min_depth: usize) -> Result<Self> {
        if fan < 2 {
            return Err(Error::InvalidInput(format!("padding needs F >= 2, got {fan}")));
        }
        if samples == 0 {
            return Err(Error::InvalidInput("no samples to cover".into()));
        }
        let mut depth = min_depth.max(1);
        loop {
            match checked_pow(fan, depth) {
                Some(n) if n >= samples => return Self::build(n, fan, depth),
                Some(_) => depth += 1,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{fan}^{depth} overflows while padding {samples} samples"
                    )))
                }
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fan(&self) -> usize {
        self.fan
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn connectivity(&self) -> usize {
        self.connectivity
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Column reached from `row` through the `j`-th edge of `layer`.
    #[inline]
    pub fn column(&self, layer: usize, row: usize, j: usize) -> usize {
        (row + self.strides[layer] * j) % self.n
    }

    /// Coefficients of `p_layer(x)` reduced mod `x^N - 1`.
    pub fn generator_polynomial(&self, layer: usize) -> Vec<u64> {
        let mut coeffs = vec![0u64; self.n];
        for j in 0..self.fan {
            coeffs[(self.strides[layer] * j) % self.n] += 1;
        }
        coeffs
    }

    /// Adjacency matrix of one support layer, row-major.
    pub fn support(&self, layer: usize) -> Vec<u64> {
        let n = self.n;
        let mut a = vec![0u64; n * n];
        for r in 0..n {
            for j in 0..self.fan {
                a[r * n + self.column(layer, r, j)] += 1;
            }
        }
        a
    }

    /// `E = N F L`.
    pub fn edge_count(&self) -> usize {
        let e = self.n * self.fan * self.depth;
        assert_eq!(
            e,
            self.n * self.fan * int_log(self.fan, self.n * self.connectivity),
            "E = N F log_F(N C) must agree with E = N F L"
        );
        e
    }

    /// Exact integer product of all supports; returns its common entry.
    pub fn verify_connectivity(&self) -> Result<u64> {
        let product = self.support_product();
        let first = product[0];
        if let Some(pos) = product.iter().position(|&v| v != first) {
            return Err(Error::Structure(format!(
                "support product is not constant: entry ({}, {}) = {} but (0, 0) = {first}",
                pos / self.n,
                pos % self.n,
                product[pos]
            )));
        }
        Ok(first)
    }

    /// `A_0 A_1 ... A_{L-1}` in exact integer arithmetic.
    pub fn support_product(&self) -> Vec<u64> {
        let n = self.n;
        let mut acc = self.support(0);
        for layer in 1..self.depth {
            let mut next = vec![0u64; n * n];
            for a in 0..n {
                for r in 0..n {
                    let v = acc[a * n + r];
                    if v == 0 {
                        continue;
                    }
                    for j in 0..self.fan {
                        next[a * n + self.column(layer, r, j)] += v;
                    }
                }
            }
            acc = next;
        }
        acc
    }
}

/// Cyclic convolution of coefficient vectors mod `x^n - 1`.
pub fn poly_mul_mod(a: &[u64], b: &[u64], n: usize) -> Vec<u64> {
    let mut out = vec![0u64; n];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[(i + j) % n] += x * y;
        }
    }
    out
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// `log_base(value)` for exact powers.
fn int_log(base: usize, mut value: usize) -> usize {
    if base == 1 {
        return 0;
    }
    let mut k = 0;
    while value > 1 {
        assert_eq!(value % base, 0, "not an exact power");
        value /= base;
        k += 1;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_two_two_generators() {
        let s = CscStack::build(4, 2, 2).unwrap();
        assert_eq!(s.generator_polynomial(0), vec![1, 1, 0, 0]);
        assert_eq!(s.generator_polynomial(1), vec![1, 0, 1, 0]);
        let prod = poly_mul_mod(&s.generator_polynomial(0), &s.generator_polynomial(1), 4);
        assert_eq!(prod, vec![1, 1, 1, 1]);
        assert_eq!(s.edge_count(), 16);
        assert_eq!(s.verify_connectivity().unwrap(), 1);
    }

    #[test]
    fn eight_two_three_strides() {
        let s = CscStack::build(8, 2, 3).unwrap();
        assert_eq!(s.strides(), &[1, 2, 4]);
        assert!(s.support_product().iter().all(|&v| v == 1));
        assert_eq!(s.edge_count(), 48);
    }

    #[test]
    fn infeasible_configuration_rejected() {
        assert!(matches!(
            CscStack::build(6, 2, 2),
            Err(Error::ConstraintViolation(_))
        ));
        assert!(CscStack::with_connectivity(8, 2, 4, 2).is_err());
    }

    #[test]
    fn single_dense_cyclic_layer() {
        let s = CscStack::build(5, 5, 1).unwrap();
        assert_eq!(s.verify_connectivity().unwrap(), 1);
        assert_eq!(s.edge_count(), 25);
    }

    #[test]
    fn nine_three_two_edge_count_matches_support_ones() {
        let s = CscStack::build(9, 3, 2).unwrap();
        let ones: u64 = (0..2).map(|l| s.support(l).iter().sum::<u64>()).sum();
        assert_eq!(ones as usize, s.edge_count());
        assert_eq!(s.edge_count(), 54);
    }

    #[test]
    fn padding_picks_next_power() {
        let s = CscStack::padded(200, 3, 2).unwrap();
        assert_eq!((s.n(), s.depth()), (243, 5));
        let s = CscStack::padded(200, 4, 4).unwrap();
        assert_eq!((s.n(), s.depth()), (256, 4));
        let s = CscStack::padded(256, 16, 2).unwrap();
        assert_eq!((s.n(), s.depth()), (256, 2));
        let s = CscStack::padded(16, 16, 1).unwrap();
        assert_eq!((s.n(), s.depth()), (16, 1));
    }

    #[test]
    fn non_constant_product_is_a_structure_error() {
        // Hand-built stack violating F^L = N (bypasses the constructor).
        let s = CscStack {
            n: 6,
            fan: 2,
            depth: 2,
            connectivity: 1,
            strides: vec![1, 2],
        };
        assert!(matches!(s.verify_connectivity(), Err(Error::Structure(_))));
    }
}
