//! Clustering accuracy (optimal label matching), normalized mutual
//! information and the adjusted Rand index.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "label length mismatch: predicted {}, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Relabels to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

/// Counts `table[p][t]` of samples with predicted label `p` and true label `t`.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<usize>>> {
    check_lengths(pred, truth)?;
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (a, b) in p.iter().zip(&t) {
        table[*a][*b] += 1;
    }
    Ok(table)
}

/// Fraction of samples matched under the best one-to-one mapping of
/// predicted clusters onto true classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let table = contingency(pred, truth)?;
    let matched = max_assignment(&table);
    Ok(matched as f64 / pred.len() as f64)
}

/// Maximum-weight matching on a nonnegative count table (Hungarian method).
pub fn max_assignment(table: &[Vec<usize>]) -> usize {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0;
    }
    // The solver wants rows <= cols.
    let (cost, r, c): (Vec<Vec<i64>>, usize, usize) = if rows <= cols {
        (
            table.iter().map(|row| row.iter().map(|&v| -(v as i64)).collect()).collect(),
            rows,
            cols,
        )
    } else {
        (
            (0..cols)
                .map(|j| (0..rows).map(|i| -(table[i][j] as i64)).collect())
                .collect(),
            cols,
            rows,
        )
    };
    let assignment = hungarian(&cost, r, c);
    -assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum::<i64>() as usize
}

/// Minimum-cost assignment of each of `r` rows to a distinct column
/// (`r <= c`), by shortest augmenting paths with potentials.
fn hungarian(cost: &[Vec<i64>], r: usize, c: usize) -> Vec<usize> {
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0i64; r + 1];
    let mut v = vec![0i64; c + 1];
    let mut owner = vec![0usize; c + 1];
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=c {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=c {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; r];
    for j in 1..=c {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(P; T) / sqrt(H(P) H(T))` with natural logarithms. Two single-cluster
/// labelings score 1; a single-cluster labeling against a split one scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let hp = entropy(row_sums.iter().copied(), n);
    let ht = entropy(col_sums.iter().copied(), n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn comb2(v: usize) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index under the permutation model. Returns 1 when the
/// index is undefined (both labelings trivial in the same way).
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len();
    if n < 2 {
        return Ok(1.0);
    }
    let index: f64 = table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_rows: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..table[0].len())
        .map(|j| comb2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_permuted_labels_score_one() {
        let t = [0, 0, 1, 1, 2, 2];
        let p = [2, 2, 0, 0, 1, 1];
        for pred in [&t, &p] {
            assert_eq!(accuracy(pred, &t).unwrap(), 1.0);
            assert!((nmi(pred, &t).unwrap() - 1.0).abs() < 1e-12);
            assert!((ari(pred, &t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_accuracy_case() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn constant_prediction_is_chance_level() {
        let t = [0, 0, 0, 1, 1, 1];
        let p = [4; 6];
        assert_eq!(ari(&p, &t).unwrap(), 0.0);
        assert_eq!(nmi(&p, &t).unwrap(), 0.0);
        assert_eq!(nmi(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn unequal_cluster_counts_are_handled() {
        let t = [0, 0, 1, 1, 2, 2];
        let p = [0, 0, 0, 1, 1, 1];
        let acc = accuracy(&p, &t).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(accuracy(&t, &p).unwrap(), acc);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::InvalidInput(_))));
        assert!(nmi(&[0], &[0, 1]).is_err());
        assert!(ari(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn hungarian_finds_optimum_on_rectangular_table() {
        let table = vec![vec![4, 5, 0], vec![4, 0, 3], vec![0, 1, 0]];
        assert_eq!(max_assignment(&table), 9);
        let wide = vec![vec![5, 1, 0], vec![4, 0, 3]];
        assert_eq!(max_assignment(&wide), 8);
        let tall = vec![vec![5, 4], vec![1, 0], vec![0, 3]];
        assert_eq!(max_assignment(&tall), 8);
    }
}
