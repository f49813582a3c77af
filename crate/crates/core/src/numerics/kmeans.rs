use super::{Matrix, Rng};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 300;

/// Result of the best k-means restart.
#[derive(Clone, Debug)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares of `labels`.
    pub wcss: f64,
}

/// Lloyd's k-means with k-means++ seeding, keeping the restart with the
/// smallest within-cluster sum of squares (earliest wins ties).
pub fn kmeans(rows: &Matrix, k: usize, rng: &mut Rng, restarts: usize) -> Result<KMeans> {
    let n = rows.rows();
    if k == 0 {
        return Err(Error::InvalidInput("k-means needs k >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "k-means with k = {k} exceeds the {n} available points"
        )));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let labels = lloyd(rows, k, rng);
        let wcss = wcss(rows, &labels, k);
        if best.as_ref().is_none_or(|b| wcss < b.wcss) {
            best = Some(KMeans { labels, wcss });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(rows: &Matrix, labels: &[usize], k: usize) -> f64 {
    let centroids = centroids(rows, labels, k);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(rows.row(i), centroids.row(l)))
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroids(rows: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let d = rows.cols();
    let mut c = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (acc, v) in c.row_mut(l).iter_mut().zip(rows.row(i)) {
            *acc += v;
        }
    }
    for (l, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let inv = 1.0 / cnt as f64;
            c.row_mut(l).iter_mut().for_each(|v| *v *= inv);
        }
    }
    c
}

fn seed_plus_plus(rows: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = rows.rows();
    let d = rows.cols();
    let mut centers = Matrix::zeros(k, d);
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(rows.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.unit() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.row_mut(c).copy_from_slice(rows.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(rows.row(i), centers.row(c)));
        }
    }
    centers
}

fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let dd = sq_dist(point, centers.row(c));
        if dd < best.1 {
            best = (c, dd);
        }
    }
    best
}

fn lloyd(rows: &Matrix, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = rows.rows();
    let mut centers = seed_plus_plus(rows, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(rows.row(i), &centers);
            dists[i] = dd;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        // Re-seed empty clusters with the point farthest from its center.
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("k <= n leaves a donor cluster");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                dists[far] = 0.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        centers = centroids(rows, &labels, k);
    }
    labels
}
