//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use pcanet_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-10.0..10.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

/// Householder reduction to tridiagonal form: returns (diagonal, off-diagonal).
fn tridiagonalize(a: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| a[i][k]).collect();
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x.clone();
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>();
        if vn == 0.0 {
            continue;
        }
        // A <- H A H with H = I - 2 v v^T / (v^T v), acting on rows/cols k+1..n
        let m = n - k - 1;
        let idx = |t: usize| k + 1 + t;
        // p = A v
        let p: Vec<f64> = (0..n)
            .map(|i| (0..m).map(|t| a[i][idx(t)] * v[t]).sum::<f64>())
            .collect();
        // apply from the right: A <- A - 2 (A v) v^T / vn
        for i in 0..n {
            for t in 0..m {
                a[i][idx(t)] -= 2.0 * p[i] * v[t] / vn;
            }
        }
        // apply from the left: A <- A - 2 v (v^T A) / vn
        let q: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|t| v[t] * a[idx(t)][j]).sum::<f64>())
            .collect();
        for t in 0..m {
            for j in 0..n {
                a[idx(t)][j] -= 2.0 * v[t] * q[j] / vn;
            }
        }
    }
    let d = (0..n).map(|i| a[i][i]).collect();
    let e = (1..n).map(|i| a[i][i - 1]).collect();
    (d, e)
}

/// Number of eigenvalues of the tridiagonal (d, e) strictly below x
/// (Sturm sequence / LDL^T negative pivot count).
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -f64::EPSILON * (d[i].abs() + x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalues in descending order by bisection on the Sturm count.
pub fn eigenvalues_bisection(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let (d, e) = tridiagonalize(a);
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    lo -= 1.0;
    hi += 1.0;
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            // k-th smallest: smallest x with count_below(x) > k
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if count_below(&d, &e, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect();
    out.reverse();
    out
}

/// Zero-padded window around (r, c), stacked column by column.
pub fn brute_patch(image: &Matrix, r: usize, c: usize, k1: usize, k2: usize) -> Vec<f64> {
    let (m, n) = image.shape();
    let (p1, p2) = ((k1 / 2) as isize, (k2 / 2) as isize);
    let mut v = Vec::with_capacity(k1 * k2);
    for dc in 0..k2 as isize {
        for dr in 0..k1 as isize {
            let rr = r as isize + dr - p1;
            let cc = c as isize + dc - p2;
            let inside = rr >= 0 && cc >= 0 && (rr as usize) < m && (cc as usize) < n;
            v.push(if inside { image[(rr as usize, cc as usize)] } else { 0.0 });
        }
    }
    v
}

/// Direct "same"-size correlation (no kernel flip).
pub fn brute_correlate(image: &Matrix, filter: &Matrix) -> Matrix {
    let (m, n) = image.shape();
    let (k1, k2) = filter.shape();
    let w = filter.to_column_major();
    let mut out = Matrix::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            out[(r, c)] = brute_patch(image, r, c, k1, k2).iter().zip(&w).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Exhaustive 1-NN with cosine distance, first minimum wins.
pub fn brute_nn(train: &[Vec<f64>], labels: &[u32], query: &[f64]) -> u32 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(query);
    let dists: Vec<f64> = train
        .iter()
        .map(|t| {
            let tn = norm(t);
            if qn == 0.0 {
                t.iter().map(|x| x * x).sum::<f64>()
            } else if tn == 0.0 {
                1.0
            } else {
                1.0 - t.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (tn * qn)
            }
        })
        .collect();
    let mut best = 0;
    for i in 1..dists.len() {
        if dists[i] < dists[best] {
            best = i;
        }
    }
    labels[best]
}

/// Top-left block corners by direct enumeration of every position.
pub fn brute_block_positions(m: usize, n: usize, h1: usize, h2: usize, s1: usize, s2: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..m {
        for c in 0..n {
            if r % s1 == 0 && c % s2 == 0 && r + h1 <= m && c + h2 <= n {
                out.push((r, c));
            }
        }
    }
    out
}

pub fn energy(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}
