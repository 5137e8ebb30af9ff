//! Independent reference implementations used as test oracles.

#![allow(dead_code, clippy::needless_range_loop)]

/// Centroid refresh written directly from the definitions: Gaussian-kernel
/// shift, nearest-centroid assignment, cluster means with a fallback to the
/// shifted centroid, then sorting.
pub fn e_step_oracle(mu: &[f64], h: f64, te: &[f64]) -> Vec<f64> {
    let mut shifted = Vec::with_capacity(mu.len());
    for &m in mu {
        let exps: Vec<f64> = te.iter().map(|&x| -0.5 * ((x - m) / h) * ((x - m) / h)).collect();
        let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = exps.iter().map(|e| (e - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        let mut diff = 0.0;
        for i in 0..te.len() {
            diff += raw[i] / total * (te[i] - m);
        }
        shifted.push(m + diff);
    }
    let mut sums = vec![0.0; mu.len()];
    let mut counts = vec![0usize; mu.len()];
    for &x in te {
        let mut best = 0;
        for k in 1..shifted.len() {
            if (x - shifted[k]).abs() < (x - shifted[best]).abs() {
                best = k;
            }
        }
        sums[best] += x;
        counts[best] += 1;
    }
    let mut out: Vec<f64> = (0..mu.len())
        .map(|k| {
            if counts[k] > 0 {
                sums[k] / counts[k] as f64
            } else {
                shifted[k]
            }
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// One Lloyd iteration of plain 1-D k-means.
pub fn lloyd_step(mu: &[f64], te: &[f64]) -> Vec<f64> {
    e_step_oracle_without_shift(mu, te)
}

fn e_step_oracle_without_shift(mu: &[f64], te: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; mu.len()];
    let mut counts = vec![0usize; mu.len()];
    for &x in te {
        let best = (0..mu.len())
            .min_by(|&a, &b| (x - mu[a]).abs().partial_cmp(&(x - mu[b]).abs()).unwrap())
            .unwrap();
        sums[best] += x;
        counts[best] += 1;
    }
    let mut out: Vec<f64> = (0..mu.len())
        .map(|k| {
            if counts[k] > 0 {
                sums[k] / counts[k] as f64
            } else {
                mu[k]
            }
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Plain k-means run to its fixed point.
pub fn lloyd(mu: &[f64], te: &[f64]) -> Vec<f64> {
    let mut cur = mu.to_vec();
    for _ in 0..1000 {
        let next = lloyd_step(&cur, te);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Solves `A w = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut w = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * w[c]).sum();
        w[row] = (b[row] - s) / a[row][row];
    }
    w
}

/// Ridge with unpenalized intercept via the augmented normal equations.
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let p = x[0].len();
    let dim = p + 1;
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for (row, &yi) in x.iter().zip(y) {
        let mut aug = row.clone();
        aug.push(1.0);
        for i in 0..dim {
            b[i] += aug[i] * yi;
            for j in 0..dim {
                a[i][j] += aug[i] * aug[j];
            }
        }
    }
    for j in 0..p {
        a[j][j] += lambda;
    }
    let w = solve_dense(a, b);
    (w[..p].to_vec(), w[p])
}
