//! Value-only forward kernels. The tape reuses these for its forward pass;
//! evaluation and gradient-stopped teacher paths call them directly.

use super::Tensor;

/// `a (n x k) * b (k x m)` naive row-major product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), k, "matmul inner dims {} vs {}", k, b.rows());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for p in 0..k {
            let av = a.get2(i, p);
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            let orow = &mut out.data_mut()[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a (n x k) * b^T (m x k)` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    assert_eq!(b.cols(), k, "matmul_nt inner dims {} vs {}", k, b.cols());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..m {
            let brow = b.row(j);
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out.data_mut()[i * m + j] = s;
        }
    }
    out
}

/// `a^T (k x n) * b (k x m)`; used for weight gradients.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), k, "matmul_tn inner dims {} vs {}", k, b.rows());
    let mut out = Tensor::zeros(&[n, m]);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for i in 0..n {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `x (n x d) * w (d x m) + b (m)` broadcast over rows.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(b.shape(), [w.cols()], "bias shape {:?} vs {} outputs", b.shape(), w.cols());
    let mut y = matmul(x, w);
    let m = w.cols();
    for i in 0..y.rows() {
        let row = &mut y.data_mut()[i * m..(i + 1) * m];
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    y
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

/// Row-wise softmax with max subtraction; rows sum to 1 up to rounding.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut y = x.clone();
    for i in 0..n {
        let row = &mut y.data_mut()[i * d..(i + 1) * d];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    y
}

/// Row-wise `x - logsumexp(x)`.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut y = x.clone();
    for i in 0..n {
        let row = &mut y.data_mut()[i * d..(i + 1) * d];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    y
}

/// L2-normalizes each row; norms below `NORM_FLOOR` are clamped.
pub const NORM_FLOOR: f64 = 1e-12;

pub fn l2_normalize_rows(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut y = x.clone();
    for i in 0..n {
        let row = &mut y.data_mut()[i * d..(i + 1) * d];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    y
}

/// Mean over rows of `-sum p ln p`, with `0 ln 0 := 0`.
pub fn entropy_rows(p: &Tensor) -> f64 {
    let (n, d) = (p.rows(), p.cols());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..d {
            let v = p.get2(i, j);
            if v > 0.0 {
                total -= v * v.ln();
            }
        }
    }
    total / n as f64
}

/// Mean over rows of `sum p (ln p - log_q)`, with `0 ln 0 := 0`.
pub fn kl_rows(p: &Tensor, log_q: &Tensor) -> f64 {
    assert_eq!(p.shape(), log_q.shape(), "kl_rows shape mismatch");
    let (n, d) = (p.rows(), p.cols());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..d {
            let v = p.get2(i, j);
            if v > 0.0 {
                total += v * (v.ln() - log_q.get2(i, j));
            }
        }
    }
    total / n as f64
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Checks that every row is a probability distribution: entries nonnegative,
/// sum within `1e-6` of 1. Returns the offending row on failure.
pub fn check_distribution_rows(p: &Tensor) -> Result<(), (usize, f64, f64)> {
    let (n, d) = (p.rows(), p.cols());
    for i in 0..n {
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        for j in 0..d {
            let v = p.get2(i, j);
            sum += v;
            min = min.min(v);
        }
        if min < 0.0 || (sum - 1.0).abs() > 1e-6 {
            return Err((i, sum, min));
        }
    }
    Ok(())
}
