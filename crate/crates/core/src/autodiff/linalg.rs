//! Raw dense kernels on row-major slices. No gradient tracking.

use crate::error::{Error, Result};

/// Condition-number ceiling (1-norm estimate) accepted by [`invert`].
pub const CONDITION_LIMIT: f64 = 1e12;

/// `out[n×m] = a[n×k] · b[k×m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[n×k] = g[n×m] · b[k×m]ᵀ`
pub fn matmul_nt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k×m] = a[n×k]ᵀ · g[n×m]`
pub fn matmul_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Maximum absolute column sum.
pub fn norm1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan inverse with partial pivoting. Fails when the 1-norm
/// condition estimate exceeds [`CONDITION_LIMIT`].
pub fn invert(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut work = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| work[x * n + col].abs().total_cmp(&work[y * n + col].abs()))
            .expect("non-empty range");
        let pv = work[pivot * n + col];
        if pv == 0.0 || !pv.is_finite() {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        if pivot != col {
            for j in 0..n {
                work.swap(pivot * n + j, col * n + j);
                inv.swap(pivot * n + j, col * n + j);
            }
        }
        let scale = 1.0 / pv;
        for j in 0..n {
            work[col * n + j] *= scale;
            inv[col * n + j] *= scale;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work[r * n + j] -= f * work[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    let condition = norm1(a, n) * norm1(&inv, n);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::Singular { condition });
    }
    Ok(inv)
}
