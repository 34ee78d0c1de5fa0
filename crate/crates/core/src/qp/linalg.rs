//! Small dense linear-algebra kernels for the QP solver.
//!
//! Everything here works on row-major `Vec<Vec<f64>>` matrices of dimension
//! at most a handful; clarity beats blocking.

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `1e-14` times the largest entry
/// of its column, i.e. the matrix is numerically singular.
pub(crate) fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if n == 0 {
        return Some(Vec::new());
    }
    if scale == 0.0 {
        return None;
    }
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|r| (r, a[r][k].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pval <= 1e-14 * scale {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for r in (k + 1)..n {
            let f = a[r][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

/// Least-squares solution of the overdetermined `a x ≈ b` (`a` is `m × w`,
/// `m >= w`) by Householder QR. Returns `None` if `a` is numerically rank
/// deficient.
pub(crate) fn least_squares(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    let w = a.first().map_or(0, |r| r.len());
    if w == 0 {
        return Some(Vec::new());
    }
    if m < w {
        return None;
    }
    let col_norms: Vec<f64> = (0..w)
        .map(|k| (0..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt())
        .collect();
    for k in 0..w {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm <= 1e-13 * col_norms[k] || norm == 0.0 {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in k..w {
            let d: f64 = (k..m).map(|i| v[i - k] * a[i][c]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..m {
                a[i][c] -= d * v[i - k];
            }
        }
        let d: f64 = (k..m).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in k..m {
            b[i] -= d * v[i - k];
        }
    }
    let mut x = vec![0.0; w];
    for k in (0..w).rev() {
        let s: f64 = ((k + 1)..w).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

/// Cholesky solve of a symmetric positive definite system.
pub(crate) fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    Some(x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
