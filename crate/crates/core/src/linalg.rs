//! Thin safe wrapper over `matrixmultiply`'s strided dgemm plus the three
//! products a dense layer needs.

/// Strided view of a row-major or transposed matrix.
#[derive(Clone, Copy, Debug)]
pub struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides { row: cols, col: 1 }
    }

    pub const fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols }
    }
}

fn span(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.row + (cols - 1) * s.col + 1
    }
}

/// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    assert!(a.len() >= span(m, k, sa), "gemm: a too short");
    assert!(b.len() >= span(k, n, sb), "gemm: b too short");
    assert!(c.len() >= span(m, n, sc), "gemm: c too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}

/// `out (rows x out_dim) = x (rows x in_dim) * w^T`, `w` stored `out_dim x in_dim`.
pub fn matmul_wt(x: &[f64], w: &[f64], rows: usize, in_dim: usize, out_dim: usize, out: &mut [f64]) {
    gemm(
        rows,
        in_dim,
        out_dim,
        1.0,
        x,
        Strides::row_major(in_dim),
        w,
        Strides::transposed(in_dim),
        0.0,
        out,
        Strides::row_major(out_dim),
    );
}

/// `grad_w (out_dim x in_dim) += dz^T * x`.
pub fn accumulate_outer(
    dz: &[f64],
    x: &[f64],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    grad_w: &mut [f64],
) {
    gemm(
        out_dim,
        rows,
        in_dim,
        1.0,
        dz,
        Strides::transposed(out_dim),
        x,
        Strides::row_major(in_dim),
        1.0,
        grad_w,
        Strides::row_major(in_dim),
    );
}

/// `dx (rows x in_dim) = dz (rows x out_dim) * w`.
pub fn matmul_w(dz: &[f64], w: &[f64], rows: usize, in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    gemm(
        rows,
        out_dim,
        in_dim,
        1.0,
        dz,
        Strides::row_major(out_dim),
        w,
        Strides::row_major(in_dim),
        0.0,
        dx,
        Strides::row_major(in_dim),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn layer_products_match_naive_loops() {
        let (rows, in_dim, out_dim) = (7, 5, 3);
        let x: Vec<f64> = (0..rows * in_dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..out_dim * in_dim).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut wt = vec![0.0; in_dim * out_dim];
        for o in 0..out_dim {
            for i in 0..in_dim {
                wt[i * out_dim + o] = w[o * in_dim + i];
            }
        }
        let mut out = vec![0.0; rows * out_dim];
        matmul_wt(&x, &w, rows, in_dim, out_dim, &mut out);
        for (a, b) in out.iter().zip(naive(&x, &wt, rows, in_dim, out_dim)) {
            assert!((a - b).abs() < 1e-12);
        }

        let dz = out.clone();
        let mut dx = vec![0.0; rows * in_dim];
        matmul_w(&dz, &w, rows, in_dim, out_dim, &mut dx);
        for (a, b) in dx.iter().zip(naive(&dz, &w, rows, out_dim, in_dim)) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut gw = vec![1.0; out_dim * in_dim];
        accumulate_outer(&dz, &x, rows, in_dim, out_dim, &mut gw);
        let mut dzt = vec![0.0; out_dim * rows];
        for r in 0..rows {
            for o in 0..out_dim {
                dzt[o * rows + r] = dz[r * out_dim + o];
            }
        }
        for (a, b) in gw.iter().zip(naive(&dzt, &x, out_dim, rows, in_dim)) {
            assert!((a - (b + 1.0)).abs() < 1e-12);
        }
    }
}
