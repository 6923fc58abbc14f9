//! Dense matrix kernels shared by the linear and convolution ops.
//!
//! Rows are processed in small blocks so each row of the right-hand matrix
//! is reused from cache across the block.

const ROW_BLOCK: usize = 8;

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[n×m] += a[n×k] · b[k×m]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    for r0 in (0..n).step_by(ROW_BLOCK) {
        let r1 = (r0 + ROW_BLOCK).min(n);
        for i in 0..k {
            let b_row = &b[i * m..(i + 1) * m];
            for r in r0..r1 {
                let s = a[r * k + i];
                if s != 0.0 {
                    axpy(&mut c[r * m..(r + 1) * m], s, b_row);
                }
            }
        }
    }
}

/// `c[n×k] += a[n×m] · bᵀ` where `b` is `k×m`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * k);
    for r0 in (0..n).step_by(ROW_BLOCK) {
        let r1 = (r0 + ROW_BLOCK).min(n);
        for i in 0..k {
            let b_row = &b[i * m..(i + 1) * m];
            for r in r0..r1 {
                c[r * k + i] += dot(&a[r * m..(r + 1) * m], b_row);
            }
        }
    }
}

/// `c[k×m] += aᵀ · d` where `a` is `n×k` and `d` is `n×m`.
pub(crate) fn matmul_at_acc(a: &[f64], d: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(d.len(), n * m);
    debug_assert_eq!(c.len(), k * m);
    for r0 in (0..n).step_by(ROW_BLOCK) {
        let r1 = (r0 + ROW_BLOCK).min(n);
        for i in 0..k {
            let c_row = &mut c[i * m..(i + 1) * m];
            for r in r0..r1 {
                let s = a[r * k + i];
                if s != 0.0 {
                    axpy(c_row, s, &d[r * m..(r + 1) * m]);
                }
            }
        }
    }
}
