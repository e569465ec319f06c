//! Row-independent dense kernels. Inner loops are axpy updates over
//! contiguous rows so they vectorize without reordering any sum.

use super::{Mat, Real};

/// `out += x · w` for `x: n×k`, `w: k×m`, `out: n×m`.
pub fn matmul_acc<T: Real>(x: &Mat<T>, w: &Mat<T>, out: &mut Mat<T>) {
    assert_eq!(x.cols, w.rows, "matmul inner dimension");
    assert_eq!((out.rows, out.cols), (x.rows, w.cols), "matmul output shape");
    let m = w.cols;
    for i in 0..x.rows {
        let o = &mut out.data[i * m..(i + 1) * m];
        for (p, &a) in x.row(i).iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            let wr = &w.data[p * m..(p + 1) * m];
            for (o, &w) in o.iter_mut().zip(wr) {
                *o += a * w;
            }
        }
    }
}

pub fn matmul<T: Real>(x: &Mat<T>, w: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(x.rows, w.cols);
    matmul_acc(x, w, &mut out);
    out
}

/// `x · w + b` with `b` broadcast over rows.
pub fn affine<T: Real>(x: &Mat<T>, w: &Mat<T>, b: &[T]) -> Mat<T> {
    assert_eq!(b.len(), w.cols, "bias width");
    let mut out = Mat::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(b);
    }
    matmul_acc(x, w, &mut out);
    out
}

/// `gw += xᵀ · dy`.
pub fn matmul_tn_acc<T: Real>(x: &Mat<T>, dy: &Mat<T>, gw: &mut Mat<T>) {
    assert_eq!(x.rows, dy.rows, "matmul_tn rows");
    assert_eq!((gw.rows, gw.cols), (x.cols, dy.cols), "matmul_tn output shape");
    let m = dy.cols;
    for i in 0..x.rows {
        let d = dy.row(i);
        for (p, &a) in x.row(i).iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            let g = &mut gw.data[p * m..(p + 1) * m];
            for (g, &d) in g.iter_mut().zip(d) {
                *g += a * d;
            }
        }
    }
}

/// Column sums accumulated into `out`.
pub fn col_sum_acc<T: Real>(x: &Mat<T>, out: &mut [T]) {
    for r in 0..x.rows {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
}
