//! Row-major dense kernels used by the forward and backward passes.

use serde::{Deserialize, Serialize};

use super::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// `out[i] += Σ_j w[i, j] x[j]`
#[inline]
pub fn gemv_acc<F: Real>(out: &mut [F], w: &Matrix<F>, x: &[F]) {
    debug_assert_eq!(w.rows, out.len());
    debug_assert_eq!(w.cols, x.len());
    for (i, o) in out.iter_mut().enumerate() {
        *o = *o + dot(w.row(i), x);
    }
}

/// `out[j] += Σ_i w[i, j] dy[i]`
#[inline]
pub fn gemv_t_acc<F: Real>(out: &mut [F], w: &Matrix<F>, dy: &[F]) {
    debug_assert_eq!(w.rows, dy.len());
    debug_assert_eq!(w.cols, out.len());
    for (i, d) in dy.iter().enumerate() {
        if *d == F::zero() {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o = *o + *wij * *d;
        }
    }
}

/// `g[i, j] += dy[i] x[j]`
#[inline]
pub fn outer_acc<F: Real>(g: &mut Matrix<F>, dy: &[F], x: &[F]) {
    debug_assert_eq!(g.rows, dy.len());
    debug_assert_eq!(g.cols, x.len());
    for (i, d) in dy.iter().enumerate() {
        if *d == F::zero() {
            continue;
        }
        for (gij, xj) in g.row_mut(i).iter_mut().zip(x) {
            *gij = *gij + *d * *xj;
        }
    }
}

#[inline]
pub fn add_assign<F: Real>(acc: &mut [F], x: &[F]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a = *a + *b;
    }
}
