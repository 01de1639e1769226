//! Dense row-major matrices and the scalar types the engine runs on.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// `c ← alpha·a·b + beta·c` over strided views; see [`gemm`].
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                let span = |r: usize, c: usize, rs: isize, cs: isize| {
                    if r == 0 || c == 0 {
                        0
                    } else {
                        ((r - 1) as isize * rs + (c - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: a too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: b too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: c too short");
                // SAFETY: the asserts above keep every strided access in bounds,
                // strides are non-negative and c does not alias a or b.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// `c ← op(a)·op(b) + beta·c`, where `op` optionally transposes.
pub fn gemm<T: Real>(a: &Mat<T>, ta: bool, b: &Mat<T>, tb: bool, beta: T, c: &mut Mat<T>) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1, b.cols as isize)
    } else {
        (b.rows, b.cols, b.cols as isize, 1)
    };
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c.data {
            *v = *v * beta;
        }
        return;
    }
    T::gemm_raw(m, k, n, T::one(), &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut c.data, n as isize, 1);
}

pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(a, false, b, false, T::zero(), &mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                c.data[i * b.cols + j] = (0..a.cols).map(|k| a.at(i, k) * b.at(k, j)).sum();
            }
        }
        c
    }

    fn seq(r: usize, c: usize, s: f64) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|i| ((i as f64 + s) * 0.37).sin()).collect())
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a = seq(7, 5, 0.0);
        let b = seq(5, 3, 1.0);
        let want = naive(&a, &b);
        let got = matmul(&a, &b);
        for (x, y) in got.data.iter().zip(&want.data) {
            assert!((x - y).abs() < 1e-13);
        }
        // aᵀ stored explicitly, then transposed back through strides
        let at = Mat::from_vec(5, 7, (0..35).map(|i| a.at(i % 7, i / 7)).collect());
        let mut c = Mat::zeros(7, 3);
        gemm(&at, true, &b, false, 0.0, &mut c);
        assert_eq!(c, got);
        let bt = Mat::from_vec(3, 5, (0..15).map(|i| b.at(i % 5, i / 5)).collect());
        let mut c2 = Mat::filled(7, 3, 1.0);
        gemm(&a, false, &bt, true, 1.0, &mut c2);
        for (x, y) in c2.data.iter().zip(&want.data) {
            assert!((x - (y + 1.0)).abs() < 1e-13);
        }
    }
}
