//! Dense Cholesky routines for the small covariance matrices used by the
//! Mahalanobis metric.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!(
                "cholesky of non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag = diag - l[[j, k]] * l[[j, k]];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s = s - l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// `vᵀ A⁻¹ v` by forward substitution.
    pub fn inv_quad_form(&self, v: ArrayView1<'_, T>) -> T {
        match v.as_slice() {
            Some(s) => self.inv_quad_form_slice(s),
            None => self.inv_quad_form_slice(&v.to_vec()),
        }
    }

    pub fn inv_quad_form_slice(&self, v: &[T]) -> T {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let mut stack = [T::zero(); 8];
        let mut heap;
        let y: &mut [T] = if n <= stack.len() {
            &mut stack[..n]
        } else {
            heap = vec![T::zero(); n];
            &mut heap
        };
        let l = self.lower.as_slice().expect("owned standard layout");
        let mut acc = T::zero();
        for i in 0..n {
            let row = &l[i * n..i * n + i + 1];
            let mut s = v[i];
            for k in 0..i {
                s = s - row[k] * y[k];
            }
            let yi = s / row[i];
            y[i] = yi;
            acc = acc + yi * yi;
        }
        acc
    }

    pub fn ln_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| two * self.lower[[i, i]].ln()).sum()
    }

    /// `det(A)^(1/n)`, computed in log space.
    pub fn det_root(&self) -> T {
        (self.ln_det() / T::from_count(self.dim())).exp()
    }
}

pub(crate) fn trace<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    a.diag().iter().copied().sum()
}
