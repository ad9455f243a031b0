//! Small dense kernels used by the QP solver.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`; only the lower triangle
    /// is read and the factor overwrites it. Fails on a non-positive pivot.
    pub fn cholesky_in_place(&mut self) -> Result<(), usize> {
        let n = self.n;
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                let l = self.get(j, k);
                d -= l * l;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(j);
            }
            let d = d.sqrt();
            self.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                self.set(i, j, s / d);
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place using a factor from [`Self::cholesky_in_place`].
    pub fn cholesky_solve(&self, b: &mut [T]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            let ri = i * n;
            for k in 0..i {
                s -= self.data[ri + k] * b[k];
            }
            b[i] = s / self.data[ri + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.data[k * n + i] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
    }

    /// In-place LU factorisation with partial pivoting, `P A = L U`, with the
    /// unit lower factor stored below the diagonal. Returns the row taken as
    /// pivot at each step, or the first column without a usable pivot.
    pub fn lu_in_place(&mut self) -> Result<Vec<usize>, usize> {
        let n = self.n;
        let mut piv = Vec::with_capacity(n);
        for j in 0..n {
            let p = (j..n)
                .max_by(|a, b| self.get(*a, j).abs().partial_cmp(&self.get(*b, j).abs()).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(j);
            let d = self.get(p, j);
            if d == T::zero() || !d.is_finite() {
                return Err(j);
            }
            if p != j {
                for k in 0..n {
                    self.data.swap(j * n + k, p * n + k);
                }
            }
            piv.push(p);
            for i in (j + 1)..n {
                let l = self.get(i, j) / d;
                self.set(i, j, l);
                if l != T::zero() {
                    for k in (j + 1)..n {
                        let v = self.get(j, k);
                        self.add(i, k, -l * v);
                    }
                }
            }
        }
        Ok(piv)
    }

    /// Solves `A x = b` in place using a factor from [`Self::lu_in_place`].
    pub fn lu_solve(&self, piv: &[usize], b: &mut [T]) {
        let n = self.n;
        for (j, p) in piv.iter().enumerate() {
            b.swap(j, *p);
        }
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
    }

    /// `A x`
    pub fn mul(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).fold(T::zero(), |s, k| s + self.get(i, k) * x[k]))
            .collect()
    }
}

#[inline]
pub fn norm_inf<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let mut a = SquareMatrix::<f64>::zeros(3);
        let rows = [[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                a.set(i, j, *v);
            }
        }
        let x_true = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&x_true).map(|(a, x)| a * x).sum())
            .collect();
        a.cholesky_in_place().unwrap();
        a.cholesky_solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SquareMatrix::<f64>::zeros(2);
        a.set(0, 0, 1.0);
        a.set(1, 0, 2.0);
        a.set(0, 1, 2.0);
        a.set(1, 1, 1.0);
        assert_eq!(a.cholesky_in_place(), Err(1));
    }

    #[test]
    fn lu_solves_an_indefinite_system_that_needs_pivoting() {
        let rows = [[0.0, 2.0, 1.0], [2.0, 0.0, -1.0], [1.0, -1.0, 0.0]];
        let mut a = SquareMatrix::<f64>::zeros(3);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                a.set(i, j, *v);
            }
        }
        let x_true = [0.5, 3.0, -1.0];
        let mut b = a.mul(&x_true);
        let piv = a.lu_in_place().unwrap();
        a.lu_solve(&piv, &mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn lu_reports_a_singular_column() {
        let mut a = SquareMatrix::<f64>::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert_eq!(a.lu_in_place(), Err(1));
    }
}
