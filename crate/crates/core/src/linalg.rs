//! Dense symmetric positive-definite factorization and triangular solves.

use crate::scalar::{axpy, dot, Scalar};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Failed pivot during factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
    pub pivot: f64,
}

/// Lower-triangular factor `L` with `A = L Lᵀ`, row-major, upper part zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    l: SquareMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorize `a + shift·I`. Only the lower triangle of `a` is read.
    pub fn factorize(a: &SquareMatrix<T>, shift: T) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let mut l = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let (li, lj) = if i == j {
                    let row = &l.data[i * n..i * n + j];
                    (row, row)
                } else {
                    let (head, tail) = l.data.split_at(i * n);
                    (&tail[..j], &head[j * n..j * n + j])
                };
                let mut s = a.get(i, j) - dot(li, lj);
                if i == j {
                    s += shift;
                    if !(s > T::zero()) {
                        return Err(NotPositiveDefinite {
                            index: i,
                            pivot: s.f64(),
                        });
                    }
                    l.data[i * n + i] = s.sqrt();
                } else {
                    s /= l.data[j * n + j];
                    l.data[i * n + j] = s;
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.n
    }

    pub fn factor(&self) -> &SquareMatrix<T> {
        &self.l
    }

    /// Solve `L x = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.l.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l.data[i * n..i * n + i];
            x[i] = (x[i] - dot(row, &x[..i])) / self.l.data[i * n + i];
        }
        x
    }

    /// Solve `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        let n = self.l.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l.data[i * n + i];
            let xi = x[i];
            let row = &self.l.data[i * n..i * n + i];
            axpy(-xi, row, &mut x[..i]);
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det A`.
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.l.n).map(|i| self.l.get(i, i).ln()).sum::<T>() * two
    }

    /// Ratio of the largest to the smallest diagonal entry of `L`, squared.
    /// A cheap lower bound on the condition number of `A`.
    pub fn condition_estimate(&self) -> f64 {
        let diag = (0..self.l.n).map(|i| self.l.get(i, i).f64());
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }
}
