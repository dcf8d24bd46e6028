//! Tiny row-major complex matrices for the blocks of banded recursions.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct SmallMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl SmallMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(mut self, s: Complex64) -> Self {
        self.data.iter_mut().for_each(|x| *x *= s);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Inverse and log-determinant via LU with partial pivoting. Returns
    /// `None` for an exactly singular matrix.
    pub fn inverse_and_log_det(&self) -> Option<(SmallMat, Complex64)> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = SmallMat::identity(n).data;
        let mut log_det = Complex64::new(0.0, 0.0);
        let mut sign_flips = 0usize;
        for col in 0..n {
            let (piv, pmax) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                return None;
            }
            if piv != col {
                sign_flips += 1;
                for c in 0..n {
                    a.swap(piv * n + c, col * n + c);
                    inv.swap(piv * n + c, col * n + c);
                }
            }
            let d = a[col * n + col];
            log_det += d.ln();
            let dinv = d.inv();
            for c in 0..n {
                a[col * n + c] *= dinv;
                inv[col * n + c] *= dinv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    let ac = a[col * n + c];
                    let ic = inv[col * n + c];
                    a[r * n + c] -= f * ac;
                    inv[r * n + c] -= f * ic;
                }
            }
        }
        if sign_flips % 2 == 1 {
            log_det += Complex64::new(0.0, std::f64::consts::PI);
        }
        Some((SmallMat { rows: n, cols: n, data: inv }, log_det))
    }
}

impl std::ops::Index<(usize, usize)> for SmallMat {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SmallMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &SmallMat {
    type Output = SmallMat;
    fn mul(self, rhs: &SmallMat) -> SmallMat {
        assert_eq!(self.cols, rhs.rows);
        let mut out = SmallMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &SmallMat {
    type Output = SmallMat;
    fn add(self, rhs: &SmallMat) -> SmallMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        SmallMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SmallMat {
    type Output = SmallMat;
    fn sub(self, rhs: &SmallMat) -> SmallMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        SmallMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = SmallMat {
            rows: 3,
            cols: 3,
            data: vec![c(0.0, 1.0), c(2.0, 0.0), c(1.0, 1.0), c(1.0, 0.0), c(0.0, 0.0), c(3.0, -1.0), c(2.0, 2.0), c(1.0, 0.0), c(0.5, 0.0)],
        };
        let (inv, log_det) = m.inverse_and_log_det().unwrap();
        let prod = &m * &inv;
        let id = SmallMat::identity(3);
        for (a, b) in prod.data.iter().zip(&id.data) {
            assert!((a - b).norm() < 1e-13);
        }
        // direct cofactor expansion
        let d = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
        assert!((log_det.exp() - d).norm() < 1e-12 * d.norm());
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = SmallMat::zeros(2, 2);
        assert!(m.inverse_and_log_det().is_none());
    }
}
