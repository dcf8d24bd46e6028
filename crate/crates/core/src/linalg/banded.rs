//! Complex banded matrices with an LU factorization (partial pivoting).

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<Complex64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![ZERO; n * (kl + ku + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[i * (self.kl + self.ku + 1) + j + self.kl - i]
        } else {
            ZERO
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside the band");
        let w = self.kl + self.ku + 1;
        self.data[i * w + j + self.kl - i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: Complex64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    /// `self - shift * I`.
    pub fn shifted(&self, shift: Complex64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.add_to(i, i, -shift);
        }
        out
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> faer::Mat<Complex64> {
        faer::Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn lu(&self) -> BandedLu {
        BandedLu::new(self)
    }
}

/// LU factors of a banded matrix. The upper band grows to `kl + ku` through
/// pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<Complex64>,
    pivots: Vec<usize>,
    log_det: Complex64,
    singular: bool,
}

impl BandedLu {
    fn new(a: &Banded) -> Self {
        let n = a.n;
        let kl = a.kl;
        let ku2 = a.kl + a.ku;
        let width = kl + ku2 + 1;
        let mut data = vec![ZERO; n * width];
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + a.ku).min(n.saturating_sub(1));
            for j in lo..=hi {
                data[i * width + j + kl - i] = a.get(i, j);
            }
        }
        let idx = |i: usize, j: usize| i * width + j + kl - i;
        let mut pivots = vec![0; n];
        let mut log_det = ZERO;
        let mut swaps = 0usize;
        let mut singular = false;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = data[idx(k, k)].norm();
            for r in k + 1..=last {
                let v = data[idx(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            pivots[k] = p;
            let col_hi = (k + ku2).min(n - 1);
            if p != k {
                swaps += 1;
                for j in k..=col_hi {
                    data.swap(idx(k, j), idx(p, j));
                }
            }
            let d = data[idx(k, k)];
            if d == ZERO {
                singular = true;
                continue;
            }
            log_det += d.ln();
            let dinv = d.inv();
            for r in k + 1..=last {
                let f = data[idx(r, k)] * dinv;
                data[idx(r, k)] = f;
                if f == ZERO {
                    continue;
                }
                for j in k + 1..=col_hi {
                    let u = data[idx(k, j)];
                    data[idx(r, j)] -= f * u;
                }
            }
        }
        if swaps % 2 == 1 {
            log_det += Complex64::new(0.0, std::f64::consts::PI);
        }
        Self { n, kl, width, data, pivots, log_det, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Logarithm of the determinant (imaginary part on an arbitrary branch).
    pub fn log_det(&self) -> Complex64 {
        self.log_det
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        let kl = self.kl;
        let w = self.width;
        let idx = |i: usize, j: usize| i * w + j + kl - i;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == ZERO {
                continue;
            }
            for r in k + 1..=(k + kl).min(n - 1) {
                b[r] -= self.data[idx(r, k)] * bk;
            }
        }
        let ku2 = w - kl - 1;
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + ku2).min(n - 1) {
                s -= self.data[idx(k, j)] * b[j];
            }
            b[k] = s / self.data[idx(k, k)];
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
