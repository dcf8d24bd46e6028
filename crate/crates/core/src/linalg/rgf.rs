//! Recursive Green's function sweep for block-tridiagonal matrices.
//!
//! For `X(z) = X0 - z I` this returns `ln det X`, the diagonal of `X^{-1}`
//! and, on request, the diagonal of `d/dz X^{-1} = X^{-2}`, all in
//! `O(n p^2)` for block size `p`. Left- and right-connected sweeps are run
//! independently and joined block by block; the derivative is carried along
//! both in forward mode.

use num_complex::Complex64;

use super::banded::Banded;
use super::small::SmallMat;

#[derive(Clone, Debug)]
pub struct BlockTridiagonal {
    sizes: Vec<usize>,
    diag: Vec<SmallMat>,
    upper: Vec<SmallMat>,
    lower: Vec<SmallMat>,
}

#[derive(Clone, Debug)]
pub struct GreenDiagonal {
    /// `ln det X` on an arbitrary branch of the imaginary part.
    pub log_det: Complex64,
    /// `(X^{-1})_{ii}`.
    pub diag: Vec<Complex64>,
    /// `(X^{-2})_{ii}` when requested.
    pub diag_derivative: Option<Vec<Complex64>>,
}

impl GreenDiagonal {
    pub fn trace(&self) -> Complex64 {
        self.diag.iter().sum()
    }

    pub fn weighted_trace(&self, weights: &[Complex64]) -> Complex64 {
        self.diag.iter().zip(weights).map(|(g, w)| g * w).sum()
    }

    pub fn weighted_trace_derivative(&self, weights: &[Complex64]) -> Option<Complex64> {
        self.diag_derivative
            .as_ref()
            .map(|d| d.iter().zip(weights).map(|(g, w)| g * w).sum())
    }
}

impl BlockTridiagonal {
    /// Re-blocks a banded matrix. `block` must be at least the bandwidth.
    pub fn from_banded(a: &Banded, block: usize) -> Self {
        assert!(block >= a.lower().max(a.upper()).max(1));
        let n = a.n();
        let mut sizes = Vec::new();
        let mut start = 0;
        while start < n {
            sizes.push(block.min(n - start));
            start += block;
        }
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let extract = |bi: usize, bj: usize| {
            let mut m = SmallMat::zeros(sizes[bi], sizes[bj]);
            for r in 0..sizes[bi] {
                for c in 0..sizes[bj] {
                    m[(r, c)] = a.get(offsets[bi] + r, offsets[bj] + c);
                }
            }
            m
        };
        let nb = sizes.len();
        let diag = (0..nb).map(|k| extract(k, k)).collect();
        let upper = (0..nb.saturating_sub(1)).map(|k| extract(k, k + 1)).collect();
        let lower = (0..nb.saturating_sub(1)).map(|k| extract(k + 1, k)).collect();
        Self { sizes, diag, upper, lower }
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Forward recursion only: `ln det(X0 - z)`, its `z`-derivative
    /// `-tr (X0 - z)^{-1}` and the largest entry of the left-connected
    /// blocks, a cheap conditioning indicator.
    pub fn log_det(&self, z: Complex64, with_derivative: bool) -> Option<(Complex64, Complex64, f64)> {
        let nb = self.sizes.len();
        let mut g_prev: Option<SmallMat> = None;
        let mut dg_prev: Option<SmallMat> = None;
        let mut log_det = Complex64::new(0.0, 0.0);
        let mut dlog = Complex64::new(0.0, 0.0);
        let mut max_entry: f64 = 0.0;
        for k in 0..nb {
            let p = self.sizes[k];
            let shift = SmallMat::identity(p).scale(z);
            let mut s = &self.diag[k] - &shift;
            if let Some(gp) = &g_prev {
                s = &s - &(&(&self.lower[k - 1] * gp) * &self.upper[k - 1]);
            }
            let (gk, ld) = s.inverse_and_log_det()?;
            log_det += ld;
            max_entry = gk.data.iter().map(|v| v.norm()).fold(max_entry, f64::max);
            if with_derivative {
                let mut inner = SmallMat::identity(p);
                if let Some(dp) = &dg_prev {
                    inner = &inner + &(&(&self.lower[k - 1] * dp) * &self.upper[k - 1]);
                }
                let gi = &gk * &inner;
                dlog -= gi.trace();
                dg_prev = Some(&gi * &gk);
            }
            g_prev = Some(gk);
        }
        Some((log_det, dlog, max_entry))
    }

    /// Left-connected blocks `g_k` (and `dg_k/dz`) of `X0 - z`, from the
    /// first block (`reverse = false`) or the last one.
    fn connected(&self, z: Complex64, with_derivative: bool, reverse: bool) -> Option<Connected> {
        let nb = self.sizes.len();
        let mut g: Vec<SmallMat> = vec![SmallMat::zeros(0, 0); nb];
        let mut dg: Vec<SmallMat> = vec![SmallMat::zeros(0, 0); nb];
        let mut log_det = Complex64::new(0.0, 0.0);
        let order: Vec<usize> = if reverse { (0..nb).rev().collect() } else { (0..nb).collect() };
        let mut prev: Option<usize> = None;
        for k in order {
            let p = self.sizes[k];
            let mut s = &self.diag[k] - &SmallMat::identity(p).scale(z);
            // coupling to the already eliminated neighbour
            let (into, out) = match prev {
                Some(j) if j < k => (Some(&self.lower[j]), Some(&self.upper[j])),
                Some(_) => (Some(&self.upper[k]), Some(&self.lower[k])),
                None => (None, None),
            };
            if let (Some(a), Some(b), Some(j)) = (into, out, prev) {
                s = &s - &(&(a * &g[j]) * b);
            }
            let (gk, ld) = s.inverse_and_log_det()?;
            log_det += ld;
            if with_derivative {
                let mut inner = SmallMat::identity(p);
                if let (Some(a), Some(b), Some(j)) = (into, out, prev) {
                    inner = &inner + &(&(a * &dg[j]) * b);
                }
                dg[k] = &(&gk * &inner) * &gk;
            }
            g[k] = gk;
            prev = Some(k);
        }
        Some(Connected { g, dg, log_det })
    }

    /// Diagonal of `(X0 - z)^{-1}` (and of its square) from left- and
    /// right-connected blocks. Each diagonal block only sees its two
    /// neighbours, so a nearly singular partial elimination spoils a single
    /// block instead of everything behind it.
    pub fn sweep(&self, z: Complex64, with_derivative: bool) -> Option<GreenDiagonal> {
        let nb = self.sizes.len();
        let left = self.connected(z, with_derivative, false)?;
        let right = self.connected(z, with_derivative, true)?;
        let mut diag = Vec::with_capacity(self.dim());
        let mut ddiag = Vec::with_capacity(if with_derivative { self.dim() } else { 0 });
        for k in 0..nb {
            let p = self.sizes[k];
            let mut s = &self.diag[k] - &SmallMat::identity(p).scale(z);
            let mut inner = SmallMat::identity(p);
            if k > 0 {
                s = &s - &(&(&self.lower[k - 1] * &left.g[k - 1]) * &self.upper[k - 1]);
                if with_derivative {
                    inner = &inner + &(&(&self.lower[k - 1] * &left.dg[k - 1]) * &self.upper[k - 1]);
                }
            }
            if k + 1 < nb {
                s = &s - &(&(&self.upper[k] * &right.g[k + 1]) * &self.lower[k]);
                if with_derivative {
                    inner = &inner + &(&(&self.upper[k] * &right.dg[k + 1]) * &self.lower[k]);
                }
            }
            let (gk, _) = s.inverse_and_log_det()?;
            diag.extend((0..p).map(|i| gk[(i, i)]));
            if with_derivative {
                let d = &(&gk * &inner) * &gk;
                ddiag.extend((0..p).map(|i| d[(i, i)]));
            }
        }
        Some(GreenDiagonal { log_det: left.log_det, diag, diag_derivative: with_derivative.then_some(ddiag) })
    }
}

struct Connected {
    g: Vec<SmallMat>,
    dg: Vec<SmallMat>,
    log_det: Complex64,
}
