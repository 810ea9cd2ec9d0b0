//! Banded LU factorization without pivoting.
//!
//! Used for `I - dt 𝔏`, which is strictly row diagonally dominant with
//! nonpositive off-diagonals. Both factors inherit that sign pattern, so the
//! triangular solves map nonnegative right-hand sides to nonnegative results
//! in floating point as well.

/// A square matrix with `bw` sub- and super-diagonals, stored row by row.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "({i}, {j}) outside the band");
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            out[i] = (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum();
        }
    }

    /// In-place Doolittle factorization. Returns `None` on a zero or
    /// non-finite pivot.
    pub fn factor(mut self) -> Option<BandLu> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.is_finite() && pivot != 0.0) {
                return None;
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Some(BandLu { m: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let (n, bw) = (m.n, m.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut acc = b[i];
            for j in lo..i {
                acc -= m.data[m.idx(i, j)] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=hi {
                acc -= m.data[m.idx(i, j)] * b[j];
            }
            b[i] = acc / m.data[m.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn solves_random_dominant_band_systems() {
        let mut r = rng::stream(2, 0, 0);
        for &(n, bw) in &[(1usize, 1usize), (7, 1), (40, 3), (64, 8)] {
            let mut a = BandMatrix::zeros(n, bw);
            for i in 0..n {
                let mut off = 0.0;
                for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                    if j != i {
                        let v: f64 = -r.random::<f64>();
                        a.set(i, j, v);
                        off += v.abs();
                    }
                }
                a.set(i, i, off + 0.5 + r.random::<f64>());
            }
            let x: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
            let mut b = vec![0.0; n];
            a.mul_vec(&x, &mut b);
            let lu = a.clone().factor().unwrap();
            lu.solve_in_place(&mut b);
            for (u, v) in b.iter().zip(&x) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn m_matrix_solves_stay_nonnegative() {
        let n = 50;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            let mut off = 0.0;
            for j in [i.wrapping_sub(1), i + 1] {
                if j < n {
                    a.set(i, j, -1e3);
                    off += 1e3;
                }
            }
            a.set(i, i, 1.0 + off);
        }
        let lu = a.factor().unwrap();
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        lu.solve_in_place(&mut b);
        assert!(b.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn zero_pivot_is_reported() {
        assert!(BandMatrix::zeros(3, 1).factor().is_none());
    }
}
