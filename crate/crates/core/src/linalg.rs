//! Banded LU factorization with partial pivoting.

use crate::error::{ItpError, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored by row
/// with room for the fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`; the entry must lie inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for c in 0..n {
            let last = (c + kl).min(n - 1);
            let mut p = c;
            let mut best = self.get(c, c).abs();
            for r in c + 1..=last {
                let v = self.get(r, c).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || best <= 1e-15 * scale {
                return Err(ItpError::Singular(format!("zero pivot in column {c}")));
            }
            piv[c] = p;
            let jmax = (c + kl + ku).min(n - 1);
            if p != c {
                for j in c..=jmax {
                    let a = self.offset(c, j);
                    let b = self.offset(p, j);
                    self.data.swap(a, b);
                }
            }
            let d = self.get(c, c);
            for r in c + 1..=last {
                let m = self.get(r, c) / d;
                lower[c * kl + (r - c - 1)] = m;
                if m != 0.0 {
                    for j in c + 1..=jmax {
                        let a = self.get(c, j);
                        let o = self.offset(r, j);
                        self.data[o] -= m * a;
                    }
                }
            }
        }
        Ok(BandedLu { band: self, piv, lower })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    band: BandedMatrix,
    piv: Vec<usize>,
    lower: Vec<f64>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.band.n;
        let kl = self.band.kl;
        for c in 0..n {
            b.swap(c, self.piv[c]);
            let bc = b[c];
            if bc != 0.0 {
                for r in c + 1..=(c + kl).min(n - 1) {
                    b[r] -= self.lower[c * kl + (r - c - 1)] * bc;
                }
            }
        }
        let span = self.band.kl + self.band.ku;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + span).min(n - 1) {
                acc -= self.band.get(i, j) * b[j];
            }
            b[i] = acc / self.band.get(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_dense_solve(seed in proptest::collection::vec(-1.0..1.0f64, 200), kl in 0usize..4, ku in 0usize..4) {
            let n = 12;
            let mut band = BandedMatrix::zeros(n, kl, ku);
            let mut dense = DMatrix::zeros(n, n);
            let mut it = seed.iter().cycle();
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v = *it.next().unwrap() + if i == j { 0.05 } else { 0.0 };
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
            let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            if let Some(x) = dense.clone().lu().solve(&DVector::from_vec(rhs.clone())) {
                if dense.clone().lu().determinant().abs() > 1e-6 {
                    let lu = band.factor().unwrap();
                    let mut b = rhs.clone();
                    lu.solve_in_place(&mut b);
                    for i in 0..n {
                        prop_assert!((b[i] - x[i]).abs() < 1e-6 * (1.0 + x[i].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn singular_detected() {
        let band = BandedMatrix::zeros(3, 1, 1);
        assert!(band.factor().is_err());
    }
}
