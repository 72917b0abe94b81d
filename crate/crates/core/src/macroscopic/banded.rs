//! Square band matrix with an in-place LU factorization (no pivoting).
//!
//! The diffusion Jacobians assembled by the coarse solver are column
//! diagonally dominant, for which Gaussian elimination without pivoting is
//! stable and keeps the band structure intact.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    half: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandMatrix {
    /// Zero matrix of order `n` with entries allowed for `|i − j| ≤ half`.
    pub fn zeros(n: usize, half: usize) -> Self {
        Self {
            n,
            half,
            data: vec![0.0; n * (2 * half + 1)],
            factored: false,
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.half, "({i}, {j}) outside the band");
        i * (2 * self.half + 1) + (j + self.half - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.half {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "product with a factored matrix");
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.half);
                let hi = (i + self.half + 1).min(self.n);
                (lo..hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Overwrites the matrix with its `LU` factors (unit lower `L`).
    pub fn factor(&mut self) -> Result<()> {
        let (n, p) = (self.n, self.half);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Error::LinearSolve(format!("zero pivot in row {k}")));
            }
            let end = (k + p + 1).min(n);
            for i in k + 1..end {
                let sik = self.slot(i, k);
                if self.data[sik] == 0.0 {
                    continue;
                }
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                for j in k + 1..end {
                    let akj = self.data[self.slot(k, j)];
                    if akj != 0.0 {
                        let sij = self.slot(i, j);
                        self.data[sij] -= l * akj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factors.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before factor");
        let (n, p) = (self.n, self.half);
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(p)..i {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + p + 1).min(n) {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s / self.data[self.slot(i, i)];
        }
    }

    /// Solves `Aᵀ x = b` in place using the stored factors.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before factor");
        let (n, p) = (self.n, self.half);
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(p)..i {
                s -= self.data[self.slot(j, i)] * b[j];
            }
            b[i] = s / self.data[self.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + p + 1).min(n) {
                s -= self.data[self.slot(j, i)] * b[j];
            }
            b[i] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BandMatrix {
        let n = 9;
        let mut a = BandMatrix::zeros(n, 3);
        for i in 0..n {
            a.add(i, i, 6.0 + i as f64);
            if i + 1 < n {
                a.add(i, i + 1, -1.0 - 0.1 * i as f64);
                a.add(i + 1, i, -2.0);
            }
            if i + 3 < n {
                a.add(i, i + 3, 0.5);
                a.add(i + 3, i, -1.5);
            }
        }
        a
    }

    #[test]
    fn solves_match_products() {
        let a = sample();
        let x: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin() + 1.0).collect();
        let b = a.mul_vec(&x);
        let mut lu = a.clone();
        lu.factor().unwrap();
        let mut y = b.clone();
        lu.solve(&mut y);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
        // transpose: (Aᵀ x)_j = Σ_i a_ij x_i
        let bt: Vec<f64> = (0..9).map(|j| (0..9).map(|i| a.get(i, j) * x[i]).sum()).collect();
        let mut z = bt;
        lu.solve_transpose(&mut z);
        for (u, v) in x.iter().zip(&z) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        assert!(a.factor().is_err());
    }
}
