//! Banded matrix storage with an LU factorization using partial pivoting.

use crate::error::{PnpError, Result};

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Each row keeps `kl` extra slots to the right of the band for the fill-in
/// produced by row interchanges during factorization.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
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

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.ku + self.kl);
        row * self.width + (col + self.kl - row)
    }

    fn in_band(&self, row: usize, col: usize) -> bool {
        row < self.n && col < self.n && col + self.kl >= row && col <= row + self.ku
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if self.in_band(row, col) {
            self.data[self.slot(row, col)]
        } else {
            0.0
        }
    }

    /// Adds `value` at `(row, col)`.
    ///
    /// # Panics
    /// If the position lies outside the declared band.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            self.in_band(row, col),
            "entry ({row}, {col}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(row, col);
        self.data[s] += value;
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

    /// `|A| |x|` row by row.
    pub fn abs_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| (self.get(i, j) * x[j]).abs()).sum()
            })
            .collect()
    }

    /// Largest absolute entry of each row.
    pub fn row_maxima(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j).abs()).fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn scale_row(&mut self, row: usize, factor: f64) {
        let start = row * self.width;
        for v in &mut self.data[start..start + self.width] {
            *v *= factor;
        }
    }

    /// Adds `value` to every diagonal entry.
    pub fn shift_diagonal(&mut self, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    /// Solves `A x = b` in place of `b`, destroying the matrix.
    pub fn solve(mut self, b: &mut [f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-6;
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut pivot = j;
            let mut best = self.data[self.slot(j, j)].abs();
            for i in j + 1..=last {
                let v = self.data[self.slot(i, j)].abs();
                if v > best {
                    best = v;
                    pivot = i;
                }
            }
            if !(best > tiny) {
                return Err(PnpError::SingularMatrix(j));
            }
            let right = (j + kl + ku).min(n - 1);
            if pivot != j {
                for col in j..=right {
                    let a = self.slot(j, col);
                    let p = self.slot(pivot, col);
                    self.data.swap(a, p);
                }
                b.swap(j, pivot);
            }
            let diag = self.data[self.slot(j, j)];
            for i in j + 1..=last {
                let s = self.slot(i, j);
                let factor = self.data[s] / diag;
                if factor == 0.0 {
                    continue;
                }
                self.data[s] = 0.0;
                for col in j + 1..=right {
                    let src = self.data[self.slot(j, col)];
                    if src != 0.0 {
                        let dst = self.slot(i, col);
                        self.data[dst] -= factor * src;
                    }
                }
                b[i] -= factor * b[j];
            }
        }
        for j in (0..n).rev() {
            let right = (j + kl + ku).min(n - 1);
            let mut acc = b[j];
            for col in j + 1..=right {
                acc -= self.data[self.slot(j, col)] * b[col];
            }
            b[j] = acc / self.data[self.slot(j, j)];
        }
        Ok(())
    }
}

/// Solves a tridiagonal system by the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[n-1]` unused).
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(PnpError::SingularMatrix(0));
    }
    c[0] = if n > 1 { upper[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 {
            return Err(PnpError::SingularMatrix(i));
        }
        if i + 1 < n {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}
