//! Minimal dense Cholesky support for small symmetric positive-definite systems.

/// Lower-triangular Cholesky factor stored row-major (entries above the
/// diagonal are zero and never read).
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes the row-major `n × n` matrix `a`. Returns `None` when a
    /// pivot is not strictly positive.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let mut sum = a[ri + j];
                for k in 0..j {
                    sum -= a[ri + k] * a[rj + k];
                }
                if i == j {
                    if !(sum.is_finite() && sum > 0.0) {
                        return None;
                    }
                    a[ri + i] = sum.sqrt();
                } else {
                    a[ri + j] = sum / a[rj + j];
                }
            }
            for j in i + 1..n {
                a[i * n + j] = 0.0;
            }
        }
        Some(Cholesky { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for (k, bk) in b.iter().enumerate().skip(i + 1) {
                s -= self.l[k * n + i] * bk;
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A x = b` where `A = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Reconstructs `L Lᵀ` (row-major).
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                a[i * n + j] = s;
                a[j * n + i] = s;
            }
        }
        a
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
