//! Sobol low-discrepancy sequence (gray-code construction, 32-bit) with the
//! Joe–Kuo direction numbers. The all-zero first point is skipped.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2, 3, ...; dimension 1 is van der Corput.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
];

pub const MAX_DIM: usize = JOE_KUO.len() + 1;

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (i, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - i);
    }
    out.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for i in 0..BITS {
            if i < s {
                v[i] = m[i] << (BITS - 1 - i);
            } else {
                let mut x = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= v[i - k];
                    }
                }
                v[i] = x;
            }
        }
        out.push(v);
    }
    out
}

/// Streaming generator.
#[derive(Clone, Debug)]
pub struct Sobol {
    v: Vec<[u32; BITS]>,
    x: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("Sobol dimension must be in 1..={MAX_DIM}")));
        }
        Ok(Sobol {
            v: direction_numbers(dim),
            x: vec![0; dim],
            index: 0,
        })
    }
}

impl Iterator for Sobol {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let c = self.index.trailing_ones() as usize;
        if c >= BITS {
            return None;
        }
        self.index += 1;
        for (x, v) in self.x.iter_mut().zip(&self.v) {
            *x ^= v[c];
        }
        Some(self.x.iter().map(|&x| x as f64 / (1u64 << BITS) as f64).collect())
    }
}

/// The first `n` points after the origin.
pub fn sobol_points(n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    Ok(Sobol::new(dim)?.take(n).collect())
}
