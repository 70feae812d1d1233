//! Sylvester Hadamard matrices and the pseudo-Hadamard fitting used to
//! initialize tentacle filters with mutually orthogonal sign patterns.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense ±1 matrix with entries stored as i8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<i8>,
}

impl SignMatrix {
    pub fn at(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Integer dot product of two rows.
    pub fn row_dot(&self, a: usize, b: usize) -> i64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| *x as i64 * *y as i64)
            .sum()
    }
}

/// Sylvester's construction: H(1) = [1], H(2n) = [[H, H], [H, -H]].
pub fn sylvester(order: usize) -> Result<SignMatrix> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::Invalid(format!(
            "sylvester order must be a power of two, got {order}"
        )));
    }
    let mut size = 1;
    let mut values = vec![1i8];
    while size < order {
        let next = size * 2;
        let mut grown = vec![0i8; next * next];
        for i in 0..size {
            for j in 0..size {
                let v = values[i * size + j];
                grown[i * next + j] = v;
                grown[i * next + size + j] = v;
                grown[(size + i) * next + j] = v;
                grown[(size + i) * next + size + j] = -v;
            }
        }
        size = next;
        values = grown;
    }
    Ok(SignMatrix {
        rows: order,
        cols: order,
        values,
    })
}

/// Fit a Hadamard-derived ±1 matrix to an arbitrary shape. The base order is
/// the smallest power of two covering both dimensions; columns beyond `cols`
/// are dropped, missing rows are supplied by randomly duplicating existing
/// ones, surplus rows by keeping a random subset (original order preserved).
/// Exact shapes pass through untouched, so the result is a true Hadamard
/// matrix whenever rows = cols = 2^k.
pub fn pseudo_hadamard(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<SignMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid(
            "pseudo_hadamard: dimensions must be >= 1".into(),
        ));
    }
    let base = rows.max(cols).next_power_of_two();
    let h = sylvester(base)?;
    let row_indices: Vec<usize> = if rows < base {
        let mut picked = rand::seq::index::sample(rng, base, rows).into_vec();
        picked.sort_unstable();
        picked
    } else {
        let mut all: Vec<usize> = (0..base).collect();
        for _ in base..rows {
            all.push(rng.gen_range(0..base));
        }
        all
    };
    let mut values = Vec::with_capacity(rows * cols);
    for &r in &row_indices {
        values.extend_from_slice(&h.row(r)[..cols]);
    }
    Ok(SignMatrix { rows, cols, values })
}
