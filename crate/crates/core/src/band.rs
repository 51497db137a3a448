//! Banded LU factorization with partial pivoting.
//!
//! Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` columns on
//! the right absorb fill from row interchanges. Multipliers stay in the rows
//! where they were computed and row swaps are replayed on the right-hand side
//! during the forward sweep, as in LINPACK's `gbfa`/`gbsl`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    /// Multipliers of column `j` at `lower[j * kl ..]`.
    lower: Vec<f64>,
    /// Last column of `U` holding a nonzero in each row.
    reach: Vec<usize>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factor the matrix given as sparse rows `(column, value)`.
    pub fn factor(rows: &[Vec<(usize, f64)>]) -> Result<BandedLu> {
        let n = rows.len();
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in rows.iter().enumerate() {
            for &(c, _) in row {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                data[i * width + c + kl - i] += v;
            }
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            data,
            lower: vec![0.0; n * kl],
            reach: vec![0; n],
            piv: vec![0; n],
        };
        lu.eliminate()?;
        for i in 0..n {
            let hi = (i + kl + ku).min(n - 1);
            lu.reach[i] = (i..=hi)
                .rev()
                .find(|&c| lu.data[lu.slot(i, c)] != 0.0)
                .unwrap_or(i);
        }
        Ok(lu)
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.width + col + self.kl - row
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ju = 0usize;
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.slot(j, j)].abs();
            for r in j + 1..=last {
                let v = self.data[self.slot(r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(j));
            }
            self.piv[j] = p;
            ju = ju.max((p + ku).min(n - 1));
            if p != j {
                for c in j..=ju {
                    let (a, b) = (self.slot(j, c), self.slot(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(j, j)];
            let span = ju - j;
            let src = self.slot(j, j + 1);
            for r in j + 1..=last {
                let at = self.slot(r, j);
                let v = self.data[at];
                if v == 0.0 {
                    continue;
                }
                let m = v / pivot;
                self.data[at] = m;
                self.lower[j * kl + (r - j - 1)] = m;
                let dst = self.slot(r, j + 1);
                // rows j < r do not overlap in storage
                let (head, tail) = self.data.split_at_mut(dst);
                let pivot_row = &head[src..src + span];
                for (d, s) in tail[..span].iter_mut().zip(pivot_row) {
                    *d -= m * s;
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n, "right-hand side length mismatch");
        let (n, kl) = (self.n, self.kl);
        let mut b = rhs.to_vec();
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj == 0.0 {
                continue;
            }
            let last = (j + kl).min(n - 1);
            let mult = &self.lower[j * kl..j * kl + (last - j)];
            for (x, m) in b[j + 1..=last].iter_mut().zip(mult) {
                *x -= m * bj;
            }
        }
        for i in (0..n).rev() {
            let hi = self.reach[i];
            let base = self.slot(i, i);
            let mut s = b[i];
            for (off, x) in b[i + 1..=hi].iter().enumerate() {
                s -= self.data[base + 1 + off] * x;
            }
            b[i] = s / self.data[base];
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(rows: &[Vec<(usize, f64)>], x: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    #[test]
    fn solves_with_pivoting() {
        // zero leading diagonal forces a row swap
        let rows = vec![
            vec![(0, 0.0), (1, 2.0), (2, 1.0)],
            vec![(0, 3.0), (1, 1.0)],
            vec![(1, 1.0), (2, 4.0), (3, -1.0)],
            vec![(2, 2.0), (3, 5.0)],
        ];
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = dense_mul(&rows, &x);
        let lu = BandedLu::factor(&rows).unwrap();
        let got = lu.solve(&b);
        for (g, w) in got.iter().zip(x) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn detects_singularity() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]];
        assert!(matches!(BandedLu::factor(&rows), Err(Error::Singular(1))));
    }

    #[test]
    fn wide_random_band() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n: usize = 60;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(5);
                let hi = (i + 3).min(n - 1);
                (lo..=hi).map(|c| (c, rng.gen_range(-1.0..1.0))).collect()
            })
            .collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = dense_mul(&rows, &x);
        let got = BandedLu::factor(&rows).unwrap().solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-8);
        }
    }
}
