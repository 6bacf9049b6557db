//! Sparse observation-space solve for the tapered analysis.
//!
//! A tapered covariance column for observed point `p` is nonzero only on
//! the taper support around `p`. With observations in increasing index
//! order, `H C Hᵀ` then has a narrow envelope and factors cheaply.

use nalgebra::DMatrix;

use super::{gaspari_cohn, PINV_RELATIVE_TOLERANCE};
use crate::grid::GridLevel;

/// Column `ρ(·, p) ∘ (A Aᵀ)(·, p)` restricted to its support.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct TaperedColumn {
    /// Grid indices, increasing.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl TaperedColumn {
    /// Builds the column and returns it with its cost in flops.
    pub fn new(level: GridLevel, half_width: f64, a: &DMatrix<f64>, p: usize) -> (Self, u64) {
        let side = level.side() as isize;
        let (pr, pc) = level.row_col(p);
        let reach = (2.0 * half_width).ceil() as isize;
        let n_e = a.ncols();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for r in (pr as isize - reach).max(0)..=(pr as isize + reach).min(side - 1) {
            for c in (pc as isize - reach).max(0)..=(pc as isize + reach).min(side - 1) {
                let dr = (r - pr as isize) as f64;
                let dc = (c - pc as isize) as f64;
                let w = gaspari_cohn((dr * dr + dc * dc).sqrt() / half_width);
                if w == 0.0 {
                    continue;
                }
                let i = level.index(r as usize, c as usize);
                let mut dot = 0.0;
                for j in 0..n_e {
                    dot += a[(i, j)] * a[(p, j)];
                }
                rows.push(i);
                values.push(w * dot);
            }
        }
        let flops = (2 * n_e as u64 + 25) * rows.len() as u64;
        (Self { rows, values }, flops)
    }

    pub fn get(&self, row: usize) -> f64 {
        match self.rows.binary_search(&row) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }
}

/// Lower Cholesky factor stored row by row from the first structural
/// nonzero to the diagonal.
struct Envelope {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Envelope {
    fn at(&self, i: usize, j: usize) -> f64 {
        if j < self.first[i] {
            0.0
        } else {
            self.rows[i][j - self.first[i]]
        }
    }
}

/// Result of [`solve`].
pub(super) struct Solved {
    /// `C Hᵀ X` on the full grid.
    pub increments: DMatrix<f64>,
    pub flops: u64,
    /// No pivot was dropped.
    pub full_rank: bool,
}

/// Solves `(H C Hᵀ) X = D` for the observed points `positions` (increasing)
/// with tapered columns `cols`.
///
/// Pivots below the relative tolerance are skipped and their unknowns set
/// to zero. For a positive semidefinite matrix a vanishing pivot means the
/// remaining column vanishes too, which happens at points whose spread was
/// removed by an earlier analysis. `None` only when the whole matrix is zero.
pub(super) fn solve(n: usize, positions: &[usize], cols: &[&TaperedColumn], rhs: &DMatrix<f64>) -> Option<Solved> {
    let m = positions.len();
    let mut slot = vec![usize::MAX; n];
    for (k, &p) in positions.iter().enumerate() {
        slot[p] = k;
    }
    let mut first: Vec<usize> = (0..m).collect();
    for (k, col) in cols.iter().enumerate() {
        for &r in &col.rows {
            let l = slot[r];
            if l != usize::MAX && l > k {
                first[l] = first[l].min(k);
            }
        }
    }
    let mut factor = Envelope {
        rows: (0..m).map(|l| vec![0.0; l - first[l] + 1]).collect(),
        first,
    };
    for (k, col) in cols.iter().enumerate() {
        for (&r, &v) in col.rows.iter().zip(&col.values) {
            let l = slot[r];
            if l != usize::MAX && l >= k {
                factor.rows[l][k - factor.first[l]] = v;
            }
        }
    }

    let max_diag = (0..m).map(|i| factor.at(i, i)).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    let cutoff = PINV_RELATIVE_TOLERANCE * max_diag;
    let mut flops = 0u64;
    let mut dropped = vec![false; m];
    for i in 0..m {
        let fi = factor.first[i];
        for (j, &gone) in dropped.iter().enumerate().take(i).skip(fi) {
            if gone {
                factor.rows[i][j - fi] = 0.0;
                continue;
            }
            let start = fi.max(factor.first[j]);
            let mut s = factor.at(i, j);
            for k in start..j {
                s -= factor.at(i, k) * factor.at(j, k);
            }
            flops += 2 * (j - start) as u64 + 1;
            factor.rows[i][j - fi] = s / factor.at(j, j);
        }
        let mut d = factor.at(i, i);
        for k in fi..i {
            let v = factor.rows[i][k - fi];
            d -= v * v;
        }
        flops += 2 * (i - fi) as u64 + 1;
        if d <= cutoff {
            dropped[i] = true;
            factor.rows[i][i - fi] = 0.0;
        } else {
            factor.rows[i][i - fi] = d.sqrt();
        }
    }

    let c = rhs.ncols();
    let mut x = rhs.clone();
    for col in 0..c {
        for i in 0..m {
            if dropped[i] {
                x[(i, col)] = 0.0;
                continue;
            }
            let fi = factor.first[i];
            let mut s = x[(i, col)];
            for k in fi..i {
                s -= factor.rows[i][k - fi] * x[(k, col)];
            }
            x[(i, col)] = s / factor.rows[i][i - fi];
        }
        for i in (0..m).rev() {
            if dropped[i] {
                continue;
            }
            let fi = factor.first[i];
            let xi = x[(i, col)] / factor.rows[i][i - fi];
            x[(i, col)] = xi;
            for k in fi..i {
                x[(k, col)] -= factor.rows[i][k - fi] * xi;
            }
        }
    }
    let envelope: u64 = factor.rows.iter().map(|r| r.len() as u64).sum();
    flops += 4 * envelope * c as u64;

    let mut out = DMatrix::zeros(n, c);
    for (k, col) in cols.iter().enumerate() {
        for (&r, &v) in col.rows.iter().zip(&col.values) {
            for j in 0..c {
                out[(r, j)] += v * x[(k, j)];
            }
        }
        flops += 2 * (col.rows.len() * c) as u64;
    }
    Some(Solved {
        increments: out,
        flops,
        full_rank: !dropped.contains(&true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn support_is_compact_and_symmetric() {
        let g = make_grid(4).unwrap();
        let a = DMatrix::from_fn(g.n_points(), 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let p = g.index(8, 8);
        let q = g.index(9, 10);
        let (cp, _) = TaperedColumn::new(g, 2.0, &a, p);
        let (cq, _) = TaperedColumn::new(g, 2.0, &a, q);
        assert!(cp.rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cp.get(q), cq.get(p));
        assert_eq!(cp.get(g.index(8, 12)), 0.0);
        assert!(cp.rows.len() < 49);
    }

    #[test]
    fn envelope_solve_matches_dense() {
        let g = make_grid(3).unwrap();
        let n = g.n_points();
        let a = DMatrix::from_fn(n, 6, |i, j| (((i + 1) * (j + 2) * 37) % 17) as f64 / 17.0 - 0.5);
        let positions: Vec<usize> = g.interior_indices().step_by(3).collect();
        let built: Vec<TaperedColumn> = positions.iter().map(|&p| TaperedColumn::new(g, 1.5, &a, p).0).collect();
        let cols: Vec<&TaperedColumn> = built.iter().collect();
        let m = positions.len();
        let rhs = DMatrix::from_fn(m, 2, |i, j| (i as f64 - j as f64) * 0.1);
        let solved = solve(n, &positions, &cols, &rhs).expect("positive definite");
        assert!(solved.full_rank);
        let got = solved.increments;

        let cht = DMatrix::from_fn(n, m, |i, k| built[k].get(i));
        let s = cht.select_rows(&positions);
        let want = &cht * s.lu().solve(&rhs).unwrap();
        assert!((got - &want).amax() < 1e-10 * want.amax().max(1.0));
    }

    #[test]
    fn collapsed_points_are_skipped() {
        let g = make_grid(3).unwrap();
        let n = g.n_points();
        let dead = g.index(4, 4);
        let a = DMatrix::from_fn(n, 5, |i, j| {
            if i == dead {
                0.0
            } else {
                (((i + 3) * (j + 1) * 29) % 13) as f64 / 13.0 - 0.5
            }
        });
        let positions = vec![g.index(3, 3), g.index(3, 4), dead, g.index(5, 5)];
        let built: Vec<TaperedColumn> = positions.iter().map(|&p| TaperedColumn::new(g, 2.0, &a, p).0).collect();
        let cols: Vec<&TaperedColumn> = built.iter().collect();
        let rhs = DMatrix::from_column_slice(4, 1, &[0.1, -0.2, 0.3, 0.05]);
        let solved = solve(n, &positions, &cols, &rhs).unwrap();
        assert!(!solved.full_rank);

        let keep = [0, 1, 3];
        let kept_pos: Vec<usize> = keep.iter().map(|&k| positions[k]).collect();
        let cht = DMatrix::from_fn(n, 3, |i, k| built[keep[k]].get(i));
        let d = DMatrix::from_fn(3, 1, |k, _| rhs[(keep[k], 0)]);
        let want = &cht * cht.select_rows(&kept_pos).lu().solve(&d).unwrap();
        assert!((solved.increments - &want).amax() < 1e-12);
    }

    #[test]
    fn zero_spread_fails_cleanly() {
        let g = make_grid(2).unwrap();
        let a = DMatrix::zeros(g.n_points(), 3);
        let col = TaperedColumn::new(g, 1.0, &a, 12).0;
        assert!(solve(g.n_points(), &[12], &[&col], &DMatrix::from_element(1, 1, 1.0)).is_none());
    }
}
