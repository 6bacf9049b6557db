//! Nested uniform grids on the unit square.
//!
//! Level `L` has `2^L + 1` points per axis, so every point of level `L` is
//! also a point of level `L + 1`. States are stored row-major (row index is
//! the `y` coordinate, column index the `x` coordinate) including the
//! boundary rows and columns.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Highest supported level. Level 12 already holds ~16.8M points.
pub const MAX_LEVEL: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridLevel {
    level: u32,
}

impl GridLevel {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::config(format!(
                "grid level {level} exceeds the supported maximum {MAX_LEVEL}"
            )));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Points per axis.
    pub fn side(&self) -> usize {
        (1usize << self.level) + 1
    }

    pub fn n_points(&self) -> usize {
        self.side() * self.side()
    }

    /// Mesh width.
    pub fn dx(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn n_interior(&self) -> usize {
        let inner = self.side().saturating_sub(2);
        inner * inner
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.side() + col
    }

    /// `(row, col)` of a linear index.
    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.side(), index % self.side())
    }

    /// `(x, y)` coordinates of a linear index.
    pub fn coords(&self, index: usize) -> (f64, f64) {
        let (row, col) = self.row_col(index);
        let dx = self.dx();
        (col as f64 * dx, row as f64 * dx)
    }

    pub fn is_boundary(&self, index: usize) -> bool {
        let (row, col) = self.row_col(index);
        let last = self.side() - 1;
        row == 0 || col == 0 || row == last || col == last
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let side = self.side();
        (1..side.saturating_sub(1))
            .flat_map(move |row| (1..side - 1).map(move |col| row * side + col))
    }
}

impl fmt::Display for GridLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level {} ({}x{})", self.level, self.side(), self.side())
    }
}

pub fn make_grid(level: u32) -> Result<GridLevel> {
    GridLevel::new(level)
}

/// Simulation state at one time step on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    level: GridLevel,
    values: Vec<f64>,
}

impl StateVector {
    pub fn new(level: GridLevel, values: Vec<f64>) -> Result<Self> {
        if values.len() != level.n_points() {
            return Err(Error::Dimension {
                expected: level.n_points(),
                actual: values.len(),
            });
        }
        Ok(Self { level, values })
    }

    pub fn zeros(level: GridLevel) -> Self {
        Self {
            level,
            values: vec![0.0; level.n_points()],
        }
    }

    /// Samples `f(x, y)` at every grid point.
    pub fn from_fn(level: GridLevel, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..level.n_points())
            .map(|i| {
                let (x, y) = level.coords(i);
                f(x, y)
            })
            .collect();
        Self { level, values }
    }

    pub fn level(&self) -> GridLevel {
        self.level
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise `self - other` on the same grid.
    pub fn sub(&self, other: &StateVector) -> Result<StateVector> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(StateVector {
            level: self.level,
            values,
        })
    }

    pub fn check_same_grid(&self, other: &StateVector) -> Result<()> {
        if self.level != other.level {
            return Err(Error::Dimension {
                expected: self.level.n_points(),
                actual: other.level.n_points(),
            });
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaNs by payload.
    pub fn bit_eq(&self, other: &StateVector) -> bool {
        self.level == other.level
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

impl IndexMut<usize> for StateVector {
    fn index_mut(&mut self, index: usize) -> &mut f64 {
        &mut self.values[index]
    }
}

/// Linear map from a fine grid to a coarser (or equal) one.
///
/// The shipped map is pointwise injection: each coarse point copies the
/// value of the coincident fine point. `index_map[k]` is the fine index
/// feeding coarse index `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restriction {
    from: GridLevel,
    to: GridLevel,
    index_map: Vec<usize>,
}

impl Restriction {
    pub fn injection(from: GridLevel, to: GridLevel) -> Result<Self> {
        if to.level() > from.level() {
            return Err(Error::Dimension {
                expected: from.n_points(),
                actual: to.n_points(),
            });
        }
        let stride = 1usize << (from.level() - to.level());
        let side = to.side();
        let mut index_map = Vec::with_capacity(to.n_points());
        for row in 0..side {
            for col in 0..side {
                index_map.push(from.index(row * stride, col * stride));
            }
        }
        Ok(Self {
            from,
            to,
            index_map,
        })
    }

    pub fn from_level(&self) -> GridLevel {
        self.from
    }

    pub fn to_level(&self) -> GridLevel {
        self.to
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.level() != self.from {
            return Err(Error::Dimension {
                expected: self.from.n_points(),
                actual: state.len(),
            });
        }
        let values = self.index_map.iter().map(|&i| state.values[i]).collect();
        Ok(StateVector {
            level: self.to,
            values,
        })
    }
}

/// Injects `state` onto the coarser grid `to`.
pub fn restrict(state: &StateVector, to: GridLevel) -> Result<StateVector> {
    if state.level() == to {
        return Ok(state.clone());
    }
    Restriction::injection(state.level(), to)?.apply(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_point_counts() {
        assert_eq!(make_grid(5).unwrap().n_points(), 1089);
        assert_eq!(make_grid(6).unwrap().n_points(), 4225);
        let g0 = make_grid(0).unwrap();
        assert_eq!((g0.side(), g0.n_points(), g0.dx()), (2, 4, 1.0));
    }

    #[test]
    fn level_cap() {
        assert!(make_grid(MAX_LEVEL).is_ok());
        assert!(matches!(make_grid(MAX_LEVEL + 1), Err(Error::Config(_))));
    }

    #[test]
    fn nested_point_sets() {
        // Brute force: every coarse coordinate appears among the fine ones.
        for level in 0..7 {
            let coarse = make_grid(level).unwrap();
            let fine = make_grid(level + 1).unwrap();
            let fine_coords: Vec<(f64, f64)> =
                (0..fine.n_points()).map(|i| fine.coords(i)).collect();
            for i in 0..coarse.n_points() {
                let c = coarse.coords(i);
                assert!(fine_coords.contains(&c), "level {level} point {c:?}");
            }
            assert!(coarse.n_points() < fine.n_points());
        }
    }

    #[test]
    fn restriction_matches_coordinates() {
        for (lf, lc) in [(3, 1), (6, 5), (7, 4), (4, 4)] {
            let fine = make_grid(lf).unwrap();
            let coarse = make_grid(lc).unwrap();
            let r = Restriction::injection(fine, coarse).unwrap();
            for (k, &i) in r.index_map().iter().enumerate() {
                assert_eq!(coarse.coords(k), fine.coords(i));
            }
        }
    }

    #[test]
    fn restrict_center_value() {
        let fine = make_grid(6).unwrap();
        let coarse = make_grid(5).unwrap();
        let mut s = StateVector::zeros(fine);
        let centre_fine = (0..fine.n_points())
            .find(|&i| fine.coords(i) == (0.5, 0.5))
            .unwrap();
        s[centre_fine] = 42.0;
        let out = restrict(&s, coarse).unwrap();
        let centre_coarse = (0..coarse.n_points())
            .find(|&i| coarse.coords(i) == (0.5, 0.5))
            .unwrap();
        assert_eq!(out[centre_coarse], 42.0);
        assert_eq!(out.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn restrict_identity_and_constants() {
        let g6 = make_grid(6).unwrap();
        let g5 = make_grid(5).unwrap();
        let s = StateVector::from_fn(g6, |x, y| x * y);
        assert!(restrict(&s, g6).unwrap().bit_eq(&s));
        let ones = StateVector::new(g6, vec![1.0; g6.n_points()]).unwrap();
        let r = restrict(&ones, g5).unwrap();
        assert!(r.values().iter().all(|&v| v == 1.0));
        assert_eq!(r.len(), 1089);
    }

    #[test]
    fn restrict_to_finer_is_an_error() {
        let s = StateVector::zeros(make_grid(3).unwrap());
        assert!(matches!(
            restrict(&s, make_grid(4).unwrap()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn state_length_checked() {
        let g = make_grid(2).unwrap();
        assert!(StateVector::new(g, vec![0.0; 24]).is_err());
        assert!(StateVector::new(g, vec![0.0; 25]).is_ok());
    }

    #[test]
    fn boundary_and_interior() {
        let g = make_grid(2).unwrap();
        assert_eq!(g.interior_indices().count(), 9);
        assert_eq!(g.n_interior(), 9);
        assert!(g.interior_indices().all(|i| !g.is_boundary(i)));
        assert_eq!((0..25).filter(|&i| g.is_boundary(i)).count(), 16);
    }
}
