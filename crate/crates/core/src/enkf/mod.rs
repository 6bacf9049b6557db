//! Ensemble Kalman filter for folding perfect point observations into the
//! surrogate state.
//!
//! The filter never materializes the `n x n` sample covariance. With `A`
//! the matrix of member deviations from the ensemble mean and `H` the
//! point-selection operator, `C H^T = A (H A)^T / (n_e - 1)` and
//! `H C H^T = (H A)(H A)^T / (n_e - 1)`.
//!
//! Observations are exact, so there is no observation noise term and no
//! perturbed observations: every member moves by `K (u - H f_j)`.
//!
//! Everything here is a pure function of its inputs. Server and client run
//! the same code on the same data and must end up with bit-identical
//! ensembles.

mod local;
pub mod rng;

use std::cell::{Cell, RefCell};
use std::collections::hash_map::{Entry, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{GridLevel, StateVector};
pub use rng::{GaussianStream, Mt19937, SeedPolicy};

pub const DEFAULT_MEMBERS: usize = 50;

/// Eigenvalues below this fraction of the largest one are dropped from the
/// pseudo-inverse.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    /// Standard deviation of the i.i.d. perturbation at interior points.
    pub sigma: f64,
}

impl PerturbationSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("perturbation sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    level: GridLevel,
    members: Vec<StateVector>,
    step: u32,
}

impl Ensemble {
    pub fn new(members: Vec<StateVector>, step: u32) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::config(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let level = members[0].level();
        if let Some(bad) = members.iter().find(|m| m.level() != level) {
            return Err(Error::Dimension {
                expected: level.n_points(),
                actual: bad.len(),
            });
        }
        Ok(Self {
            level,
            members,
            step,
        })
    }

    pub fn level(&self) -> GridLevel {
        self.level
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    /// Member mean, summed in member order.
    pub fn mean(&self) -> StateVector {
        let n = self.level.n_points();
        let mut acc = vec![0.0; n];
        for m in &self.members {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let inv = 1.0 / self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        StateVector::new(self.level, acc).expect("mean has grid length")
    }

    /// Deviations from the mean as an `n x n_e` matrix.
    fn deviations(&self, mean: &StateVector) -> DMatrix<f64> {
        let n = self.level.n_points();
        DMatrix::from_fn(n, self.members.len(), |i, j| {
            self.members[j][i] - mean[i]
        })
    }

    pub fn bit_eq(&self, other: &Ensemble) -> bool {
        self.step == other.step
            && self.members.len() == other.members.len()
            && self.members.iter().zip(&other.members).all(|(a, b)| a.bit_eq(b))
    }
}

/// Perfect point observations `(position, value)`, positions strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialObservation {
    positions: Vec<usize>,
    values: Vec<f64>,
}

impl PartialObservation {
    pub fn new(pairs: Vec<(usize, f64)>, n_points: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (k, &(pos, value)) in pairs.iter().enumerate() {
            if pos >= n_points {
                return Err(Error::protocol(format!("observation index {pos} out of range {n_points}")));
            }
            if k > 0 && pos <= positions[k - 1] {
                return Err(Error::protocol("observation indices must be strictly increasing"));
            }
            if !value.is_finite() {
                return Err(Error::protocol(format!("non-finite observation at {pos}")));
            }
            positions.push(pos);
            values.push(value);
        }
        Ok(Self { positions, values })
    }

    /// Observation of `state` at `positions` (which must be sorted and unique).
    pub fn sample(state: &StateVector, positions: &[usize]) -> Result<Self> {
        Self::new(positions.iter().map(|&p| (p, state[p])).collect(), state.len())
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.positions.iter().copied().zip(self.values.iter().copied())
    }
}

/// Builds `n_e` members `state + r_j`.
///
/// The perturbations are drawn member-major from a [`GaussianStream`]
/// seeded with `seed_policy.derive(step)`: member `j` consumes `n_points`
/// consecutive draws, boundary draws are discarded (boundary points are
/// never perturbed). The draws are then centred across members so the
/// ensemble mean reproduces `state` up to rounding.
pub fn generate_members(
    state: &StateVector,
    n_e: usize,
    seed_policy: SeedPolicy,
    step: u32,
    pert: PerturbationSpec,
) -> Result<Ensemble> {
    if n_e < 2 {
        return Err(Error::config(format!("n_e must be at least 2, got {n_e}")));
    }
    let grid = state.level();
    let n = grid.n_points();
    let mut stream = GaussianStream::new(seed_policy.derive(step as u64));
    let mut draws = vec![0.0; n * n_e];
    for j in 0..n_e {
        for i in 0..n {
            let z = stream.next_standard();
            if !grid.is_boundary(i) {
                draws[j * n + i] = pert.sigma * z;
            }
        }
    }
    let inv = 1.0 / n_e as f64;
    for i in 0..n {
        let mean = (0..n_e).map(|j| draws[j * n + i]).sum::<f64>() * inv;
        for j in 0..n_e {
            draws[j * n + i] -= mean;
        }
    }
    let members = (0..n_e)
        .map(|j| {
            let values = state
                .values()
                .iter()
                .zip(&draws[j * n..(j + 1) * n])
                .map(|(s, r)| s + r)
                .collect();
            StateVector::new(grid, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, step)
}

/// Applies `model_step` to every member and advances the step index.
pub fn forecast<F>(ensemble: &Ensemble, model_step: F) -> Result<Ensemble>
where
    F: Fn(&StateVector) -> Result<StateVector>,
{
    let members = ensemble
        .members
        .iter()
        .map(&model_step)
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, ensemble.step + 1)
}

/// Advance for a certified step: forecast without analysis.
pub fn certified_advance<F>(ensemble: &Ensemble, model_step: F) -> Result<Ensemble>
where
    F: Fn(&StateVector) -> Result<StateVector>,
{
    forecast(ensemble, model_step)
}

/// Returns `(C H^T, H C H^T)` for the sample covariance of `ensemble`.
pub fn sample_covariance_action(
    ensemble: &Ensemble,
    positions: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if positions.is_empty() {
        return Err(Error::config("covariance action needs at least one observed index"));
    }
    let n = ensemble.level.n_points();
    if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::Dimension {
            expected: n,
            actual: bad,
        });
    }
    let mean = ensemble.mean();
    let a = ensemble.deviations(&mean);
    let ha = a.select_rows(positions);
    let scale = 1.0 / (ensemble.len() - 1) as f64;
    let cht = &a * ha.transpose() * scale;
    let hcht = &ha * ha.transpose() * scale;
    Ok((cht, hcht))
}

/// Moore–Penrose pseudo-inverse of a symmetric positive semidefinite matrix
/// together with its numerical rank.
fn symmetric_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let dim = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let mut pinv = DMatrix::zeros(dim, dim);
    if max <= 0.0 {
        return (pinv, 0);
    }
    let cutoff = PINV_RELATIVE_TOLERANCE * max;
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / lambda;
            rank += 1;
        }
    }
    (pinv, rank)
}

/// `K = C H^T pinv(H C H^T)`.
pub fn kalman_gain(cht: &DMatrix<f64>, hcht: &DMatrix<f64>) -> DMatrix<f64> {
    let (pinv, _) = symmetric_pinv(hcht);
    cht * pinv
}

/// Distance-based tapering of the sample covariance.
///
/// Small ensembles carry spurious correlations between points that have
/// nothing to do with each other. Multiplying the covariance entrywise by a
/// compactly supported correlation function removes them beyond the taper
/// support and damps them nearby.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Localization {
    /// Raw sample covariance.
    #[default]
    None,
    /// Gaspari–Cohn fifth-order taper with the given half-width in grid
    /// spacings. Correlations vanish beyond twice the half-width.
    GaspariCohn { half_width: f64 },
}

impl Localization {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Localization::None => Ok(()),
            Localization::GaspariCohn { half_width } if half_width > 0.0 && half_width.is_finite() => Ok(()),
            Localization::GaspariCohn { half_width } => Err(Error::config(format!(
                "localization half-width must be positive, got {half_width}"
            ))),
        }
    }

    /// Taper weight between grid points `i` and `j`.
    pub fn weight(&self, level: GridLevel, i: usize, j: usize) -> f64 {
        match *self {
            Localization::None => 1.0,
            Localization::GaspariCohn { half_width } => {
                let (ri, ci) = level.row_col(i);
                let (rj, cj) = level.row_col(j);
                let dr = ri as f64 - rj as f64;
                let dc = ci as f64 - cj as f64;
                gaspari_cohn((dr * dr + dc * dc).sqrt() / half_width)
            }
        }
    }
}

/// Gaspari–Cohn correlation function of the scaled distance `z`.
pub fn gaspari_cohn(z: f64) -> f64 {
    let z = z.abs();
    if z <= 1.0 {
        (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0
    } else if z < 2.0 {
        ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Analysis step: `e_j = f_j + K (u - H f_j)` with `K` from the forecast
/// ensemble and no localization.
///
/// `K` is applied in ensemble space. With `B = H A`,
/// `K = A B^T pinv(B B^T) = A pinv(B^T B) B^T`, and the nonzero spectra of
/// `B B^T` and `B^T B` coincide, so the truncated pseudo-inverse is the same
/// operator while the eigenproblem is only `n_e x n_e`.
///
/// When the observed covariance has full rank the analysis interpolates the
/// observations exactly; those entries are then set to the observed values
/// so no rounding residue remains at observed points.
pub fn analyze(forecast: &Ensemble, obs: &PartialObservation) -> Result<Ensemble> {
    analyze_with(forecast, obs, Localization::None)
}

/// [`analyze`] with the given covariance localization.
pub fn analyze_with(forecast: &Ensemble, obs: &PartialObservation, loc: Localization) -> Result<Ensemble> {
    Analyzer::new(forecast, loc)?.analyze(obs)
}

/// Mean of [`analyze`] without updating the members: `f + K (u - H f)` for
/// the forecast mean `f`. Equal to `analyze(..).mean()` up to rounding and
/// about `n_e` times cheaper.
pub fn analyze_mean(forecast: &Ensemble, obs: &PartialObservation) -> Result<StateVector> {
    Analyzer::new(forecast, Localization::None)?.analyze_mean(obs)
}

/// Repeated analyses of one forecast.
///
/// Holds the forecast mean and deviations and, under localization, caches
/// the tapered covariance column of every point observed so far, so growing
/// an observation set one point at a time costs one new column per call.
/// Columns are computed the same way whether cached or not, so results do
/// not depend on call history.
///
/// The tapered route solves in observation space: with taper `ρ`,
/// `K = (ρ ∘ C) H^T (H (ρ ∘ C) H^T)^-1`. The taper has compact support, so
/// both factors are sparse; the solve uses an envelope Cholesky
/// factorization. Pivots below `1e-10` of the largest diagonal entry belong
/// to points with no remaining spread and are skipped, which leaves the
/// other unknowns exact because a positive semidefinite matrix with a zero
/// pivot has a zero column there. The dense pseudo-inverse is only used when
/// the whole matrix vanishes.
#[derive(Debug)]
pub struct Analyzer<'a> {
    forecast: &'a Ensemble,
    loc: Localization,
    mean: StateVector,
    a: DMatrix<f64>,
    columns: RefCell<HashMap<usize, local::TaperedColumn>>,
    work: Cell<u64>,
}

impl<'a> Analyzer<'a> {
    pub fn new(forecast: &'a Ensemble, loc: Localization) -> Result<Self> {
        loc.validate()?;
        let mean = forecast.mean();
        let a = forecast.deviations(&mean);
        let (n, e) = (forecast.level.n_points() as u64, forecast.len() as u64);
        Ok(Self {
            forecast,
            loc,
            mean,
            a,
            columns: RefCell::new(HashMap::new()),
            work: Cell::new(2 * n * e),
        })
    }

    pub fn forecast_mean(&self) -> &StateVector {
        &self.mean
    }

    /// Floating-point operations spent so far, including the setup.
    pub fn work(&self) -> u64 {
        self.work.get()
    }

    fn charge(&self, flops: u64) {
        self.work.set(self.work.get() + flops);
    }

    /// Analyzed ensemble for `obs`.
    pub fn analyze(&self, obs: &PartialObservation) -> Result<Ensemble> {
        check_observation(self.forecast.level, obs)?;
        let forecast = self.forecast;
        let innovations = DMatrix::from_fn(obs.len(), forecast.len(), |k, j| {
            obs.values[k] - forecast.members[j][obs.positions[k]]
        });
        let (increments, exact) = self.increments(obs, innovations);
        self.charge((forecast.len() * (obs.len() + forecast.level.n_points())) as u64);
        let members = forecast
            .members
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let mut values: Vec<f64> = f
                    .values()
                    .iter()
                    .zip(increments.column(j).iter())
                    .map(|(v, d)| v + d)
                    .collect();
                if exact {
                    pin(obs, &mut values);
                }
                StateVector::new(forecast.level, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members, forecast.step)
    }

    /// Analyzed mean for `obs`.
    pub fn analyze_mean(&self, obs: &PartialObservation) -> Result<StateVector> {
        check_observation(self.forecast.level, obs)?;
        let innovation = DMatrix::from_fn(obs.len(), 1, |k, _| obs.values[k] - self.mean[obs.positions[k]]);
        let (increment, exact) = self.increments(obs, innovation);
        self.charge((obs.len() + self.mean.len()) as u64);
        let mut values: Vec<f64> = self
            .mean
            .values()
            .iter()
            .zip(increment.iter())
            .map(|(v, d)| v + d)
            .collect();
        if exact {
            pin(obs, &mut values);
        }
        StateVector::new(self.forecast.level, values)
    }

    /// `K D` for innovation columns `D`, and whether the analysis is exact
    /// on the observed points.
    fn increments(&self, obs: &PartialObservation, innovations: DMatrix<f64>) -> (DMatrix<f64>, bool) {
        let (n, m) = (self.a.nrows() as u64, obs.len() as u64);
        let (e, c) = (self.a.ncols() as u64, innovations.ncols() as u64);
        let Localization::GaspariCohn { half_width } = self.loc else {
            let b = self.a.select_rows(&obs.positions);
            let (gram_pinv, rank) = symmetric_pinv(&(b.transpose() * &b));
            let weights = gram_pinv * (b.transpose() * innovations);
            self.charge(2 * m * e * e + 11 * e * e * e + 2 * e * e * c + 2 * m * e * c + 2 * n * e * c);
            return (&self.a * weights, rank == obs.len());
        };

        let mut cache = self.columns.borrow_mut();
        for &p in &obs.positions {
            if let Entry::Vacant(slot) = cache.entry(p) {
                let (col, flops) = local::TaperedColumn::new(self.forecast.level, half_width, &self.a, p);
                self.charge(flops);
                slot.insert(col);
            }
        }
        let cols: Vec<&local::TaperedColumn> = obs.positions.iter().map(|p| &cache[p]).collect();
        if let Some(solved) = local::solve(self.a.nrows(), &obs.positions, &cols, &innovations) {
            self.charge(solved.flops);
            return (solved.increments, solved.full_rank);
        }
        let cht = DMatrix::from_fn(self.a.nrows(), obs.len(), |i, k| cols[k].get(i));
        let (pinv, rank) = symmetric_pinv(&cht.select_rows(&obs.positions));
        self.charge(11 * m * m * m + 2 * m * m * c + 2 * n * m * c);
        (cht * (pinv * innovations), rank == obs.len())
    }
}

fn check_observation(level: GridLevel, obs: &PartialObservation) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::config("analysis requires at least one observation"));
    }
    let n = level.n_points();
    if let Some(&bad) = obs.positions.iter().find(|&&p| p >= n) {
        return Err(Error::Dimension {
            expected: n,
            actual: bad,
        });
    }
    Ok(())
}

fn pin(obs: &PartialObservation, values: &mut [f64]) {
    for (&p, &u) in obs.positions.iter().zip(&obs.values) {
        values[p] = u;
    }
}

/// Approximate floating-point operations of [`generate_members`].
pub fn generation_flops(n: usize, n_e: usize) -> u64 {
    // Box–Muller draws dominate; centring and the addition are cheap.
    (24 + 4) * (n as u64) * (n_e as u64)
}
