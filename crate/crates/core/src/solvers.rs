//! Time steppers for the 2D heat equation `u_t = alpha * (u_xx + u_yy)` on
//! the unit square with Dirichlet boundary values held fixed in time.
//!
//! Both schemes are matrix-free linear operators on [`StateVector`]s:
//!
//! - FTCS: explicit forward-time central-space, the surrogate model. Stable
//!   only for `alpha * dt / dx^2 <= 1/4`.
//! - ADI: Peaceman–Rachford splitting with Crank–Nicolson half steps, the
//!   reference model. Each half step is implicit along one axis and explicit
//!   along the other; the implicit parts are constant-coefficient
//!   tridiagonal systems solved with the Thomas algorithm.

use crate::error::{Error, Result};
use crate::grid::{GridLevel, StateVector};

/// Largest mesh ratio `alpha * dt / dx^2` for which 2D FTCS is stable.
pub const FTCS_STABILITY_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatProblem {
    /// Thermal diffusivity.
    pub alpha: f64,
    /// Surrogate time step.
    pub dt: f64,
    /// Number of steps after the initial state.
    pub n_t: usize,
    /// Reference sub-steps per surrogate step.
    pub n_ref: usize,
}

impl Default for HeatProblem {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            dt: 1e-4,
            n_t: 100,
            n_ref: 1,
        }
    }
}

impl HeatProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_ref == 0 {
            return Err(Error::config("n_ref must be at least 1"));
        }
        Ok(())
    }

    /// Time step of the reference model.
    pub fn reference_dt(&self) -> f64 {
        self.dt / self.n_ref as f64
    }

    /// `alpha * dt / dx^2` on `grid`.
    pub fn mesh_ratio(&self, grid: GridLevel) -> f64 {
        let dx = grid.dx();
        self.alpha * self.dt / (dx * dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    FtcsExplicit,
    AdiCrankNicolson,
}

/// LU factors of the constant tridiagonal matrix `tridiag(off, diag, off)`.
#[derive(Debug, Clone)]
struct TridiagonalFactor {
    off: f64,
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl TridiagonalFactor {
    fn new(n: usize, diag: f64, off: f64) -> Result<Self> {
        let mut upper = Vec::with_capacity(n);
        let mut inv_pivot = Vec::with_capacity(n);
        let mut prev_upper = 0.0;
        for i in 0..n {
            let pivot = if i == 0 { diag } else { diag - off * prev_upper };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular tridiagonal system at row {i}"
                )));
            }
            let inv = 1.0 / pivot;
            prev_upper = off * inv;
            upper.push(prev_upper);
            inv_pivot.push(inv);
        }
        Ok(Self {
            off,
            upper,
            inv_pivot,
        })
    }

    /// Solves in place; `x` holds the right-hand side on entry.
    fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        if n == 0 {
            return;
        }
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.off * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

/// A configured time stepper for one model on one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: ModelKind,
    grid: GridLevel,
    dt: f64,
    ratio: f64,
    factor: Option<TridiagonalFactor>,
}

impl Stepper {
    pub fn new(kind: ModelKind, grid: GridLevel, alpha: f64, dt: f64) -> Result<Self> {
        HeatProblem {
            alpha,
            dt,
            n_t: 0,
            n_ref: 1,
        }
        .validate()?;
        let dx = grid.dx();
        let ratio = alpha * dt / (dx * dx);
        let factor = match kind {
            ModelKind::FtcsExplicit => {
                if ratio > FTCS_STABILITY_LIMIT {
                    return Err(Error::config(format!(
                        "FTCS unstable on {grid}: alpha*dt/dx^2 = {ratio:.4} exceeds {FTCS_STABILITY_LIMIT}"
                    )));
                }
                None
            }
            ModelKind::AdiCrankNicolson => {
                let half = 0.5 * ratio;
                let n = grid.side().saturating_sub(2);
                Some(TridiagonalFactor::new(n, 1.0 + ratio, -half)?)
            }
        };
        Ok(Self {
            kind,
            grid,
            dt,
            ratio,
            factor,
        })
    }

    /// Surrogate stepper (FTCS) for `problem` on `grid`.
    pub fn surrogate(grid: GridLevel, problem: &HeatProblem) -> Result<Self> {
        Self::new(ModelKind::FtcsExplicit, grid, problem.alpha, problem.dt)
    }

    /// Reference stepper (ADI) for `problem` on `grid`, using the sub-step `dt / n_ref`.
    pub fn reference(grid: GridLevel, problem: &HeatProblem) -> Result<Self> {
        problem.validate()?;
        Self::new(
            ModelKind::AdiCrankNicolson,
            grid,
            problem.alpha,
            problem.reference_dt(),
        )
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> GridLevel {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mesh_ratio(&self) -> f64 {
        self.ratio
    }

    /// Approximate floating-point operations of one [`Stepper::step`].
    pub fn flops_per_step(&self) -> u64 {
        let interior = self.grid.n_interior() as u64;
        match self.kind {
            ModelKind::FtcsExplicit => 7 * interior,
            ModelKind::AdiCrankNicolson => 20 * interior,
        }
    }

    pub fn step(&self, state: &StateVector) -> Result<StateVector> {
        if state.level() != self.grid {
            return Err(Error::Dimension {
                expected: self.grid.n_points(),
                actual: state.len(),
            });
        }
        let out = match self.kind {
            ModelKind::FtcsExplicit => self.ftcs(state),
            ModelKind::AdiCrankNicolson => self.adi(state),
        };
        if !out.is_finite() {
            return Err(Error::Numerical(format!(
                "{:?} step produced non-finite values",
                self.kind
            )));
        }
        Ok(out)
    }

    /// Applies `substeps` consecutive steps.
    pub fn advance(&self, state: &StateVector, substeps: usize) -> Result<StateVector> {
        let mut current = state.clone();
        for _ in 0..substeps {
            current = self.step(&current)?;
        }
        Ok(current)
    }

    fn ftcs(&self, state: &StateVector) -> StateVector {
        let side = self.grid.side();
        let r = self.ratio;
        let input = state.values();
        let mut out = state.clone();
        let values = out.values_mut();
        for row in 1..side.saturating_sub(1) {
            let base = row * side;
            for col in 1..side - 1 {
                let i = base + col;
                let centre = input[i];
                let neighbours = input[i - side] + input[i + side] + input[i - 1] + input[i + 1];
                values[i] = centre + r * (neighbours - 4.0 * centre);
            }
        }
        out
    }

    fn adi(&self, state: &StateVector) -> StateVector {
        let side = self.grid.side();
        if side < 3 {
            return state.clone();
        }
        let factor = self.factor.as_ref().expect("ADI stepper carries its factorization");
        let h = 0.5 * self.ratio;
        let n = side - 2;
        let u = state.values();
        let mut line = vec![0.0; n];

        // Implicit in x, explicit in y. Boundary values carry over.
        let mut half = state.clone();
        {
            let mid = half.values_mut();
            for row in 1..side - 1 {
                let base = row * side;
                for (k, slot) in line.iter_mut().enumerate() {
                    let i = base + k + 1;
                    *slot = u[i] + h * (u[i - side] - 2.0 * u[i] + u[i + side]);
                }
                line[0] += h * u[base];
                line[n - 1] += h * u[base + side - 1];
                factor.solve(&mut line);
                mid[base + 1..base + side - 1].copy_from_slice(&line);
            }
        }

        // Implicit in y, explicit in x.
        let mid = half.values();
        let mut out = state.clone();
        let values = out.values_mut();
        let last = (side - 1) * side;
        for col in 1..side - 1 {
            for (k, slot) in line.iter_mut().enumerate() {
                let i = (k + 1) * side + col;
                *slot = mid[i] + h * (mid[i - 1] - 2.0 * mid[i] + mid[i + 1]);
            }
            line[0] += h * u[col];
            line[n - 1] += h * u[last + col];
            factor.solve(&mut line);
            for (k, v) in line.iter().enumerate() {
                values[(k + 1) * side + col] = *v;
            }
        }
        out
    }
}

/// One explicit step of size `prob.dt`.
pub fn ftcs_step(state: &StateVector, prob: &HeatProblem) -> Result<StateVector> {
    Stepper::new(ModelKind::FtcsExplicit, state.level(), prob.alpha, prob.dt)?.step(state)
}

/// One Peaceman–Rachford ADI step of size `prob.dt`.
pub fn adi_step(state: &StateVector, prob: &HeatProblem) -> Result<StateVector> {
    Stepper::new(ModelKind::AdiCrankNicolson, state.level(), prob.alpha, prob.dt)?.step(state)
}

/// Runs `prob.n_t` steps and returns the chain including `initial`.
///
/// The ADI model takes `n_ref` sub-steps of `dt / n_ref` per emitted state so
/// that emitted states line up with surrogate times.
pub fn run_chain(
    initial: &StateVector,
    kind: ModelKind,
    prob: &HeatProblem,
) -> Result<Vec<StateVector>> {
    prob.validate()?;
    let (stepper, substeps) = match kind {
        ModelKind::FtcsExplicit => (Stepper::surrogate(initial.level(), prob)?, 1),
        ModelKind::AdiCrankNicolson => (Stepper::reference(initial.level(), prob)?, prob.n_ref),
    };
    let mut chain = Vec::with_capacity(prob.n_t + 1);
    chain.push(initial.clone());
    for i in 0..prob.n_t {
        let next = stepper.advance(&chain[i], substeps)?;
        chain.push(next);
    }
    Ok(chain)
}
