//! Quality of approximate solutions and selection of violation points.

use crate::enkf::PartialObservation;
use crate::error::{Error, Result};
use crate::grid::{Restriction, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    /// Largest absolute pointwise difference.
    Max,
    /// Unnormalized 2-norm of the difference vector.
    Euclidean,
}

impl Norm {
    pub fn of(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            Norm::Max => values.into_iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::Euclidean => values.into_iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Norm of `a - b`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.of(a.iter().zip(b).map(|(x, y)| x - y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualitySpec {
    pub norm: Norm,
    /// Bound on the per-step quality, in solution units.
    pub q_max: f64,
}

impl QualitySpec {
    pub fn new(norm: Norm, q_max: f64) -> Result<Self> {
        if q_max.is_nan() || q_max < 0.0 {
            return Err(Error::config(format!("q_max must be non-negative, got {q_max}")));
        }
        Ok(Self { norm, q_max })
    }

    pub fn max_norm(q_max: f64) -> Self {
        Self {
            norm: Norm::Max,
            q_max,
        }
    }
}

/// `|| approx - T reference ||` under `spec.norm`.
pub fn step_quality(
    approx: &StateVector,
    reference: &StateVector,
    spec: &QualitySpec,
    restriction: &Restriction,
) -> Result<f64> {
    let target = restriction.apply(reference)?;
    quality_against(approx, &target, spec.norm)
}

/// Quality against a reference already on the surrogate grid.
pub fn quality_against(approx: &StateVector, target: &StateVector, norm: Norm) -> Result<f64> {
    approx.check_same_grid(target)?;
    Ok(norm.distance(approx.values(), target.values()))
}

/// Worst per-step quality over two equally long chains.
pub fn chain_quality(
    approx_chain: &[StateVector],
    reference_chain: &[StateVector],
    spec: &QualitySpec,
    restriction: &Restriction,
) -> Result<f64> {
    if approx_chain.len() != reference_chain.len() {
        return Err(Error::Dimension {
            expected: reference_chain.len(),
            actual: approx_chain.len(),
        });
    }
    approx_chain
        .iter()
        .zip(reference_chain)
        .try_fold(0.0f64, |worst, (a, r)| {
            Ok(worst.max(step_quality(a, r, spec, restriction)?))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub step: u32,
    /// Quality of the unassisted state.
    pub q: f64,
    pub violating: bool,
    /// Selected `(index, reference value)` pairs, indices increasing.
    pub points: Vec<(usize, f64)>,
    /// Points whose unassisted error alone exceeds `q_max`.
    pub raw_violations: usize,
    /// Whether analysing with `points` brought the quality within bound.
    pub resolved: bool,
    /// Quality of the analysed state for the final selection (or `q`).
    pub analyzed_q: f64,
}

impl ViolationReport {
    pub fn observation(&self, n_points: usize) -> Result<PartialObservation> {
        PartialObservation::new(self.points.clone(), n_points)
    }
}

/// Chooses the points a partial update must carry.
///
/// `target` is the restricted reference state. `analyze` maps a candidate
/// observation to the state the client would publish after integrating it;
/// every candidate set is verified through it.
///
/// `Norm::Max` starts from all points whose error exceeds `q_max`,
/// `Norm::Euclidean` starts empty. While the analysed state still violates
/// the bound, the worst unselected point of the current residual joins the
/// set, one at a time.
///
/// Ties go to the lowest index. The search gives up (`resolved == false`)
/// when nothing is left to add, or when the set grows beyond `max_points`.
pub fn select_violation_points<F>(
    approx: &StateVector,
    target: &StateVector,
    spec: &QualitySpec,
    step: u32,
    max_points: usize,
    mut analyze: F,
) -> Result<ViolationReport>
where
    F: FnMut(&PartialObservation) -> Result<StateVector>,
{
    approx.check_same_grid(target)?;
    let n = approx.len();
    let q = spec.norm.distance(approx.values(), target.values());
    let raw_violations = approx
        .values()
        .iter()
        .zip(target.values())
        .filter(|(a, t)| (*a - *t).abs() > spec.q_max)
        .count();
    let mut report = ViolationReport {
        step,
        q,
        violating: q > spec.q_max,
        points: Vec::new(),
        raw_violations,
        resolved: true,
        analyzed_q: q,
    };
    if !report.violating {
        return Ok(report);
    }

    let mut selected = vec![false; n];
    let mut count = 0usize;
    let mut current = approx.clone();
    let mut current_q = q;

    if spec.norm == Norm::Max {
        for i in 0..n {
            if (approx[i] - target[i]).abs() > spec.q_max {
                selected[i] = true;
                count += 1;
            }
        }
    }

    for _ in 0..=n {
        if count > 0 {
            let positions: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
            let obs = PartialObservation::sample(target, &positions)?;
            current = analyze(&obs)?;
            current.check_same_grid(target)?;
            current_q = spec.norm.distance(current.values(), target.values());
            if current_q <= spec.q_max {
                report.points = obs.pairs().collect();
                report.analyzed_q = current_q;
                return Ok(report);
            }
        }
        if count >= max_points || count == n {
            break;
        }
        let residual = |i: usize| (current[i] - target[i]).abs();
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !selected[i]) {
            let r = residual(i);
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        let Some((i, _)) = best else { break };
        selected[i] = true;
        count += 1;
    }

    let positions: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
    report.points = positions.iter().map(|&p| (p, target[p])).collect();
    report.resolved = false;
    report.analyzed_q = current_q;
    Ok(report)
}
