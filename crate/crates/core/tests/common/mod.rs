//! Independent oracles shared by the integration tests and the acceptance
//! suite. None of them call into the code they check, apart from plain
//! containers and grid geometry.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use offsim::grid::{GridLevel, StateVector};

/// `sin(πx) sin(πy)` on `level`.
pub fn eigenmode(level: GridLevel) -> StateVector {
    StateVector::from_fn(level, |x, y| (PI * x).sin() * (PI * y).sin())
}

/// `sin²(πh/2)` for the lowest mode on `level`.
fn mode_sine(level: GridLevel) -> f64 {
    (PI * level.dx() / 2.0).sin().powi(2)
}

/// Per-step amplification of the lowest mode under the explicit scheme.
pub fn ftcs_factor(level: GridLevel, r: f64) -> f64 {
    1.0 - 8.0 * r * mode_sine(level)
}

/// Per-step amplification of the lowest mode under Peaceman–Rachford.
pub fn adi_factor(level: GridLevel, r: f64) -> f64 {
    let s = 2.0 * r * mode_sine(level);
    ((1.0 - s) / (1.0 + s)).powi(2)
}

/// Decay of the lowest mode of the semi-discrete (exact in time) system.
pub fn semi_discrete_decay(level: GridLevel, alpha: f64, t: f64) -> f64 {
    let h = level.dx();
    (-alpha * t * 8.0 * mode_sine(level) / (h * h)).exp()
}

/// Decay of the continuous lowest mode.
pub fn continuous_decay(alpha: f64, t: f64) -> f64 {
    (-2.0 * PI * PI * alpha * t).exp()
}

/// Gaspari–Cohn fifth-order taper, written out piecewise.
pub fn taper(z: f64) -> f64 {
    let z = z.abs();
    if z <= 1.0 {
        -0.25 * z.powi(5) + 0.5 * z.powi(4) + 0.625 * z.powi(3) - 5.0 / 3.0 * z.powi(2) + 1.0
    } else if z <= 2.0 {
        z.powi(5) / 12.0 - 0.5 * z.powi(4) + 0.625 * z.powi(3) + 5.0 / 3.0 * z.powi(2) - 5.0 * z + 4.0
            - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Moore–Penrose inverse of a symmetric positive semidefinite matrix,
/// dropping eigenvalues below `1e-10` of the largest.
///
/// nalgebra's SVD does not converge on some rank-deficient covariance
/// blocks (recomposition errors of order 0.1), so this goes through the
/// symmetric eigendecomposition instead.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.max();
    let inv = eig.eigenvalues.map(|l| if l > 1e-10 * top { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Perfect-observation EnKF analysis with an explicit `n x n` sample
/// covariance: every member moves by `P Hᵀ (H P Hᵀ)⁺ (u - H x_j)`.
/// `half_width` applies a Gaspari–Cohn taper in grid cells.
pub fn dense_analysis(
    level: GridLevel,
    members: &[Vec<f64>],
    positions: &[usize],
    values: &[f64],
    half_width: Option<f64>,
) -> Vec<Vec<f64>> {
    let n = members[0].len();
    let e = members.len();
    let mean: Vec<f64> = (0..n).map(|i| members.iter().map(|m| m[i]).sum::<f64>() / e as f64).collect();
    let mut p = DMatrix::zeros(n, n);
    for m in members {
        let d = DVector::from_fn(n, |i, _| m[i] - mean[i]);
        p += &d * d.transpose();
    }
    p /= (e - 1) as f64;
    if let Some(hw) = half_width {
        for i in 0..n {
            for j in 0..n {
                let (ri, ci) = level.row_col(i);
                let (rj, cj) = level.row_col(j);
                let dr = ri as f64 - rj as f64;
                let dc = ci as f64 - cj as f64;
                p[(i, j)] *= taper((dr * dr + dc * dc).sqrt() / hw);
            }
        }
    }
    let pht = p.select_columns(positions);
    let hpht = pht.select_rows(positions);
    let gain = &pht * pinv(&hpht);
    members
        .iter()
        .map(|m| {
            let innovation = DVector::from_fn(positions.len(), |k, _| values[k] - m[positions[k]]);
            let inc = &gain * innovation;
            (0..n).map(|i| m[i] + inc[i]).collect()
        })
        .collect()
}

/// Token bucket simulated one byte at a time. Each byte leaves as soon as
/// one whole token is available; tokens accrue at the link rate up to the
/// bucket size. Returns the departure time of the last byte of each frame.
pub fn byte_bucket(rate_bytes: f64, bucket: f64, frames: &[(f64, usize)]) -> Vec<f64> {
    let mut t = 0.0f64;
    let mut tokens = 0.0f64;
    frames
        .iter()
        .map(|&(at, size)| {
            if at > t {
                tokens = (tokens + (at - t) * rate_bytes).min(bucket);
                t = at;
            }
            for _ in 0..size {
                if tokens >= 1.0 {
                    tokens -= 1.0;
                } else {
                    t += (1.0 - tokens) / rate_bytes;
                    tokens = 0.0;
                }
            }
            t
        })
        .collect()
}
