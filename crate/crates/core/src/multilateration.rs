//! Planar positions from anchor ranges.
//!
//! Squaring `||p - p_i|| = d_i` and subtracting the last anchor's equation
//! leaves the linear system `A p = b` with rows
//! `2 (p_M - p_i)^T p = ||p_M||^2 - ||p_i||^2 - d_M^2 + d_i^2`, solved in the
//! least-squares sense by QR. Gauss-Newton on the unsquared range residuals
//! optionally refines the result.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scene::Point2;

/// Largest acceptable ratio of singular values of the linear system.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Point2,
    /// `sqrt(sum_i (||p - p_i|| - d_i)^2)`.
    pub range_residual: f64,
    /// Ratio of the extreme singular values of the system last solved.
    pub condition_number: f64,
    /// Gauss-Newton steps taken (0 for a plain linearized solve).
    pub iterations: usize,
    /// Set when refinement hit a rank-deficient Jacobian.
    pub degenerate: bool,
}

/// Range residual norm of `p` against the anchors.
pub fn range_residual(p: &Point2, anchors: &[Point2], distances: &[f64]) -> f64 {
    anchors.iter().zip(distances).map(|(a, d)| ((p - a).norm() - d).powi(2)).sum::<f64>().sqrt()
}

fn check_inputs(anchors: &[Point2], distances: &[f64]) -> Result<()> {
    if anchors.len() < 3 {
        return Err(invalid(format!("multilateration needs >= 3 anchors, got {}", anchors.len())));
    }
    if anchors.len() != distances.len() {
        return Err(invalid(format!("{} anchors but {} distances", anchors.len(), distances.len())));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(invalid("distances must be finite and non-negative"));
    }
    if anchors.iter().any(|a| !(a.x.is_finite() && a.y.is_finite())) {
        return Err(invalid("anchor positions must be finite"));
    }
    Ok(())
}

/// Least-squares solution of `min ||A x - b||` for a tall `m x 2` system,
/// with the singular-value condition number.
fn solve_tall(a: DMatrix<f64>, b: DVector<f64>) -> Option<(Vector2<f64>, f64)> {
    let sv = a.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin <= smax / MAX_CONDITION {
        return None;
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    let r = Matrix2::new(r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]);
    let x = r.solve_upper_triangular(&Vector2::new(qtb[0], qtb[1]))?;
    Some((x, smax / smin))
}

pub fn linearized_solve(anchors: &[Point2], distances: &[f64]) -> Result<PositionEstimate> {
    check_inputs(anchors, distances)?;
    let m = anchors.len() - 1;
    let (pref, dref) = (anchors[m], distances[m]);
    let mut a = DMatrix::zeros(m, 2);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        let pi = anchors[i];
        a[(i, 0)] = 2.0 * (pref.x - pi.x);
        a[(i, 1)] = 2.0 * (pref.y - pi.y);
        b[i] = pref.norm_squared() - pi.norm_squared() - dref * dref + distances[i] * distances[i];
    }
    let (position, condition_number) =
        solve_tall(a, b).ok_or_else(|| Error::DegenerateGeometry("anchors are collinear or coincident".into()))?;
    Ok(PositionEstimate {
        position,
        range_residual: range_residual(&position, anchors, distances),
        condition_number,
        iterations: 0,
        degenerate: false,
    })
}

/// Refinement stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub max_iter: usize,
    /// Stop once a step is shorter than this (meters).
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-6 }
    }
}

/// Gauss-Newton on the range residuals with step halving; the result never
/// has a larger residual than `initial`.
pub fn refine(initial: &PositionEstimate, anchors: &[Point2], distances: &[f64], options: RefineOptions) -> PositionEstimate {
    if options.max_iter == 0 || check_inputs(anchors, distances).is_err() {
        return *initial;
    }
    let mut best = *initial;
    best.range_residual = range_residual(&initial.position, anchors, distances);
    let mut cost = best.range_residual;
    let mut p = best.position;
    for iter in 1..=options.max_iter {
        let mut jac = DMatrix::zeros(anchors.len(), 2);
        let mut r = DVector::zeros(anchors.len());
        for (i, (a, d)) in anchors.iter().zip(distances).enumerate() {
            let diff = p - a;
            let norm = diff.norm();
            if norm > 0.0 {
                jac[(i, 0)] = diff.x / norm;
                jac[(i, 1)] = diff.y / norm;
            }
            r[i] = -(norm - d);
        }
        let Some((step, cond)) = solve_tall(jac, r) else {
            best.degenerate = true;
            best.iterations = iter;
            return best;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = p + step * t;
            let c = range_residual(&cand, anchors, distances);
            if c <= cost {
                accepted = Some((cand, c));
                break;
            }
            t *= 0.5;
        }
        best.iterations = iter;
        let Some((cand, c)) = accepted else {
            break;
        };
        let moved = (cand - p).norm();
        p = cand;
        cost = c;
        best.position = p;
        best.range_residual = c;
        best.condition_number = cond;
        if moved < options.tol {
            break;
        }
    }
    best
}

/// Predicted anchor-to-unknown distances: `row i` = anchor `i`, `column j` = unknown `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimates {
    n_anchors: usize,
    n_unknowns: usize,
    values: Vec<f64>,
}

impl DistanceEstimates {
    pub fn new(n_anchors: usize, n_unknowns: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_anchors * n_unknowns {
            return Err(invalid(format!(
                "expected {n_anchors} x {n_unknowns} distances, got {}",
                values.len()
            )));
        }
        if values.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(invalid("distance estimates must be finite and non-negative"));
        }
        Ok(Self { n_anchors, n_unknowns, values })
    }

    pub fn n_anchors(&self) -> usize {
        self.n_anchors
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn get(&self, anchor: usize, unknown: usize) -> f64 {
        self.values[anchor * self.n_unknowns + unknown]
    }

    /// Distances from every anchor to unknown `j`.
    pub fn column(&self, unknown: usize) -> Vec<f64> {
        (0..self.n_anchors).map(|i| self.get(i, unknown)).collect()
    }
}

/// Linearized solve, then refinement when `refine_options` is given.
pub fn locate(anchors: &[Point2], distances: &[f64], refine_options: Option<RefineOptions>) -> Result<PositionEstimate> {
    let init = linearized_solve(anchors, distances)?;
    Ok(match refine_options {
        Some(opts) => refine(&init, anchors, distances, opts),
        None => init,
    })
}

/// Independent per-unknown solves; failures stay in their slot.
pub fn localize_all(
    anchors: &[Point2],
    estimates: &DistanceEstimates,
    refine_options: Option<RefineOptions>,
) -> Result<Vec<Result<PositionEstimate>>> {
    if anchors.len() != estimates.n_anchors() {
        return Err(invalid(format!(
            "{} anchors but estimates cover {}",
            anchors.len(),
            estimates.n_anchors()
        )));
    }
    Ok((0..estimates.n_unknowns()).map(|j| locate(anchors, &estimates.column(j), refine_options)).collect())
}
