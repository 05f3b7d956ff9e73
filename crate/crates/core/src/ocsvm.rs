//! One-class SVM (ν formulation) with an RBF kernel.
//!
//! Solves the dual
//!
//! ```text
//! min ½ αᵀKα   s.t.  0 ≤ αᵢ ≤ 1/(νn),  Σαᵢ = 1
//! ```
//!
//! by pairwise updates on the maximal violating pair. With a stationary
//! kernel this is the same problem as the minimum enclosing hypersphere with
//! slack, so the two descriptions give the same boundary.
//!
//! Identical training points share one kernel row: the solver works on the
//! distinct points with box `[0, m/(νn)]` for a point of multiplicity `m`,
//! and splits the weight evenly afterwards.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridWorld;

pub type Point = [f64; 2];

/// Points with `decision >= -BOUNDARY_EPS` count as inside. Margin support
/// vectors sit at zero only up to the solver tolerance.
pub const BOUNDARY_EPS: f64 = 1e-7;

#[inline]
pub fn rbf_kernel(x: &Point, y: &Point, kernel_gamma: f64) -> f64 {
    let d0 = x[0] - y[0];
    let d1 = x[1] - y[1];
    (-kernel_gamma * (d0 * d0 + d1 * d1)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    pub support_points: Vec<Point>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
    pub kernel_gamma: f64,
}

impl OcSvmModel {
    pub fn decision(&self, x: &Point) -> f64 {
        let s: f64 = self
            .support_points
            .iter()
            .zip(&self.alphas)
            .map(|(p, a)| a * rbf_kernel(p, x, self.kernel_gamma))
            .sum();
        s - self.rho
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.decision(x) >= -BOUNDARY_EPS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmFit {
    pub model: OcSvmModel,
    /// Dual coefficients in training order.
    pub alphas: Vec<f64>,
    pub iterations: usize,
    pub kkt_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcSvmParams {
    pub nu: f64,
    pub kernel_gamma: f64,
    pub tol: f64,
}

impl Default for OcSvmParams {
    fn default() -> Self {
        Self {
            nu: 0.1,
            kernel_gamma: 0.5,
            tol: 1e-9,
        }
    }
}

pub fn fit(points: &[Point], nu: f64, kernel_gamma: f64, tol: f64) -> Result<OcSvmFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput("one-class SVM needs at least one point"));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidParameter(format!("nu must be in (0, 1), got {nu}")));
    }
    if !(kernel_gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("kernel gamma must be > 0, got {kernel_gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("points must be finite".into()));
    }

    // group identical points, keeping first-seen order
    let mut uniq: Vec<Point> = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    let mut group_of = Vec::with_capacity(points.len());
    for p in points {
        match uniq.iter().position(|u| u == p) {
            Some(g) => {
                mult[g] += 1;
                group_of.push(g);
            }
            None => {
                group_of.push(uniq.len());
                uniq.push(*p);
                mult.push(1);
            }
        }
    }

    let n = points.len() as f64;
    let c = 1.0 / (nu * n);
    let u = uniq.len();
    let caps: Vec<f64> = mult.iter().map(|&m| m as f64 * c).collect();
    let kmat: Vec<Vec<f64>> = uniq
        .iter()
        .map(|a| uniq.iter().map(|b| rbf_kernel(a, b, kernel_gamma)).collect())
        .collect();

    // feasible start: fill boxes in order until the mass is used up
    let mut beta = vec![0.0; u];
    let mut left = 1.0_f64;
    for (b, &cap) in beta.iter_mut().zip(&caps) {
        if left <= 0.0 {
            break;
        }
        let take = cap.min(left);
        *b = take;
        left -= take;
    }
    let mut grad: Vec<f64> = (0..u)
        .map(|i| (0..u).map(|j| kmat[i][j] * beta[j]).sum())
        .collect();

    let max_iter = 100_000.max(2000 * u);
    let mut iterations = 0;
    let gap = loop {
        // i: may increase, smallest gradient; j: may decrease, largest gradient
        let mut i_up = None;
        let mut j_low = None;
        for k in 0..u {
            if beta[k] < caps[k] && i_up.is_none_or(|i: usize| grad[k] < grad[i]) {
                i_up = Some(k);
            }
            if beta[k] > 0.0 && j_low.is_none_or(|j: usize| grad[k] > grad[j]) {
                j_low = Some(k);
            }
        }
        let (Some(i), Some(j)) = (i_up, j_low) else {
            break 0.0;
        };
        let gap = grad[j] - grad[i];
        if gap <= tol {
            break gap.max(0.0);
        }
        if iterations >= max_iter {
            return Err(Error::SvmNoConvergence { iterations, gap });
        }
        let eta = (kmat[i][i] + kmat[j][j] - 2.0 * kmat[i][j]).max(1e-12);
        let room_i = caps[i] - beta[i];
        let room_j = beta[j];
        let mut delta = gap / eta;
        if delta >= room_i.min(room_j) {
            delta = room_i.min(room_j);
        }
        if delta == room_i {
            beta[i] = caps[i];
        } else {
            beta[i] += delta;
        }
        if delta == room_j {
            beta[j] = 0.0;
        } else {
            beta[j] -= delta;
        }
        for (k, g) in grad.iter_mut().enumerate() {
            *g += delta * (kmat[k][i] - kmat[k][j]);
        }
        iterations += 1;
    };

    let rho = {
        let free: Vec<f64> = (0..u)
            .filter(|&k| beta[k] > 0.0 && beta[k] < caps[k])
            .map(|k| grad[k])
            .collect();
        if free.is_empty() {
            // G <= rho at the upper bound, G >= rho at zero
            let lo = (0..u)
                .filter(|&k| beta[k] >= caps[k])
                .map(|k| grad[k])
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..u)
                .filter(|&k| beta[k] <= 0.0)
                .map(|k| grad[k])
                .fold(f64::INFINITY, f64::min);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo,
                (false, true) => hi,
                (false, false) => 0.0,
            }
        } else {
            free.iter().sum::<f64>() / free.len() as f64
        }
    };

    let alphas: Vec<f64> = group_of.iter().map(|&g| beta[g] / mult[g] as f64).collect();
    let (support_points, sv_alphas) = points
        .iter()
        .zip(&alphas)
        .filter(|(_, a)| **a > 0.0)
        .map(|(p, a)| (*p, *a))
        .unzip();
    Ok(OcSvmFit {
        model: OcSvmModel {
            support_points,
            alphas: sv_alphas,
            rho,
            nu,
            kernel_gamma,
        },
        alphas,
        iterations,
        kkt_gap: gap,
    })
}

pub fn state_point(gw: &GridWorld, s: usize) -> Point {
    let (r, c) = gw.coords(s);
    [r as f64, c as f64]
}

/// Every state whose `(row, col)` lies inside the model's boundary.
pub fn classify_states(model: &OcSvmModel, gw: &GridWorld) -> BTreeSet<usize> {
    (0..gw.n_states())
        .filter(|&s| model.contains(&state_point(gw, s)))
        .collect()
}
