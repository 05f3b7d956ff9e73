//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use skillopt::irl::StatePath;
use skillopt::ocsvm::{rbf_kernel, Point};
use skillopt::{Action, GridWorld};

/// Every state sequence produced by the `4^h` action sequences from `start`.
pub fn enumerate_paths(gw: &GridWorld, start: usize, h: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..h {
        let mut next = Vec::with_capacity(out.len() * 4);
        for path in &out {
            let s = *path.last().unwrap_or(&start);
            for a in Action::ALL {
                let mut p = path.clone();
                p.push(gw.step(s, a));
                next.push(p);
            }
        }
        out = next;
    }
    out
}

pub fn brute_log_z(gw: &GridWorld, rewards: &[f64], start: usize, h: usize) -> f64 {
    let scores: Vec<f64> = enumerate_paths(gw, start, h)
        .iter()
        .map(|p| p.iter().map(|&s| rewards[s]).sum())
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean over demonstrations of the expected state-entry counts of paths with
/// the same start and length.
pub fn brute_expected_features(gw: &GridWorld, rewards: &[f64], paths: &[StatePath]) -> Vec<f64> {
    let mut acc = vec![0.0; gw.n_states()];
    for p in paths {
        let all = enumerate_paths(gw, p.start, p.len());
        let log_z = brute_log_z(gw, rewards, p.start, p.len());
        for q in &all {
            let w = (q.iter().map(|&s| rewards[s]).sum::<f64>() - log_z).exp();
            for &s in q {
                acc[s] += w;
            }
        }
    }
    acc.iter().map(|x| x / paths.len() as f64).collect()
}

/// Euclidean projection onto `{0 <= x <= cap, Σx = 1}` by bisection on the
/// shift.
fn project(v: &[f64], cap: f64) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, cap)).sum::<f64>();
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, cap)).collect()
}

fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dual minimizer of `½αᵀKα` over the capped simplex: accelerated projected
/// gradient to find the active set, then an exact solve of the KKT system
/// on the free coordinates.
pub fn dense_qp(points: &[Point], nu: f64, gamma: f64) -> Vec<f64> {
    let n = points.len();
    let cap = 1.0 / (nu * n as f64);
    let k: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| rbf_kernel(a, b, gamma)).collect())
        .collect();
    let lipschitz: f64 = k.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let mut x = project(&vec![1.0 / n as f64; n], cap);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..20_000 {
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * y[j]).sum()).collect();
        let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / lipschitz).collect();
        let next = project(&step, cap);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
    }
    let free: Vec<usize> = (0..n).filter(|&i| x[i] > 1e-9 && x[i] < cap - 1e-9).collect();
    let fixed: Vec<(usize, f64)> = (0..n)
        .filter(|i| !free.contains(i))
        .map(|i| (i, if x[i] >= cap - 1e-9 { cap } else { 0.0 }))
        .collect();
    // unknowns: α_F and ρ.  K_FF α_F - ρ 1 = -K_FB α_B,  1ᵀα_F = 1 - Σα_B
    let m = free.len();
    let mut a = vec![vec![0.0; m + 1]; m + 1];
    let mut b = vec![0.0; m + 1];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r][c] = k[i][j];
        }
        a[r][m] = -1.0;
        b[r] = -fixed.iter().map(|&(j, v)| k[i][j] * v).sum::<f64>();
    }
    for c in 0..m {
        a[m][c] = 1.0;
    }
    b[m] = 1.0 - fixed.iter().map(|&(_, v)| v).sum::<f64>();
    let sol = solve_dense(&mut a, &mut b);
    let mut alpha = vec![0.0; n];
    for &(i, v) in &fixed {
        alpha[i] = v;
    }
    for (r, &i) in free.iter().enumerate() {
        alpha[i] = sol[r];
    }
    alpha
}

