//! Minimum-norm convex combinations of objective gradients.
//!
//! The two-objective case has a closed form: with `g1`, `g2` the minimiser of
//! `|a g1 + (1 - a) g2|^2` over `a` in `[0, 1]` is
//! `a = clamp((g2 - g1)^T g2 / |g2 - g1|^2, 0, 1)`. For more objectives the
//! min-norm point of the convex hull is found with Frank-Wolfe iterations on
//! the simplex.

use crate::error::{Error, Result};
use crate::vecops::{dot, norm, norm_sq};

/// Below this `|g2 - g1|^2` the pair is treated as identical.
pub const DEGENERATE_DENOM: f64 = 1e-24;
/// Below this norm both gradients are treated as zero.
pub const ZERO_GRADIENT_NORM: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq)]
pub struct MgdaSolution {
    /// Simplex weights, one per input gradient.
    pub weights: Vec<f64>,
    /// `sum_i weights[i] * g_i`.
    pub direction: Vec<f64>,
    pub norm: f64,
    /// Binary case: the unclamped weight fell outside `[0, 1]`.
    pub clamped: bool,
    /// Every input gradient was numerically zero.
    pub stationary: bool,
}

fn check_dims(gradients: &[&[f64]]) -> Result<usize> {
    let dim = gradients
        .first()
        .map(|g| g.len())
        .ok_or_else(|| Error::Mgda("empty gradient list".into()))?;
    for g in gradients {
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
    }
    Ok(dim)
}

fn combine(weights: &[f64], gradients: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut d = vec![0.0; dim];
    for (w, g) in weights.iter().zip(gradients) {
        if *w == 0.0 {
            continue;
        }
        for (di, gi) in d.iter_mut().zip(g.iter()) {
            *di += w * gi;
        }
    }
    d
}

/// Unclamped closed-form weight on `g1`, or `None` when `g1 ~ g2`.
pub fn alpha_hat(g1: &[f64], g2: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in g1.iter().zip(g2) {
        let diff = b - a;
        num += diff * b;
        den += diff * diff;
    }
    (den >= DEGENERATE_DENOM).then(|| num / den)
}

/// Closed-form two-objective min-norm combination `a g1 + (1 - a) g2`.
pub fn solve_mgda_pair(g1: &[f64], g2: &[f64]) -> Result<MgdaSolution> {
    let dim = check_dims(&[g1, g2])?;
    if norm(g1) < ZERO_GRADIENT_NORM && norm(g2) < ZERO_GRADIENT_NORM {
        return Ok(MgdaSolution {
            weights: vec![0.5, 0.5],
            direction: vec![0.0; dim],
            norm: 0.0,
            clamped: false,
            stationary: true,
        });
    }
    let (alpha, clamped) = match alpha_hat(g1, g2) {
        None => (0.5, false),
        Some(a) if a < 0.0 => (0.0, true),
        Some(a) if a > 1.0 => (1.0, true),
        Some(a) => (a, false),
    };
    let direction: Vec<f64> = g1
        .iter()
        .zip(g2)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    let n = norm(&direction);
    Ok(MgdaSolution {
        weights: vec![alpha, 1.0 - alpha],
        direction,
        norm: n,
        clamped,
        stationary: false,
    })
}

/// Frank-Wolfe min-norm point of the convex hull of `gradients`.
///
/// Each iteration moves toward the vertex with the smallest inner product
/// with the current point, using an exact line search. Stops once the
/// Frank-Wolfe gap `|d|^2 - min_i d^T g_i` drops below `tol`.
pub fn solve_mgda_n(gradients: &[&[f64]], max_iter: usize, tol: f64) -> Result<MgdaSolution> {
    let dim = check_dims(gradients)?;
    let n = gradients.len();
    if gradients.iter().all(|g| norm(g) < ZERO_GRADIENT_NORM) {
        return Ok(MgdaSolution {
            weights: vec![1.0 / n as f64; n],
            direction: vec![0.0; dim],
            norm: 0.0,
            clamped: false,
            stationary: true,
        });
    }
    // Gram matrix; all iterations work on inner products only.
    let gram: Vec<Vec<f64>> = gradients
        .iter()
        .map(|gi| gradients.iter().map(|gj| dot(gi, gj)).collect())
        .collect();
    let mut w = vec![1.0 / n as f64; n];
    // gw[i] = g_i^T d
    let mut gw: Vec<f64> = (0..n).map(|i| dot(&gram[i], &w)).collect();
    for _ in 0..max_iter {
        let dd = dot(&w, &gw);
        let (best, min_ip) = gw
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("n >= 1");
        if dd - min_ip < tol {
            break;
        }
        // |d - g_best|^2
        let den = dd - 2.0 * min_ip + gram[best][best];
        if den <= 0.0 {
            break;
        }
        let gamma = ((dd - min_ip) / den).clamp(0.0, 1.0);
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= 1.0 - gamma;
            if i == best {
                *wi += gamma;
            }
        }
        for (i, gwi) in gw.iter_mut().enumerate() {
            *gwi = (1.0 - gamma) * *gwi + gamma * gram[i][best];
        }
    }
    let direction = combine(&w, gradients, dim);
    let nrm = norm(&direction);
    Ok(MgdaSolution {
        weights: w,
        direction,
        norm: nrm,
        clamped: false,
        stationary: false,
    })
}

/// `|sum_i w_i g_i|`: zero exactly at a Pareto-stationary point.
pub fn pareto_stationarity_gap(gradients: &[&[f64]], weights: &[f64]) -> f64 {
    let Some(first) = gradients.first() else {
        return 0.0;
    };
    norm_sq(&combine(weights, gradients, first.len())).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn orthogonal_unit_pair() {
        let s = solve_mgda_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(close(s.weights[0], 0.5, 1e-15));
        assert_eq!(s.direction, vec![0.5, 0.5]);
        assert!(!s.clamped);
        // grid oracle
        let best = (0..=10_000)
            .map(|i| {
                let b = i as f64 / 10_000.0;
                (b * b + (1.0 - b) * (1.0 - b)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(s.norm <= best + 1e-12);
    }

    #[test]
    fn parallel_pair_clamps_to_shorter() {
        let s = solve_mgda_pair(&[3.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(close(alpha_hat(&[3.0, 0.0], &[1.0, 0.0]).unwrap(), -0.5, 1e-15));
        assert_eq!(s.weights, vec![0.0, 1.0]);
        assert_eq!(s.direction, vec![1.0, 0.0]);
        assert!(s.clamped);
    }

    #[test]
    fn equal_pair_uses_midpoint() {
        let s = solve_mgda_pair(&[5.0, -5.0], &[5.0, -5.0]).unwrap();
        assert_eq!(s.weights, vec![0.5, 0.5]);
        assert_eq!(s.direction, vec![5.0, -5.0]);
        assert!(!s.clamped && !s.stationary);
    }

    #[test]
    fn zero_pair_is_stationary() {
        let s = solve_mgda_pair(&[0.0, 0.0], &[1e-20, 0.0]).unwrap();
        assert!(s.stationary);
        assert_eq!(s.norm, 0.0);
        assert_eq!(s.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn bsd_worked_example() {
        let s = solve_mgda_pair(&[2.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(close(s.weights[0], 0.2, 1e-15));
        assert!(close(s.direction[0], 0.4, 1e-15) && close(s.direction[1], 0.8, 1e-15));
        let gap = pareto_stationarity_gap(&[&[2.0, 0.0], &[0.0, 1.0]], &s.weights);
        assert!(close(gap, 0.8f64.sqrt(), 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(
            solve_mgda_pair(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(solve_mgda_n(&[], 10, 1e-10).is_err());
    }

    #[test]
    fn n_way_examples() {
        let s = solve_mgda_n(&[&[3.0, -1.0]], 100, 1e-10).unwrap();
        assert_eq!(s.weights, vec![1.0]);
        assert_eq!(s.direction, vec![3.0, -1.0]);

        let e: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = solve_mgda_n(&[&e[0], &e[1], &e[2]], 10_000, 1e-10).unwrap();
        for w in &s.weights {
            assert!(close(*w, 1.0 / 3.0, 1e-12));
        }
        assert!(close(s.norm, 1.0 / 3f64.sqrt(), 1e-12));
    }

    #[test]
    fn gap_examples() {
        let g1 = [1.0, -2.0];
        let g2 = [-1.0, 2.0];
        assert_eq!(pareto_stationarity_gap(&[&g1, &g2], &[0.5, 0.5]), 0.0);
        assert!(close(pareto_stationarity_gap(&[&[3.0, 4.0]], &[1.0]), 5.0, 1e-15));
    }
}
