//! Linear blends of daters with weights summing to one, fitted by least squares on
//! a validation set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge added to the normal equations, relative to their mean diagonal.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    pub weights: Vec<f64>,
    /// The system was singular and equal weights were returned.
    pub fallback: bool,
    /// Validation MSE of the returned weights.
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlendOptions {
    /// Restrict to nonnegative weights (exhaustive over method subsets).
    pub nonnegative: bool,
}

fn mse(estimates: &[Vec<f64>], truths: &[f64], w: &[f64]) -> f64 {
    estimates
        .iter()
        .zip(truths)
        .map(|(row, y)| {
            let p: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            (p - y).powi(2)
        })
        .sum::<f64>()
        / truths.len() as f64
}

/// Minimizes `wᵀ A w` subject to `Σ w = 1` on the columns in `cols`.
fn solve_subset(a: &DMatrix<f64>, cols: &[usize]) -> Option<Vec<f64>> {
    let k = cols.len();
    let sub = DMatrix::from_fn(k, k, |i, j| a[(cols[i], cols[j])]);
    let scale = (0..k).map(|i| sub[(i, i)]).sum::<f64>() / k as f64;
    let ridge = RIDGE * if scale > 0.0 { scale } else { 1.0 };
    let reg = sub + DMatrix::identity(k, k) * ridge;
    let x = reg.cholesky()?.solve(&DVector::from_element(k, 1.0));
    let s = x.sum();
    if !(s.is_finite() && s.abs() > 0.0) {
        return None;
    }
    let w = x / s;
    w.iter().all(|v| v.is_finite()).then(|| w.iter().copied().collect())
}

/// Fits sum-to-one weights minimizing validation MSE.
///
/// `estimates[i][j]` is method `j`'s estimate for validation document `i`. A tiny
/// ridge keeps collinear methods solvable (identical methods split evenly). If any
/// single method beats the solution, that method alone is returned.
pub fn fit_blend(estimates: &[Vec<f64>], truths: &[f64], options: BlendOptions) -> Result<BlendWeights> {
    let n = truths.len();
    if estimates.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: estimates.len(),
        });
    }
    let m = estimates.first().map_or(0, Vec::len);
    if m < 2 {
        return Err(Error::invalid(format!("blending needs at least 2 methods, got {m}")));
    }
    if n < m + 1 {
        return Err(Error::TooFewDocuments { needed: m + 1, got: n });
    }
    if let Some(row) = estimates.iter().find(|r| r.len() != m) {
        return Err(Error::LengthMismatch {
            expected: m,
            got: row.len(),
        });
    }
    if estimates.iter().flatten().chain(truths).any(|v| !v.is_finite()) {
        return Err(Error::invalid("blend inputs must be finite"));
    }
    // Identical methods are solved as one and share its weight evenly.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in 0..m {
        match groups.iter_mut().find(|g| estimates.iter().all(|row| row[g[0]] == row[j])) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    let g = groups.len();
    let r = DMatrix::from_fn(n, g, |i, j| estimates[i][groups[j][0]] - truths[i]);
    let a = r.transpose() * &r;
    let expand = |ws: &[f64], cols: &[usize]| {
        let mut w = vec![0.0; m];
        for (&c, &v) in cols.iter().zip(ws) {
            let share = v / groups[c].len() as f64;
            for &j in &groups[c] {
                w[j] = share;
            }
        }
        w
    };

    let candidates: Vec<Vec<usize>> = if options.nonnegative {
        if g > 16 {
            return Err(Error::invalid("nonnegative blending supports at most 16 distinct methods"));
        }
        (1u32..(1 << g))
            .map(|mask| (0..g).filter(|j| mask & (1 << j) != 0).collect())
            .collect()
    } else {
        vec![(0..g).collect()]
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |w: Vec<f64>| {
        let e = mse(estimates, truths, &w);
        if best.as_ref().is_none_or(|(_, b)| e < *b) {
            best = Some((w, e));
        }
    };
    let mut solved = false;
    for cols in &candidates {
        let Some(ws) = solve_subset(&a, cols) else {
            continue;
        };
        if options.nonnegative && ws.iter().any(|&v| v < 0.0) {
            continue;
        }
        solved = true;
        consider(expand(&ws, cols));
    }
    if !solved {
        consider(vec![1.0 / m as f64; m]);
    }
    for j in 0..m {
        let mut unit = vec![0.0; m];
        unit[j] = 1.0;
        consider(unit);
    }
    let (weights, mse) = best.expect("at least one candidate");
    let equal = weights.iter().all(|&w| w == 1.0 / m as f64);
    Ok(BlendWeights {
        weights,
        fallback: !solved && equal,
        mse,
    })
}

/// `Σ_j w_j · e_j`.
pub fn blend_predict(weights: &[f64], estimates: &[f64]) -> Result<f64> {
    if weights.len() != estimates.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            got: estimates.len(),
        });
    }
    Ok(weights.iter().zip(estimates).map(|(w, e)| w * e).sum())
}
