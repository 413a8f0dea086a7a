use std::fmt;

use serde::Serialize;

/// Conditions worth surfacing alongside a date estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Flag {
    /// Kernel weights were degenerate; the m nearest neighbors were averaged uniformly.
    UniformFallback,
    /// Several years attained the optimum; the tie rule picked one.
    Tie,
    /// Fewer than ten shingles informed the estimate.
    LowConfidence { shingles: usize },
    /// Shingles never seen in training were skipped.
    UnknownShingles(usize),
    /// Local-linear fits that fell back to the locally constant estimate.
    LocalLinearFallback(usize),
    /// Local-linear fits whose logit hit the clipping bound.
    ClippedLogit(usize),
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flag::UniformFallback => f.write_str("uniform_fallback"),
            Flag::Tie => f.write_str("tie"),
            Flag::LowConfidence { shingles } => write!(f, "low_confidence({shingles})"),
            Flag::UnknownShingles(n) => write!(f, "unknown_shingles({n})"),
            Flag::LocalLinearFallback(n) => write!(f, "ll_fallback({n})"),
            Flag::ClippedLogit(n) => write!(f, "clipped_logit({n})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Per-year criterion the estimate optimized (log prevalence, fitted quantile, GMT...).
    pub curve: Option<Vec<(i32, f64)>>,
    pub flags: Vec<Flag>,
    /// Tuned or selected parameters, e.g. bandwidths.
    pub params: Vec<(String, f64)>,
}

/// A point estimate of a document's year.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DateEstimate {
    pub year_hat: f64,
    pub method: String,
    pub stderr: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl DateEstimate {
    pub fn new(year_hat: f64, method: impl Into<String>) -> Self {
        DateEstimate {
            year_hat,
            method: method.into(),
            stderr: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn has_flag(&self, pred: impl Fn(&Flag) -> bool) -> bool {
        self.diagnostics.flags.iter().any(pred)
    }

    /// Flags joined with `,` (empty string when none).
    pub fn flag_string(&self) -> String {
        self.diagnostics
            .flags
            .iter()
            .map(Flag::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Relative tolerance under which two criterion values count as tied.
pub(crate) const TIE_TOL: f64 = 1e-9;

pub(crate) fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Median of `values` (mean of the middle pair for even lengths). `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Index of the best-scoring year with the shared tie rule: among years within
/// [`TIE_TOL`] of the optimum, the one closest to `anchor`, then the smaller year.
/// NaN entries are ignored. Returns (index, tied).
pub(crate) fn pick_year(
    years: &[i32],
    values: &[f64],
    anchor: f64,
    maximize: bool,
) -> Option<(usize, bool)> {
    let best = values
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(None, |acc: Option<f64>, v| match acc {
            None => Some(v),
            Some(a) if (maximize && v > a) || (!maximize && v < a) => Some(v),
            a => a,
        })?;
    let tied: Vec<usize> = (0..values.len())
        .filter(|&i| !values[i].is_nan() && (values[i] == best || nearly_equal(values[i], best)))
        .collect();
    let pick = tied
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let da = (years[a] as f64 - anchor).abs();
            let db = (years[b] as f64 - anchor).abs();
            da.total_cmp(&db).then(years[a].cmp(&years[b]))
        })
        .expect("nonempty");
    Some((pick, tied.len() > 1))
}
