//! Maximum-prevalence dating.
//!
//! Each shingle `s` gets an occurrence probability curve `π̂_s(t)`, fitted by a
//! kernel-localized binomial likelihood over the year-aggregated training index.
//! A document's log-prevalence is `Σ_{s ∈ D} log π̂_s(t)` and its date is the
//! maximizing year.
//!
//! Degree 0 is the closed-form kernel-weighted proportion (which also equals the
//! Poisson formulation). Degree 1 fits a local logistic-linear model by Newton's
//! method.

use std::collections::HashSet;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use crate::corpus::{Document, Shingle, ShingleId, ShingleIndex};
use crate::error::{Error, Result};
use crate::estimate::{median, pick_year, DateEstimate, Flag};
use crate::kernel::KernelSpec;

/// Documents informed by fewer distinct known shingles than this are flagged.
pub const LOW_CONFIDENCE_SHINGLES: usize = 10;

/// Bound on the fitted local logit.
pub const LOGIT_CLIP: f64 = 15.0;

const MAX_NEWTON_ITERS: usize = 50;
const SCORE_TOL: f64 = 1e-8;

/// Degree of the local polynomial in the logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Degree {
    #[default]
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceConfig {
    pub kernel: KernelSpec,
    pub degree: Degree,
    /// Count each distinct shingle once instead of once per occurrence.
    pub distinct: bool,
    /// Probability floor inside the log. `None` uses half a slot: `1 / (2 Σ_y slots)`.
    pub epsilon: Option<f64>,
    /// Evaluation years; `None` uses every integer year of the training range.
    pub eval_years: Option<(i32, i32)>,
}

impl Default for PrevalenceConfig {
    fn default() -> Self {
        PrevalenceConfig {
            kernel: KernelSpec::student_t(12.0, 3.0),
            degree: Degree::Constant,
            distinct: false,
            epsilon: None,
            eval_years: None,
        }
    }
}

impl PrevalenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {e}")));
            }
        }
        if let Some((lo, hi)) = self.eval_years {
            if lo > hi {
                return Err(Error::invalid(format!("empty evaluation range {lo}..{hi}")));
            }
        }
        Ok(())
    }
}

/// One training year as seen from an evaluation year in a local fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObs {
    /// `t_i - t` in years.
    pub offset: f64,
    /// Shingle occurrences (fractional counts allowed).
    pub count: f64,
    /// Shingle slots.
    pub slots: f64,
    /// Kernel weight.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// The logit hit `±LOGIT_CLIP` (separated data).
    Clipped,
    /// The solve failed or was degenerate; `pi` is the locally constant estimate.
    Fallback,
}

/// Result of a local logistic-linear fit. `beta1` is per year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub pi: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Kernel-weighted proportion `Σ w n / Σ w N`.
pub fn weighted_proportion(obs: &[LocalObs]) -> Result<f64> {
    let (num, den) = obs
        .iter()
        .fold((0.0, 0.0), |(a, b), o| (a + o.weight * o.count, b + o.weight * o.slots));
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::ZeroDenominator("no training mass near the evaluation year"))
    }
}

/// Local binomial log-likelihood at `(β0, β1)`, with `β1` per year.
pub fn local_log_likelihood(obs: &[LocalObs], beta0: f64, beta1: f64) -> f64 {
    obs.iter()
        .map(|o| {
            let eta = beta0 + beta1 * o.offset;
            o.weight * (o.count * eta - o.slots * softplus(eta))
        })
        .sum()
}

/// Score equations `Σ w (n - N p)` and `Σ w (x/h) (n - N p)` at `(β0, β1)`.
///
/// The offset is measured in bandwidths so both sums are on a comparable scale.
pub fn local_scores(obs: &[LocalObs], bandwidth: f64, beta0: f64, beta1: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for o in obs {
        let z = o.offset / bandwidth;
        let r = o.weight * (o.count - o.slots * logistic(beta0 + beta1 * o.offset));
        g[0] += r;
        g[1] += r * z;
    }
    g
}

/// Solves the local-linear score equations by Newton's method with step halving.
///
/// Falls back to the weighted proportion when fewer than two years carry weight
/// or the iteration does not converge.
pub fn local_linear_fit(obs: &[LocalObs], bandwidth: f64) -> Result<LocalFit> {
    let nw = weighted_proportion(obs)?;
    let fallback = |iterations| LocalFit {
        pi: nw,
        beta0: (nw / (1.0 - nw)).ln(),
        beta1: 0.0,
        iterations,
        status: FitStatus::Fallback,
    };
    let clipped = |b0: f64| LocalFit {
        pi: logistic(b0),
        beta0: b0,
        beta1: 0.0,
        iterations: 0,
        status: FitStatus::Clipped,
    };
    if nw <= 0.0 {
        return Ok(clipped(-LOGIT_CLIP));
    }
    if nw >= 1.0 {
        return Ok(clipped(LOGIT_CLIP));
    }
    let mut years = obs.iter().filter(|o| o.weight * o.slots > 0.0).map(|o| o.offset.to_bits());
    let first = years.next();
    if years.all(|y| Some(y) == first) {
        return Ok(fallback(0));
    }

    // Work with z = offset / h; b1 is then per bandwidth.
    let h = bandwidth;
    let mass: f64 = obs.iter().map(|o| o.weight * o.slots).sum();
    let tol = SCORE_TOL.max(1e-13 * mass);
    let mut b0 = (nw / (1.0 - nw)).ln();
    let mut b1 = 0.0;
    let mut ll = local_log_likelihood(obs, b0, b1 / h);
    let mut at_bound = 0;
    for iter in 0..MAX_NEWTON_ITERS {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for o in obs {
            let z = o.offset / h;
            let p = logistic(b0 + b1 * z);
            let r = o.weight * (o.count - o.slots * p);
            let v = o.weight * o.slots * p * (1.0 - p);
            g0 += r;
            g1 += r * z;
            h00 += v;
            h01 += v * z;
            h11 += v * z * z;
        }
        if g0.abs() < tol && g1.abs() < tol {
            return Ok(LocalFit {
                pi: logistic(b0),
                beta0: b0,
                beta1: b1 / h,
                iterations: iter,
                status: FitStatus::Converged,
            });
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-300 && det.is_finite()) {
            return Ok(fallback(iter));
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let n0 = (b0 + step * d0).clamp(-LOGIT_CLIP, LOGIT_CLIP);
            let n1 = b1 + step * d1;
            let nll = local_log_likelihood(obs, n0, n1 / h);
            if nll >= ll - 1e-12 * ll.abs() {
                b0 = n0;
                b1 = n1;
                ll = nll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(fallback(iter));
        }
        if b0.abs() >= LOGIT_CLIP {
            at_bound += 1;
            if at_bound >= 2 {
                return Ok(LocalFit {
                    pi: logistic(b0),
                    beta0: b0,
                    beta1: b1 / h,
                    iterations: iter + 1,
                    status: FitStatus::Clipped,
                });
            }
        } else {
            at_bound = 0;
        }
    }
    Ok(fallback(MAX_NEWTON_ITERS))
}

/// A shingle's log-probability curve over the evaluation years, floored at `log ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShingleCurve {
    pub log_pi: Box<[f64]>,
    pub ll_fallbacks: u32,
    pub clipped: u32,
}

/// Log-prevalence of one document over the evaluation years.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceCurve {
    pub years: Vec<i32>,
    pub log_values: Vec<f64>,
    pub argmax_year: i32,
    pub tied: bool,
    /// Shingle occurrences (or distinct shingles) that contributed.
    pub known: usize,
    /// Shingle occurrences (or distinct shingles) never seen in training.
    pub unknown: usize,
    pub ll_fallbacks: u32,
    pub clipped: u32,
}

/// Shingle probability curves for one training index and kernel.
#[derive(Debug)]
pub struct ShingleCurveModel {
    index: Arc<ShingleIndex>,
    config: PrevalenceConfig,
    eval_years: Vec<i32>,
    train_years: Vec<i32>,
    train_slots: Vec<f64>,
    /// `weights[e][y]`: kernel weight of training year `y` at evaluation year `e`,
    /// divided by the largest weight at `e`.
    weights: Vec<Vec<f64>>,
    denominators: Vec<f64>,
    epsilon: f64,
    median_year: f64,
    cache: Vec<OnceLock<Arc<ShingleCurve>>>,
}

impl ShingleCurveModel {
    pub fn new(index: Arc<ShingleIndex>, config: PrevalenceConfig) -> Result<Self> {
        config.validate()?;
        let (lo, hi) = config.eval_years.unwrap_or_else(|| index.year_range());
        let eval_years: Vec<i32> = (lo..=hi).collect();
        let train_years: Vec<i32> = index.slots_per_year().keys().copied().collect();
        let train_slots: Vec<f64> = index.slots_per_year().values().map(|&s| s as f64).collect();
        let weights: Vec<Vec<f64>> = eval_years
            .iter()
            .map(|&t| normalized_weights(&config.kernel, &train_years, t))
            .collect();
        let denominators = weights
            .iter()
            .map(|w| w.iter().zip(&train_slots).map(|(a, b)| a * b).sum())
            .collect();
        let epsilon = config
            .epsilon
            .unwrap_or_else(|| 1.0 / (2.0 * index.total_slots() as f64));
        let years: Vec<f64> = index.doc_years().iter().map(|&y| f64::from(y)).collect();
        let median_year = median(&years).ok_or(Error::EmptyCorpus)?;
        let cache = (0..index.n_shingles()).map(|_| OnceLock::new()).collect();
        Ok(ShingleCurveModel {
            index,
            config,
            eval_years,
            train_years,
            train_slots,
            weights,
            denominators,
            epsilon,
            median_year,
            cache,
        })
    }

    pub fn index(&self) -> &Arc<ShingleIndex> {
        &self.index
    }

    pub fn config(&self) -> &PrevalenceConfig {
        &self.config
    }

    pub fn eval_years(&self) -> &[i32] {
        &self.eval_years
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn median_year(&self) -> f64 {
        self.median_year
    }

    fn weights_at(&self, t: i32) -> std::borrow::Cow<'_, [f64]> {
        match self.eval_years.binary_search(&t) {
            Ok(e) => std::borrow::Cow::Borrowed(&self.weights[e]),
            Err(_) => std::borrow::Cow::Owned(normalized_weights(&self.config.kernel, &self.train_years, t)),
        }
    }

    fn observations(&self, id: Option<ShingleId>, t: i32) -> Vec<LocalObs> {
        let w = self.weights_at(t);
        let counts = id.map(|id| self.index.year_counts_by_id(id)).unwrap_or(&[]);
        let mut c = counts.iter().peekable();
        self.train_years
            .iter()
            .zip(&self.train_slots)
            .zip(w.iter())
            .map(|((&y, &slots), &weight)| {
                let count = match c.peek() {
                    Some(&&(cy, n)) if cy == y => {
                        c.next();
                        n as f64
                    }
                    _ => 0.0,
                };
                LocalObs {
                    offset: f64::from(y - t),
                    count,
                    slots,
                    weight,
                }
            })
            .collect()
    }

    /// Locally constant estimate `Σ_i n_s(D_i) K(t_i - t) / Σ_i N(D_i) K(t_i - t)`.
    pub fn pi_hat_nw(&self, s: &Shingle, t: i32) -> Result<f64> {
        if s.k() != self.index.k() {
            return Err(Error::invalid(format!("shingle of size {} on a k={} index", s.k(), self.index.k())));
        }
        weighted_proportion(&self.observations(self.index.shingle_id(s), t))
    }

    /// Locally linear (logistic) estimate at `t`.
    pub fn pi_hat_ll(&self, s: &Shingle, t: i32) -> Result<LocalFit> {
        if s.k() != self.index.k() {
            return Err(Error::invalid(format!("shingle of size {} on a k={} index", s.k(), self.index.k())));
        }
        local_linear_fit(&self.observations(self.index.shingle_id(s), t), self.config.kernel.bandwidth)
    }

    fn compute_curve(&self, id: ShingleId) -> ShingleCurve {
        let log_eps = self.epsilon.ln();
        let counts = self.index.year_counts_by_id(id);
        let mut out = ShingleCurve {
            log_pi: vec![log_eps; self.eval_years.len()].into_boxed_slice(),
            ll_fallbacks: 0,
            clipped: 0,
        };
        match self.config.degree {
            Degree::Constant => {
                let pos: Vec<(usize, f64)> = counts
                    .iter()
                    .map(|&(y, n)| (self.train_years.binary_search(&y).expect("indexed year"), n as f64))
                    .collect();
                for (e, w) in self.weights.iter().enumerate() {
                    let num: f64 = pos.iter().map(|&(i, n)| n * w[i]).sum();
                    let pi = num / self.denominators[e];
                    out.log_pi[e] = pi.ln().max(log_eps);
                }
            }
            Degree::Linear => {
                for (e, &t) in self.eval_years.iter().enumerate() {
                    let obs = self.observations(Some(id), t);
                    let Ok(fit) = local_linear_fit(&obs, self.config.kernel.bandwidth) else {
                        continue;
                    };
                    match fit.status {
                        FitStatus::Converged => {}
                        FitStatus::Clipped => out.clipped += 1,
                        FitStatus::Fallback => out.ll_fallbacks += 1,
                    }
                    out.log_pi[e] = fit.pi.ln().max(log_eps);
                }
            }
        }
        out
    }

    /// Cached `log π̂_s(t)` over the evaluation years, floored.
    pub fn shingle_curve(&self, id: ShingleId) -> Arc<ShingleCurve> {
        self.cache[id as usize]
            .get_or_init(|| Arc::new(self.compute_curve(id)))
            .clone()
    }

    /// `log π̂_D(t) = Σ_{s ∈ D} log π̂_s(t)`; unknown shingles are skipped.
    pub fn prevalence_curve(&self, doc: &Document) -> Result<PrevalenceCurve> {
        let k = self.index.k();
        if doc.len() < k {
            return Err(Error::NoShingles { id: doc.id.clone(), k });
        }
        let mut ids = self.index.shingle_ids_of(doc);
        if self.config.distinct {
            let mut seen = HashSet::new();
            let mut unknown_seen = HashSet::new();
            let windows: Vec<&[String]> = doc.tokens.windows(k).collect();
            ids = ids
                .into_iter()
                .zip(windows)
                .filter(|(id, w)| match id {
                    Some(id) => seen.insert(*id),
                    None => unknown_seen.insert(*w),
                })
                .map(|(id, _)| id)
                .collect();
        }
        let mut log_values = vec![0.0; self.eval_years.len()];
        let (mut known, mut unknown, mut fallbacks, mut clipped) = (0, 0, 0, 0);
        for id in ids {
            let Some(id) = id else {
                unknown += 1;
                continue;
            };
            known += 1;
            let curve = self.shingle_curve(id);
            fallbacks += curve.ll_fallbacks;
            clipped += curve.clipped;
            for (acc, v) in log_values.iter_mut().zip(curve.log_pi.iter()) {
                *acc += v;
            }
        }
        if known == 0 {
            return Err(Error::undatable(&doc.id, "no shingle of the document occurs in training"));
        }
        let (i, tied) = pick_year(&self.eval_years, &log_values, self.median_year, true)
            .ok_or_else(|| Error::Numerical("prevalence curve has no finite value".into()))?;
        Ok(PrevalenceCurve {
            argmax_year: self.eval_years[i],
            years: self.eval_years.clone(),
            log_values,
            tied,
            known,
            unknown,
            ll_fallbacks: fallbacks,
            clipped,
        })
    }

    /// The year maximizing the prevalence curve.
    pub fn mp_date(&self, doc: &Document) -> Result<DateEstimate> {
        let curve = self.prevalence_curve(doc)?;
        let distinct = self.index.count_vector_of(doc).0.len();
        let mut est = DateEstimate::new(f64::from(curve.argmax_year), "mp");
        let flags = &mut est.diagnostics.flags;
        if curve.tied {
            flags.push(Flag::Tie);
        }
        if distinct < LOW_CONFIDENCE_SHINGLES {
            flags.push(Flag::LowConfidence { shingles: distinct });
        }
        if curve.unknown > 0 {
            flags.push(Flag::UnknownShingles(curve.unknown));
        }
        if curve.ll_fallbacks > 0 {
            flags.push(Flag::LocalLinearFallback(curve.ll_fallbacks as usize));
        }
        if curve.clipped > 0 {
            flags.push(Flag::ClippedLogit(curve.clipped as usize));
        }
        est.diagnostics.params.push(("h".into(), self.config.kernel.bandwidth));
        est.diagnostics.curve = Some(curve.years.iter().copied().zip(curve.log_values.iter().copied()).collect());
        Ok(est)
    }

    /// `Σ_{s ∉ D} log(1 - π̂_s(t))` over every training shingle absent from `doc`.
    pub fn complement_diagnostic(&self, doc: &Document) -> Vec<(i32, f64)> {
        let present: HashSet<ShingleId> = self.index.count_vector_of(doc).0.into_iter().map(|(id, _)| id).collect();
        let mut sums = vec![0.0; self.eval_years.len()];
        for id in 0..self.index.n_shingles() as ShingleId {
            if present.contains(&id) {
                continue;
            }
            let curve = self.shingle_curve(id);
            for (acc, &lp) in sums.iter_mut().zip(curve.log_pi.iter()) {
                *acc += (-lp.exp()).ln_1p();
            }
        }
        self.eval_years.iter().copied().zip(sums).collect()
    }
}

fn normalized_weights(kernel: &KernelSpec, years: &[i32], t: i32) -> Vec<f64> {
    let lw: Vec<f64> = years.iter().map(|&y| kernel.log_shape(f64::from(y - t))).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lw.iter().map(|v| (v - max).exp()).collect()
}

/// Writes `year,log_prevalence` rows.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &PrevalenceCurve) -> Result<()> {
    writeln!(w, "year,log_prevalence")?;
    for (y, v) in curve.years.iter().zip(&curve.log_values) {
        writeln!(w, "{y},{v}")?;
    }
    Ok(())
}
