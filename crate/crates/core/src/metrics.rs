//! Similarity and distance measures between documents.
//!
//! For count vectors `p`, `q` over the union of two documents' shingles:
//!
//! * `sim_gamma = Σ p^γ q^γ / (sqrt(Σ p^2γ) sqrt(Σ q^2γ))` (cosine when γ = 1)
//! * `sim_alpha = Σ p^α q^α / Σ (p^2α + q^2α − p^α q^α)`, with `dist_alpha = 1 − sim_alpha`
//!   a proper metric
//! * Broder resemblance `|S1 ∩ S2| / |S1 ∪ S2|` over distinct shingle sets.
//!
//! The free functions evaluate these directly. [`DistanceEngine`] computes whole
//! rows of distances against a training corpus through the inverted index, using
//! the fact that every measure above only needs one shared dot product plus the
//! two self norms.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::corpus::{distinct_shingles, Document, Shingle, ShingleId, ShingleIndex};
use crate::error::{Error, Result};

/// Counts above this are raised to powers in log space.
const LOG_SPACE_THRESHOLD: f64 = 1e3;

/// How shingle counts enter a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMode {
    Raw,
    Normalized,
    Incidence,
}

/// A sparse vector over shingles.
#[derive(Debug, Clone, PartialEq)]
pub struct CountVector {
    entries: BTreeMap<Shingle, f64>,
    mode: VectorMode,
}

impl CountVector {
    /// Builds a vector, checking the mode's invariants. Zero entries are dropped.
    pub fn from_entries(entries: impl IntoIterator<Item = (Shingle, f64)>, mode: VectorMode) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (s, v) in entries {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("entry for {s} must be nonnegative, got {v}")));
            }
            match mode {
                VectorMode::Raw if v.fract() != 0.0 => {
                    return Err(Error::invalid(format!("raw count for {s} must be an integer, got {v}")))
                }
                VectorMode::Incidence if v != 0.0 && v != 1.0 => {
                    return Err(Error::invalid(format!("incidence entry for {s} must be 0 or 1, got {v}")))
                }
                _ => {}
            }
            if v > 0.0 {
                *map.entry(s).or_insert(0.0) += v;
            }
        }
        if mode == VectorMode::Normalized && !map.is_empty() {
            let sum: f64 = map.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("normalized vector sums to {sum}, not 1")));
            }
        }
        Ok(CountVector { entries: map, mode })
    }

    /// Vector of positional values, keyed by coordinate index. Handy for small examples.
    pub fn from_values(values: &[f64], mode: VectorMode) -> Result<Self> {
        Self::from_entries(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (Shingle(vec![format!("c{i}")]), v)),
            mode,
        )
    }

    /// The k-shingle vector of a document.
    pub fn from_document(doc: &Document, k: usize, mode: VectorMode) -> Self {
        let mut counts: BTreeMap<Shingle, f64> = BTreeMap::new();
        for w in doc.tokens.windows(k) {
            *counts.entry(Shingle(w.to_vec())).or_insert(0.0) += 1.0;
        }
        let total: f64 = counts.values().sum();
        for v in counts.values_mut() {
            *v = match mode {
                VectorMode::Raw => *v,
                VectorMode::Normalized => *v / total,
                VectorMode::Incidence => 1.0,
            };
        }
        CountVector { entries: counts, mode }
    }

    pub fn mode(&self) -> VectorMode {
        self.mode
    }

    pub fn get(&self, s: &Shingle) -> f64 {
        self.entries.get(s).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> &BTreeMap<Shingle, f64> {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    fn max_entry(&self) -> f64 {
        self.entries.values().copied().fold(0.0, f64::max)
    }
}

/// `v^e` for nonnegative `v`, computed as `exp(e (ln v − ln_ref))` when `ln_ref` is set.
#[inline]
fn power(v: f64, e: f64, ln_ref: Option<f64>) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    match ln_ref {
        Some(r) => (e * (v.ln() - r)).exp(),
        None if e == 1.0 => v,
        None => v.powf(e),
    }
}

fn shared_reference(p: &CountVector, q: &CountVector) -> Option<f64> {
    let m = p.max_entry().max(q.max_entry());
    (m > LOG_SPACE_THRESHOLD).then(|| m.ln())
}

/// Pairs of powered coordinates over the union vocabulary, in shingle order.
fn powered_pairs(p: &CountVector, q: &CountVector, e: f64) -> Vec<(f64, f64)> {
    let r = shared_reference(p, q);
    let mut out = Vec::with_capacity(p.entries.len() + q.entries.len());
    let mut a = p.entries.iter().peekable();
    let mut b = q.entries.iter().peekable();
    loop {
        let next = match (a.peek(), b.peek()) {
            (None, None) => break,
            (Some(_), None) => {
                let (_, &x) = a.next().unwrap();
                (x, 0.0)
            }
            (None, Some(_)) => {
                let (_, &y) = b.next().unwrap();
                (0.0, y)
            }
            (Some((ka, _)), Some((kb, _))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => (*a.next().unwrap().1, 0.0),
                std::cmp::Ordering::Greater => (0.0, *b.next().unwrap().1),
                std::cmp::Ordering::Equal => (*a.next().unwrap().1, *b.next().unwrap().1),
            },
        };
        out.push((power(next.0, e, r), power(next.1, e, r)));
    }
    out
}

fn check_exponent(e: f64) -> Result<()> {
    if e.is_finite() && e > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("exponent must be positive, got {e}")))
    }
}

/// `Σ p^γ q^γ / (sqrt(Σ p^2γ) sqrt(Σ q^2γ))`.
pub fn sim_gamma(p: &CountVector, q: &CountVector, gamma: f64) -> Result<f64> {
    check_exponent(gamma)?;
    let pairs = powered_pairs(p, q, gamma);
    let (mut dot, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        dot += x * y;
        pp += x * x;
        qq += y * y;
    }
    if pp == 0.0 || qq == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (pp.sqrt() * qq.sqrt())).min(1.0))
}

/// `Σ p^α q^α / Σ (p^2α + q^2α − p^α q^α)`.
pub fn sim_alpha(p: &CountVector, q: &CountVector, alpha: f64) -> Result<f64> {
    check_exponent(alpha)?;
    let pairs = powered_pairs(p, q, alpha);
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, y) in &pairs {
        let xy = x * y;
        num += xy;
        den += (x * x + y * y) - xy;
    }
    if den == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(num / den)
}

/// `1 − sim_alpha`.
///
/// Evaluated as `(Σp² + Σq² − 2Σpq) / (Σp² + Σq² − Σpq)` on the powered vectors, so
/// integer counts give a single correctly rounded quotient.
pub fn dist_alpha(p: &CountVector, q: &CountVector, alpha: f64) -> Result<f64> {
    check_exponent(alpha)?;
    let (mut dot, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for (x, y) in powered_pairs(p, q, alpha) {
        dot += x * y;
        pp += x * x;
        qq += y * y;
    }
    alpha_distance(dot, pp, qq).ok_or(Error::ZeroVector)
}

fn alpha_distance(dot: f64, pp: f64, qq: f64) -> Option<f64> {
    let den = (pp + qq) - dot;
    (den != 0.0).then(|| ((pp + qq) - 2.0 * dot).max(0.0) / den)
}

/// Broder resemblance of the distinct k-shingle sets of two documents.
pub fn broder_resemblance(d1: &Document, d2: &Document, k: usize) -> Result<f64> {
    let (inter, union) = broder_counts(d1, d2, k)?;
    Ok(inter as f64 / union as f64)
}

/// Sizes of the intersection and union of the distinct shingle sets.
fn broder_counts(d1: &Document, d2: &Document, k: usize) -> Result<(usize, usize)> {
    if k == 0 {
        return Err(Error::invalid("shingle size k must be at least 1"));
    }
    let s1 = distinct_shingles(d1, k);
    let s2 = distinct_shingles(d2, k);
    for (d, s) in [(d1, &s1), (d2, &s2)] {
        if s.is_empty() {
            return Err(Error::NoShingles { id: d.id.clone(), k });
        }
    }
    let inter = s1.iter().filter(|s| s2.contains(*s)).count();
    let union = s1.len() + s2.len() - inter;
    Ok((inter, union))
}

/// `1 − broder_resemblance`.
pub fn broder_distance(d1: &Document, d2: &Document, k: usize) -> Result<f64> {
    let (inter, union) = broder_counts(d1, d2, k)?;
    Ok((union - inter) as f64 / union as f64)
}

/// Which similarity a distance is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SimGamma,
    SimAlpha,
    Broder,
}

/// A document distance: `1 − similarity` for the chosen family on k-shingle vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub family: Family,
    /// γ or α; ignored for Broder.
    pub exponent: f64,
    pub k: usize,
    pub mode: VectorMode,
}

impl DistanceSpec {
    /// `Dist_α` with α = 1 on raw counts.
    pub fn reference(k: usize) -> Self {
        DistanceSpec {
            family: Family::SimAlpha,
            exponent: 1.0,
            k,
            mode: VectorMode::Raw,
        }
    }

    pub fn broder(k: usize) -> Self {
        DistanceSpec {
            family: Family::Broder,
            exponent: 1.0,
            k,
            mode: VectorMode::Incidence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("shingle size k must be at least 1"));
        }
        check_exponent(self.exponent)
    }

    /// Distance between two documents, evaluated directly.
    pub fn distance(&self, d1: &Document, d2: &Document) -> Result<f64> {
        self.validate()?;
        match self.family {
            Family::Broder => broder_distance(d1, d2, self.k),
            Family::SimGamma | Family::SimAlpha => {
                let p = CountVector::from_document(d1, self.k, self.mode);
                let q = CountVector::from_document(d2, self.k, self.mode);
                for (d, v) in [(d1, &p), (d2, &q)] {
                    if v.is_zero() {
                        return Err(Error::NoShingles { id: d.id.clone(), k: self.k });
                    }
                }
                match self.family {
                    Family::SimGamma => Ok(1.0 - sim_gamma(&p, &q, self.exponent)?),
                    _ => dist_alpha(&p, &q, self.exponent),
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::SimGamma => format!("gamma{}-k{}", self.exponent, self.k),
            Family::SimAlpha => format!("alpha{}-k{}", self.exponent, self.k),
            Family::Broder => format!("broder-k{}", self.k),
        }
    }

    fn effective_mode(&self) -> VectorMode {
        match self.family {
            Family::Broder => VectorMode::Incidence,
            _ => self.mode,
        }
    }

    fn effective_exponent(&self) -> f64 {
        match self.family {
            Family::Broder => 1.0,
            _ => self.exponent,
        }
    }

    fn combine(&self, dot: f64, pp: f64, qq: f64) -> f64 {
        match self.family {
            Family::SimGamma => 1.0 - (dot / (pp.sqrt() * qq.sqrt())).min(1.0),
            Family::SimAlpha | Family::Broder => alpha_distance(dot, pp, qq).unwrap_or(f64::NAN),
        }
    }
}

/// Distances from arbitrary documents to every document of a training index.
///
/// Training-to-training rows are computed on first use and cached; the engine is
/// `Sync` and rows can be requested from many threads.
#[derive(Debug)]
pub struct DistanceEngine {
    spec: DistanceSpec,
    index: Arc<ShingleIndex>,
    /// Per shingle: (document, powered value).
    postings: Vec<Vec<(u32, f64)>>,
    /// Per training document: (shingle, powered value).
    vectors: Vec<Vec<(ShingleId, f64)>>,
    self_norms: Vec<f64>,
    ln_ref: Option<f64>,
    rows: Vec<OnceLock<Arc<[f64]>>>,
}

impl DistanceEngine {
    pub fn new(index: Arc<ShingleIndex>, spec: DistanceSpec) -> Result<Self> {
        spec.validate()?;
        if spec.k != index.k() {
            return Err(Error::invalid(format!(
                "distance uses k = {} but the index was built with k = {}",
                spec.k,
                index.k()
            )));
        }
        let n = index.n_docs();
        let mode = spec.effective_mode();
        let e = spec.effective_exponent();
        let max_count = (0..n as u32)
            .flat_map(|d| index.doc_vector(d).iter().map(|&(_, c)| c))
            .max()
            .unwrap_or(0) as f64;
        let ln_ref = (mode == VectorMode::Raw && max_count > LOG_SPACE_THRESHOLD).then(|| max_count.ln());

        let mut postings = vec![Vec::new(); index.n_shingles()];
        let mut vectors = Vec::with_capacity(n);
        let mut self_norms = Vec::with_capacity(n);
        for d in 0..n as u32 {
            let raw = index.doc_vector(d);
            let total: f64 = raw.iter().map(|&(_, c)| f64::from(c)).sum();
            let v: Vec<(ShingleId, f64)> = raw
                .iter()
                .map(|&(s, c)| (s, power(transform(f64::from(c), total, mode), e, ln_ref)))
                .collect();
            let mut norm = 0.0;
            for &(s, x) in &v {
                norm += x * x;
                postings[s as usize].push((d, x));
            }
            self_norms.push(norm);
            vectors.push(v);
        }
        Ok(DistanceEngine {
            spec,
            index,
            postings,
            vectors,
            self_norms,
            ln_ref,
            rows: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn spec(&self) -> &DistanceSpec {
        &self.spec
    }

    pub fn index(&self) -> &Arc<ShingleIndex> {
        &self.index
    }

    pub fn n_docs(&self) -> usize {
        self.vectors.len()
    }

    fn row(&self, vector: &[(ShingleId, f64)], norm: f64) -> Vec<f64> {
        let mut dots = vec![0.0; self.n_docs()];
        for &(s, x) in vector {
            for &(d, y) in &self.postings[s as usize] {
                dots[d as usize] += x * y;
            }
        }
        dots.iter()
            .zip(&self.self_norms)
            .map(|(&dot, &qq)| self.spec.combine(dot, norm, qq))
            .collect()
    }

    /// Distances from `doc` to every training document, in index order.
    pub fn distances_to(&self, doc: &Document) -> Result<Vec<f64>> {
        let (known, unknown) = self.index.count_vector_of(doc);
        let total: f64 = known.iter().map(|&(_, c)| f64::from(c)).chain(unknown.iter().map(|&c| f64::from(c))).sum();
        if total == 0.0 {
            return Err(Error::NoShingles {
                id: doc.id.clone(),
                k: self.spec.k,
            });
        }
        let mode = self.spec.effective_mode();
        let e = self.spec.effective_exponent();
        let vector: Vec<(ShingleId, f64)> = known
            .iter()
            .map(|&(s, c)| (s, power(transform(f64::from(c), total, mode), e, self.ln_ref)))
            .collect();
        let mut norm: f64 = vector.iter().map(|&(_, x)| x * x).sum();
        for &c in &unknown {
            let x = power(transform(f64::from(c), total, mode), e, self.ln_ref);
            norm += x * x;
        }
        Ok(self.row(&vector, norm))
    }

    /// Distances from training document `j` to every training document (cached).
    pub fn train_row(&self, j: u32) -> Arc<[f64]> {
        self.rows[j as usize]
            .get_or_init(|| {
                let j = j as usize;
                self.row(&self.vectors[j], self.self_norms[j]).into()
            })
            .clone()
    }
}

fn transform(count: f64, total: f64, mode: VectorMode) -> f64 {
    match mode {
        VectorMode::Raw => count,
        VectorMode::Normalized => count / total,
        VectorMode::Incidence => 1.0,
    }
}
