//! Matching-pattern (MT) dating.
//!
//! Every substring of the target that also occurs in training is a matching pattern.
//! Each pattern is scored `MT = M1(length) · M2(lifetime) · M3(currency)`, scores are
//! summed per training year over the documents containing the pattern and divided
//! by that year's document count (global MT, or GMT). The date is found by averaging
//! GMT over sliding windows that shrink around the best one.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::estimate::{median, nearly_equal, pick_year, DateEstimate, Flag};

/// A monotone scoring function of one pattern statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// `c`
    Constant(f64),
    /// `a · x`
    Linear { a: f64 },
    /// `a · x^p`
    Power { a: f64, p: f64 },
    /// `a / (1 + x / s)`
    Reciprocal { a: f64, s: f64 },
    /// `a · exp(-rate · x)`
    Exponential { a: f64, rate: f64 },
}

impl Factor {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Factor::Constant(c) => c,
            Factor::Linear { a } => a * x,
            Factor::Power { a, p } => a * x.powf(p),
            Factor::Reciprocal { a, s } => a / (1.0 + x / s),
            Factor::Exponential { a, rate } => a * (-rate * x).exp(),
        }
    }

    /// Same function multiplied by `c`.
    pub fn scaled(self, c: f64) -> Self {
        match self {
            Factor::Constant(v) => Factor::Constant(v * c),
            Factor::Linear { a } => Factor::Linear { a: a * c },
            Factor::Power { a, p } => Factor::Power { a: a * c, p },
            Factor::Reciprocal { a, s } => Factor::Reciprocal { a: a * c, s },
            Factor::Exponential { a, rate } => Factor::Exponential { a: a * c, rate },
        }
    }

    /// The same shape with coefficient 1.
    fn unit(self) -> Self {
        match self {
            Factor::Constant(_) => Factor::Constant(1.0),
            Factor::Linear { .. } => Factor::Linear { a: 1.0 },
            Factor::Power { p, .. } => Factor::Power { a: 1.0, p },
            Factor::Reciprocal { s, .. } => Factor::Reciprocal { a: 1.0, s },
            Factor::Exponential { rate, .. } => Factor::Exponential { a: 1.0, rate },
        }
    }

    fn coefficient(&self) -> f64 {
        match *self {
            Factor::Constant(c) => c,
            Factor::Linear { a } | Factor::Power { a, .. } | Factor::Reciprocal { a, .. } | Factor::Exponential { a, .. } => a,
        }
    }

    fn is_nondecreasing(&self) -> bool {
        match *self {
            Factor::Constant(_) | Factor::Linear { .. } => true,
            Factor::Power { p, .. } => p >= 0.0,
            Factor::Reciprocal { .. } | Factor::Exponential { .. } => false,
        }
    }

    fn is_nonincreasing(&self) -> bool {
        match *self {
            Factor::Constant(_) => true,
            Factor::Reciprocal { s, .. } => s > 0.0,
            Factor::Exponential { rate, .. } => rate >= 0.0,
            Factor::Linear { .. } | Factor::Power { .. } => false,
        }
    }

    fn check(&self, name: &str, increasing: bool) -> Result<()> {
        let c = self.coefficient();
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::invalid(format!("{name} needs a nonnegative coefficient")));
        }
        let ok = if increasing { self.is_nondecreasing() } else { self.is_nonincreasing() };
        if !ok {
            let dir = if increasing { "nondecreasing" } else { "nonincreasing" };
            return Err(Error::invalid(format!("{name} must be {dir}, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtConfig {
    /// Score of pattern length (nondecreasing).
    pub m1: Factor,
    /// Score of lifetime in years (nonincreasing).
    pub m2: Factor,
    /// Score of currency (nonincreasing).
    pub m3: Factor,
    /// Patterns scoring below this are dropped before summation.
    pub threshold: f64,
    pub initial_window: u32,
    pub shrink_factor: f64,
    pub expand_margin: u32,
    /// Shrink rounds after the initial window.
    pub max_rounds: u32,
}

impl Default for MtConfig {
    fn default() -> Self {
        MtConfig {
            m1: Factor::Linear { a: 1.0 },
            m2: Factor::Reciprocal { a: 1.0, s: 10.0 },
            m3: Factor::Reciprocal { a: 1.0, s: 1.0 },
            threshold: 0.0,
            initial_window: 40,
            shrink_factor: 0.5,
            expand_margin: 10,
            max_rounds: 6,
        }
    }
}

impl MtConfig {
    pub fn validate(&self) -> Result<()> {
        self.m1.check("M1", true)?;
        self.m2.check("M2", false)?;
        self.m3.check("M3", false)?;
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::invalid("MT threshold must be nonnegative"));
        }
        if self.initial_window == 0 {
            return Err(Error::invalid("initial window must be at least one year"));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::invalid(format!("shrink factor must lie in (0, 1), got {}", self.shrink_factor)));
        }
        Ok(())
    }
}

/// A target substring found in training, with its corpus statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingPattern {
    pub words: Vec<String>,
    pub first_year: i32,
    pub last_year: i32,
    pub distinct_years: u32,
    /// Training documents containing the pattern, per year.
    pub docs_per_year: Vec<(i32, u32)>,
}

impl MatchingPattern {
    pub fn length(&self) -> usize {
        self.words.len()
    }

    pub fn lifetime(&self) -> u32 {
        (self.last_year - self.first_year) as u32
    }

    /// Lifetime divided by the number of distinct years.
    pub fn currency(&self) -> f64 {
        f64::from(self.lifetime()) / f64::from(self.distinct_years)
    }
}

pub fn mt_value(p: &MatchingPattern, config: &MtConfig) -> f64 {
    config.m1.eval(p.length() as f64) * config.m2.eval(f64::from(p.lifetime())) * config.m3.eval(p.currency())
}

const SEPARATOR: u32 = u32::MAX;

/// Generalized suffix array over the concatenated training token streams.
#[derive(Debug)]
pub struct MtIndex {
    vocab: HashMap<String, u32>,
    text: Vec<u32>,
    sa: Vec<u32>,
    /// Document of each text position (separators map to the preceding document).
    doc_of: Vec<u32>,
    doc_years: Vec<i32>,
    docs_per_year: BTreeMap<i32, u32>,
    median_year: f64,
}

impl MtIndex {
    pub fn build(train: &[Document]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut vocab = HashMap::new();
        let mut text = Vec::new();
        let mut doc_of = Vec::new();
        let mut doc_years = Vec::with_capacity(train.len());
        let mut docs_per_year = BTreeMap::new();
        let mut seen = HashSet::new();
        for (d, doc) in train.iter().enumerate() {
            let year = doc.year_or_err()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if doc.is_empty() {
                return Err(Error::EmptyDocument { id: doc.id.clone() });
            }
            doc_years.push(year);
            *docs_per_year.entry(year).or_insert(0) += 1;
            for tok in &doc.tokens {
                let next = vocab.len() as u32;
                text.push(*vocab.entry(tok.clone()).or_insert(next));
                doc_of.push(d as u32);
            }
            text.push(SEPARATOR);
            doc_of.push(d as u32);
        }
        let years: Vec<f64> = doc_years.iter().map(|&y| f64::from(y)).collect();
        let median_year = median(&years).expect("nonempty");
        let sa = suffix_array(&text);
        Ok(MtIndex {
            vocab,
            text,
            sa,
            doc_of,
            doc_years,
            docs_per_year,
            median_year,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_years.len()
    }

    pub fn docs_per_year(&self) -> &BTreeMap<i32, u32> {
        &self.docs_per_year
    }

    pub fn median_year(&self) -> f64 {
        self.median_year
    }

    fn token_at(&self, pos: usize) -> Option<u32> {
        self.text.get(pos).copied()
    }

    /// Every distinct substring of `target` occurring in training, with statistics.
    pub fn find_matching_patterns(&self, target: &Document) -> Vec<MatchingPattern> {
        let ids: Vec<Option<u32>> = target.tokens.iter().map(|t| self.vocab.get(t).copied()).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for start in 0..ids.len() {
            let (mut lo, mut hi) = (0, self.sa.len());
            for len in 1..=ids.len() - start {
                let Some(tok) = ids[start + len - 1] else {
                    break;
                };
                (lo, hi) = self.narrow(lo, hi, len - 1, tok);
                if lo >= hi {
                    break;
                }
                if !seen.insert((lo, len)) {
                    continue;
                }
                out.push(self.pattern_stats(&target.tokens[start..start + len], lo, hi));
            }
        }
        out
    }

    /// Narrows the suffix range `[lo, hi)`, whose members share a prefix of length
    /// `depth`, to suffixes whose next token is `tok`.
    fn narrow(&self, lo: usize, hi: usize, depth: usize, tok: u32) -> (usize, usize) {
        let slice = &self.sa[lo..hi];
        let key = |&p: &u32| self.token_at(p as usize + depth);
        let start = slice.partition_point(|p| key(p) < Some(tok));
        let end = slice.partition_point(|p| key(p) <= Some(tok));
        (lo + start, lo + end)
    }

    fn pattern_stats(&self, words: &[String], lo: usize, hi: usize) -> MatchingPattern {
        let mut docs: Vec<u32> = self.sa[lo..hi].iter().map(|&p| self.doc_of[p as usize]).collect();
        docs.sort_unstable();
        docs.dedup();
        let mut per_year: BTreeMap<i32, u32> = BTreeMap::new();
        for d in docs {
            *per_year.entry(self.doc_years[d as usize]).or_insert(0) += 1;
        }
        let first_year = *per_year.keys().next().expect("pattern occurs");
        let last_year = *per_year.keys().next_back().expect("pattern occurs");
        MatchingPattern {
            words: words.to_vec(),
            first_year,
            last_year,
            distinct_years: per_year.len() as u32,
            docs_per_year: per_year.into_iter().collect(),
        }
    }

    /// GMT per training year: `Σ_p MT(p) · docs(p, y) / docs(y)` over patterns at or
    /// above the threshold.
    pub fn gmt_curve(&self, target: &Document, config: &MtConfig) -> Result<Vec<(i32, f64)>> {
        let (scale, unit) = self.unit_gmt(target, config)?;
        Ok(unit.into_iter().map(|(y, g)| (y, g * scale)).collect())
    }

    /// The GMT curve with coefficient-1 factors and the product of the coefficients.
    /// Dating ranks the unit curve so rescaling the factors cannot move the estimate.
    fn unit_gmt(&self, target: &Document, config: &MtConfig) -> Result<(f64, Vec<(i32, f64)>)> {
        config.validate()?;
        if self.docs_per_year.len() < 2 {
            return Err(Error::TooFewDocuments {
                needed: 2,
                got: self.docs_per_year.len(),
            });
        }
        let scale = config.m1.coefficient() * config.m2.coefficient() * config.m3.coefficient();
        let unit = MtConfig {
            m1: config.m1.unit(),
            m2: config.m2.unit(),
            m3: config.m3.unit(),
            ..config.clone()
        };
        let mut sums: BTreeMap<i32, f64> = self.docs_per_year.keys().map(|&y| (y, 0.0)).collect();
        let mut used = 0;
        for p in self.find_matching_patterns(target) {
            let mt = mt_value(&p, &unit);
            if mt * scale < config.threshold || mt * scale == 0.0 {
                continue;
            }
            used += 1;
            for &(y, n) in &p.docs_per_year {
                *sums.get_mut(&y).expect("training year") += mt * f64::from(n);
            }
        }
        if used == 0 {
            return Err(Error::undatable(&target.id, "no matching pattern reaches the MT threshold"));
        }
        let curve = sums
            .into_iter()
            .map(|(y, s)| (y, s / f64::from(self.docs_per_year[&y])))
            .collect();
        Ok((scale, curve))
    }

    pub fn mt_date(&self, target: &Document, config: &MtConfig) -> Result<DateEstimate> {
        let (scale, unit) = self.unit_gmt(target, config)?;
        let (year_hat, tied) = refine(&unit, config, self.median_year);
        let mut est = DateEstimate::new(year_hat, "mt");
        if tied {
            est.diagnostics.flags.push(Flag::Tie);
        }
        est.diagnostics.curve = Some(unit.into_iter().map(|(y, g)| (y, g * scale)).collect());
        Ok(est)
    }
}

/// Shrinking-window search over a GMT curve (defined only at its listed years).
/// Returns the midpoint of the final window and whether any round had a tie.
pub fn refine(curve: &[(i32, f64)], config: &MtConfig, anchor: f64) -> (f64, bool) {
    let values: BTreeMap<i32, f64> = curve.iter().copied().collect();
    let years: Vec<i32> = curve.iter().map(|p| p.0).collect();
    let gmt: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let (peak, _) = pick_year(&years, &gmt, anchor, true).expect("nonempty curve");
    let peak = f64::from(years[peak]);
    let (data_lo, data_hi) = (years[0], *years.last().expect("nonempty"));

    let mut lo = data_lo;
    let mut hi = data_hi;
    let mut width = config.initial_window as i32;
    let mut any_tie = false;
    let mut round = 0;
    loop {
        let w = width.min(hi - lo + 1);
        let mut best: Option<(i32, f64)> = None;
        let mut tied = false;
        for a in lo..=hi - w + 1 {
            let inside: Vec<f64> = values.range(a..a + w).map(|(_, v)| *v).collect();
            if inside.is_empty() {
                continue;
            }
            let avg = inside.iter().sum::<f64>() / inside.len() as f64;
            let center = f64::from(a) + f64::from(w - 1) / 2.0;
            match best {
                None => best = Some((a, avg)),
                Some((b, bavg)) if nearly_equal(avg, bavg) => {
                    tied = true;
                    let bc = f64::from(b) + f64::from(w - 1) / 2.0;
                    if (center - peak).abs() < (bc - peak).abs() {
                        best = Some((a, avg.max(bavg)));
                    }
                }
                Some((_, bavg)) if avg > bavg => {
                    tied = false;
                    best = Some((a, avg));
                }
                _ => {}
            }
        }
        let (a, _) = best.expect("window range covers a curve year");
        any_tie |= tied;
        if w <= 1 || round >= config.max_rounds {
            return (f64::from(a) + f64::from(w - 1) / 2.0, any_tie);
        }
        let margin = config.expand_margin as i32;
        lo = (a - margin).max(data_lo);
        hi = (a + w - 1 + margin).min(data_hi);
        width = ((f64::from(w) * config.shrink_factor).round() as i32).max(1);
        round += 1;
    }
}

/// Suffix array by prefix doubling.
fn suffix_array(text: &[u32]) -> Vec<u32> {
    let n = text.len();
    let mut sa: Vec<u32> = (0..n as u32).collect();
    let mut rank: Vec<i64> = text.iter().map(|&t| i64::from(t)).collect();
    let mut tmp = vec![0i64; n];
    let mut k = 1;
    loop {
        let key = |i: u32| {
            let i = i as usize;
            (rank[i], if i + k < n { rank[i + k] } else { -1 })
        };
        sa.sort_unstable_by_key(|&i| key(i));
        tmp[sa[0] as usize] = 0;
        for w in 1..n {
            let bump = i64::from(key(sa[w - 1]) < key(sa[w]));
            tmp[sa[w] as usize] = tmp[sa[w - 1] as usize] + bump;
        }
        std::mem::swap(&mut rank, &mut tmp);
        if n == 0 || rank[sa[n - 1] as usize] as usize == n - 1 || k >= n {
            break;
        }
        k *= 2;
    }
    sa
}

/// Writes `year,gmt` rows.
pub fn write_gmt_csv<W: Write>(mut w: W, curve: &[(i32, f64)]) -> Result<()> {
    writeln!(w, "year,gmt")?;
    for (y, g) in curve {
        writeln!(w, "{y},{g}")?;
    }
    Ok(())
}
