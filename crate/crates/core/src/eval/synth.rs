//! Synthetic corpora: documents whose tokens are i.i.d. draws from a year-dependent
//! distribution over a fixed vocabulary.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};

use super::parse_key_values;
use crate::corpus::Document;
use crate::error::{Error, Result};

/// Time profile multiplying a word's base weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Constant,
    /// Logistic rise centered at `center`.
    RampIn { center: f64, width: f64 },
    /// Logistic decline centered at `center`.
    RampOut { center: f64, width: f64 },
    /// In use between `start` and `end`; hard edges when `edge` is 0.
    Window { start: f64, end: f64, edge: f64 },
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Trajectory::Constant => 1.0,
            Trajectory::RampIn { center, width } => logistic((t - center) / width),
            Trajectory::RampOut { center, width } => logistic((center - t) / width),
            Trajectory::Window { start, end, edge } => {
                if edge == 0.0 {
                    f64::from(u8::from(t >= start && t <= end))
                } else {
                    logistic((t - start) / edge) * logistic((end - t) / edge)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWord {
    pub token: String,
    pub weight: f64,
    /// Multiplied together.
    pub factors: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DateDistribution {
    Uniform,
    /// Normal rounded to whole years, redrawn until inside the year range.
    TruncatedNormal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthDistribution {
    Fixed(usize),
    /// Lognormal rounded and clamped to `[min, max]`.
    LogNormal { mu: f64, sigma: f64, min: usize, max: usize },
}

/// Year range, date distribution, length distribution and per-year token
/// probabilities `π_s(t)` (each year sums to one).
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    words: Vec<SyntheticWord>,
    years: (i32, i32),
    dates: DateDistribution,
    lengths: LengthDistribution,
    probs: Vec<Vec<f64>>,
}

impl SyntheticModel {
    /// Normalizes the trajectories per year and checks that no two years share a
    /// distribution (otherwise dates would not be identifiable).
    pub fn new(
        words: Vec<SyntheticWord>,
        years: (i32, i32),
        dates: DateDistribution,
        lengths: LengthDistribution,
    ) -> Result<Self> {
        let (lo, hi) = years;
        if lo > hi {
            return Err(Error::invalid(format!("empty year range {lo}..{hi}")));
        }
        if words.is_empty() {
            return Err(Error::invalid("synthetic vocabulary is empty"));
        }
        if words.iter().any(|w| !(w.weight.is_finite() && w.weight >= 0.0)) {
            return Err(Error::invalid("word weights must be finite and nonnegative"));
        }
        match lengths {
            LengthDistribution::Fixed(0) => return Err(Error::invalid("document length must be positive")),
            LengthDistribution::LogNormal { sigma, min, max, .. } if sigma < 0.0 || min == 0 || min > max => {
                return Err(Error::invalid("bad lognormal length distribution"))
            }
            _ => {}
        }
        if let DateDistribution::TruncatedNormal { mean, sd } = dates {
            if !(sd > 0.0) || !mean.is_finite() {
                return Err(Error::invalid("bad truncated normal date distribution"));
            }
        }
        let mut probs = Vec::with_capacity((hi - lo + 1) as usize);
        for t in lo..=hi {
            let u: Vec<f64> = words
                .iter()
                .map(|w| w.weight * w.factors.iter().map(|f| f.eval(f64::from(t))).product::<f64>())
                .collect();
            let total: f64 = u.iter().sum();
            if !(total > 0.0) {
                return Err(Error::invalid(format!("no vocabulary mass in year {t}")));
            }
            probs.push(u.into_iter().map(|x| x / total).collect::<Vec<f64>>());
        }
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| {
            probs[a]
                .iter()
                .zip(&probs[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if let Some(w) = order.windows(2).find(|w| probs[w[0]] == probs[w[1]]) {
            let (a, b) = (lo + w[0] as i32, lo + w[1] as i32);
            return Err(Error::invalid(format!(
                "years {} and {} have identical token distributions",
                a.min(b),
                a.max(b)
            )));
        }
        Ok(SyntheticModel {
            words,
            years,
            dates,
            lengths,
            probs,
        })
    }

    /// Two vocabularies: `a*` words before `split_year`, `b*` words from it on.
    ///
    /// In each regime every fourth word is a frequent constant word. The others are
    /// rarer and ramp in or out, with centers staggered across the regime, so every
    /// year has its own distribution.
    pub fn two_regime(vocab_per_regime: usize, years: (i32, i32), split_year: i32) -> Result<Self> {
        let (lo, hi) = years;
        if !(lo < split_year && split_year <= hi) || vocab_per_regime < 2 {
            return Err(Error::invalid("two-regime model needs both regimes nonempty and 2+ words each"));
        }
        let mut words = Vec::with_capacity(2 * vocab_per_regime);
        for (prefix, start, end) in [("a", lo, split_year - 1), ("b", split_year, hi)] {
            let (s, e) = (f64::from(start), f64::from(end));
            let span = (e - s).max(1.0);
            let width = (span / 10.0).max(1.0);
            let n_drift = vocab_per_regime - vocab_per_regime.div_ceil(4);
            let mut j = 0;
            for i in 0..vocab_per_regime {
                let window = Trajectory::Window { start: s, end: e, edge: 0.0 };
                let (weight, factors) = if i % 4 == 0 && i + 1 < vocab_per_regime {
                    (4.0, vec![window])
                } else {
                    let center = s + span * (j / 2 + 1) as f64 / (n_drift.div_ceil(2) + 1) as f64;
                    let drift = if j % 2 == 0 {
                        Trajectory::RampIn { center, width }
                    } else {
                        Trajectory::RampOut { center, width }
                    };
                    j += 1;
                    (1.0, vec![window, drift])
                };
                words.push(SyntheticWord {
                    token: format!("{prefix}{i}"),
                    weight,
                    factors,
                });
            }
        }
        SyntheticModel::new(words, years, DateDistribution::Uniform, LengthDistribution::Fixed(200))
    }

    /// A mix of constant, ramping and windowed words with seeded random placement.
    pub fn smooth(vocab: usize, years: (i32, i32), seed: u64) -> Result<Self> {
        let (lo, hi) = years;
        let span = f64::from(hi - lo).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..vocab)
            .map(|i| {
                let c = f64::from(lo) + rng.random::<f64>() * span;
                let factors = match i % 4 {
                    0 => vec![Trajectory::Constant],
                    1 => vec![Trajectory::RampIn {
                        center: c,
                        width: span * (0.03 + 0.1 * rng.random::<f64>()),
                    }],
                    2 => vec![Trajectory::RampOut {
                        center: c,
                        width: span * (0.03 + 0.1 * rng.random::<f64>()),
                    }],
                    _ => {
                        let len = span * (0.1 + 0.3 * rng.random::<f64>());
                        vec![Trajectory::Window {
                            start: c - len / 2.0,
                            end: c + len / 2.0,
                            edge: span * 0.02,
                        }]
                    }
                };
                SyntheticWord {
                    token: format!("w{i}"),
                    weight: 1.0 / (1.0 + i as f64 / 20.0),
                    factors,
                }
            })
            .collect();
        SyntheticModel::new(words, years, DateDistribution::Uniform, LengthDistribution::Fixed(200))
    }

    /// Smooth vocabulary over 1089–1438 with dates ~ N(1237, 46) truncated to that
    /// range and lognormal lengths with median 202 and mean 237.
    pub fn deeds(vocab: usize, seed: u64) -> Result<Self> {
        let base = SyntheticModel::smooth(vocab, (1089, 1438), seed)?;
        Ok(base
            .with_dates(DateDistribution::TruncatedNormal { mean: 1237.0, sd: 46.0 })
            .with_lengths(deeds_lengths()))
    }

    pub fn with_dates(self, dates: DateDistribution) -> Self {
        SyntheticModel { dates, ..self }
    }

    pub fn with_lengths(self, lengths: LengthDistribution) -> Self {
        SyntheticModel { lengths, ..self }
    }

    pub fn years(&self) -> (i32, i32) {
        self.years
    }

    pub fn words(&self) -> &[SyntheticWord] {
        &self.words
    }

    pub fn dates(&self) -> DateDistribution {
        self.dates
    }

    pub fn lengths(&self) -> LengthDistribution {
        self.lengths
    }

    /// `π_s(t)` for every word, in vocabulary order.
    pub fn probabilities(&self, year: i32) -> Option<&[f64]> {
        let (lo, hi) = self.years;
        (lo..=hi).contains(&year).then(|| self.probs[(year - lo) as usize].as_slice())
    }
}

/// Lognormal with median 202 and mean 237.
fn deeds_lengths() -> LengthDistribution {
    let mu = 202f64.ln();
    LengthDistribution::LogNormal {
        mu,
        sigma: (2.0 * (237f64.ln() - mu)).sqrt(),
        min: 5,
        max: 2000,
    }
}

/// Draws `n` dated documents, ids `syn000000`, `syn000001`, ...
pub fn generate_corpus(model: &SyntheticModel, n: usize, seed: u64) -> Result<Vec<Document>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = model.years;
    let mut samplers: BTreeMap<i32, WeightedIndex<f64>> = BTreeMap::new();
    let normal = match model.dates {
        DateDistribution::TruncatedNormal { mean, sd } => Some(Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?),
        DateDistribution::Uniform => None,
    };
    let lognormal = match model.lengths {
        LengthDistribution::LogNormal { mu, sigma, .. } => Some(LogNormal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?),
        LengthDistribution::Fixed(_) => None,
    };
    let mut docs = Vec::with_capacity(n);
    for i in 0..n {
        let year = match &normal {
            None => rng.random_range(lo..=hi),
            Some(d) => loop {
                let y = d.sample(&mut rng).round();
                if y >= f64::from(lo) && y <= f64::from(hi) {
                    break y as i32;
                }
            },
        };
        let len = match (model.lengths, &lognormal) {
            (LengthDistribution::Fixed(l), _) => l,
            (LengthDistribution::LogNormal { min, max, .. }, Some(d)) => (d.sample(&mut rng).round() as usize).clamp(min, max),
            (LengthDistribution::LogNormal { .. }, None) => unreachable!(),
        };
        let sampler = match samplers.entry(year) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let p = model.probabilities(year).expect("year in range");
                e.insert(WeightedIndex::new(p).map_err(|e| Error::invalid(e.to_string()))?)
            }
        };
        let tokens = (0..len).map(|_| model.words[sampler.sample(&mut rng)].token.clone()).collect();
        docs.push(Document::new(format!("syn{i:06}"), Some(year), tokens));
    }
    Ok(docs)
}

/// Flat `key = value` description of a synthetic model.
///
/// Keys: `preset` (`two_regime`, `smooth`, `deeds`), `vocab`, `year_min`, `year_max`,
/// `split_year`, `model_seed`, `dates` (`uniform`, `deeds`, `normal:MEAN,SD`) and
/// `length` (`fixed:N`, `deeds`, `lognormal:MU,SIGMA`).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub preset: String,
    pub vocab: usize,
    pub years: (i32, i32),
    pub split_year: Option<i32>,
    pub model_seed: u64,
    pub dates: Option<DateDistribution>,
    pub lengths: Option<LengthDistribution>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            preset: "smooth".into(),
            vocab: 400,
            years: (1100, 1400),
            split_year: None,
            model_seed: 1,
            dates: None,
            lengths: None,
        }
    }
}

fn parse_pair(v: &str) -> Option<(f64, f64)> {
    let (a, b) = v.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for (k, v) in parse_key_values(text)? {
            spec.set(&k, &v)?;
        }
        Ok(spec)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid(format!("bad value {value:?} for synthetic key {key:?}"));
        let int = |v: &str| v.parse::<i64>().map_err(|_| bad());
        match key {
            "preset" => match value {
                "two_regime" | "smooth" | "deeds" => self.preset = value.into(),
                _ => return Err(bad()),
            },
            "vocab" => self.vocab = value.parse().map_err(|_| bad())?,
            "year_min" => self.years.0 = int(value)? as i32,
            "year_max" => self.years.1 = int(value)? as i32,
            "split_year" => self.split_year = Some(int(value)? as i32),
            "model_seed" => self.model_seed = value.parse().map_err(|_| bad())?,
            "dates" => {
                self.dates = Some(match value {
                    "uniform" => DateDistribution::Uniform,
                    "deeds" => DateDistribution::TruncatedNormal { mean: 1237.0, sd: 46.0 },
                    v => {
                        let (mean, sd) = v.strip_prefix("normal:").and_then(parse_pair).ok_or_else(bad)?;
                        DateDistribution::TruncatedNormal { mean, sd }
                    }
                })
            }
            "length" => {
                self.lengths = Some(match value {
                    "deeds" => deeds_lengths(),
                    v if v.starts_with("fixed:") => LengthDistribution::Fixed(v[6..].trim().parse().map_err(|_| bad())?),
                    v => {
                        let (mu, sigma) = v.strip_prefix("lognormal:").and_then(parse_pair).ok_or_else(bad)?;
                        LengthDistribution::LogNormal { mu, sigma, min: 1, max: 100_000 }
                    }
                })
            }
            _ => return Err(Error::invalid(format!("unknown synthetic key {key:?}"))),
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SyntheticModel> {
        let mut model = match self.preset.as_str() {
            "two_regime" => {
                let split = self.split_year.unwrap_or((self.years.0 + self.years.1 + 1) / 2);
                SyntheticModel::two_regime(self.vocab.div_ceil(2), self.years, split)?
            }
            "smooth" => SyntheticModel::smooth(self.vocab, self.years, self.model_seed)?,
            "deeds" => SyntheticModel::deeds(self.vocab, self.model_seed)?,
            other => return Err(Error::invalid(format!("unknown preset {other:?}"))),
        };
        if let Some(d) = self.dates {
            model = model.with_dates(d);
        }
        if let Some(l) = self.lengths {
            model = model.with_lengths(l);
        }
        Ok(model)
    }
}
