//! Quantile-regression dating.
//!
//! Distances from the target to every training document are regressed on the
//! training dates with a kernel-weighted lower quantile. The date estimate is the
//! year where that quantile curve is smallest.

use std::io::Write;
use std::sync::Arc;

use crate::corpus::{Document, ShingleIndex};
use crate::error::{Error, Result};
use crate::estimate::{median, nearly_equal, pick_year, DateEstimate, Flag};
use crate::kernel::KernelSpec;
use crate::metrics::{DistanceEngine, DistanceSpec};

/// Years whose effective kernel mass falls below this are left off the curve.
pub const DEFAULT_MIN_MASS: f64 = 20.0;

/// Reference mass for the optional variable bandwidth.
pub const DEFAULT_VARIABLE_MASS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QrConfig {
    /// Lower quantile in (0, 1).
    pub q: f64,
    /// Gaussian bandwidth in years.
    pub h: f64,
    pub distance: DistanceSpec,
    /// `None` uses every integer year of the training range.
    pub eval_years: Option<(i32, i32)>,
    /// Minimum effective mass `Σ_i K(t_i - t) / K(0)` for a year to be fitted.
    pub min_mass: f64,
    /// When set to `m0`, the bandwidth at `t` widens to `h · max(1, m0 / mass(t))`.
    pub variable_bandwidth: Option<f64>,
}

impl QrConfig {
    pub fn new(q: f64, h: f64, distance: DistanceSpec) -> Self {
        QrConfig {
            q,
            h,
            distance,
            eval_years: None,
            min_mass: DEFAULT_MIN_MASS,
            variable_bandwidth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::invalid(format!("quantile must lie in (0, 1), got {}", self.q)));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {}", self.h)));
        }
        if self.min_mass.is_nan() || self.min_mass < 0.0 {
            return Err(Error::invalid("minimum mass must be nonnegative"));
        }
        if let Some(m0) = self.variable_bandwidth {
            if !(m0 > 0.0) {
                return Err(Error::invalid("variable-bandwidth reference mass must be positive"));
            }
        }
        self.distance.validate()
    }

    pub fn label(&self) -> String {
        format!("qr(q={},h={})", self.q, self.h)
    }
}

/// Smallest `c` among `values` with `Σ_{v ≤ c} w ≥ q Σ w` (left-continuous weighted quantile).
///
/// `order` must sort `values` ascending. Returns `None` when the total weight is zero.
pub fn weighted_quantile_sorted(values: &[f64], weights: &[f64], order: &[usize], q: f64) -> Option<f64> {
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    if !(total > 0.0) {
        return None;
    }
    let target = q * total;
    let mut cum = 0.0;
    for &i in order {
        cum += weights[i];
        if cum >= target && weights[i] > 0.0 {
            return Some(values[i]);
        }
    }
    // rounding left cum a hair short of the target
    order.iter().rev().find(|&&i| weights[i] > 0.0).map(|&i| values[i])
}

/// Fitted lower-quantile curve: `(year, quantile)` for each year passing the mass threshold.
pub fn curve_from_distances(distances: &[f64], years: &[i32], eval: &[i32], config: &QrConfig) -> Result<Vec<(i32, f64)>> {
    config.validate()?;
    if distances.len() != years.len() {
        return Err(Error::LengthMismatch {
            expected: years.len(),
            got: distances.len(),
        });
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let base = KernelSpec::gaussian(config.h);
    let mut out = Vec::new();
    let mut w = vec![0.0; years.len()];
    for &t in eval {
        for (wi, &y) in w.iter_mut().zip(years) {
            *wi = base.shape_value(f64::from(y - t));
        }
        let mass: f64 = w.iter().sum();
        if mass < config.min_mass || mass == 0.0 {
            continue;
        }
        if let Some(m0) = config.variable_bandwidth {
            let factor = (m0 / mass).max(1.0);
            if factor > 1.0 {
                let k = KernelSpec::gaussian(config.h * factor);
                for (wi, &y) in w.iter_mut().zip(years) {
                    *wi = k.shape_value(f64::from(y - t));
                }
            }
        }
        if let Some(c) = weighted_quantile_sorted(distances, &w, &order, config.q) {
            out.push((t, c));
        }
    }
    Ok(out)
}

/// The year minimizing `curve`; ties go to the year closest to `anchor`.
pub fn date_from_curve(curve: &[(i32, f64)], anchor: f64) -> Result<(i32, bool)> {
    if curve.len() < 3 {
        return Err(Error::Numerical(format!(
            "quantile curve defined on {} years, at least 3 needed",
            curve.len()
        )));
    }
    let years: Vec<i32> = curve.iter().map(|p| p.0).collect();
    let values: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let (i, tied) = pick_year(&years, &values, anchor, false).expect("nonempty curve");
    Ok((years[i], tied))
}

/// A training corpus indexed under one distance.
#[derive(Debug)]
pub struct QrModel {
    engine: DistanceEngine,
    years: Vec<i32>,
    range: (i32, i32),
    median_year: f64,
}

impl QrModel {
    pub fn new(train: &[Document], distance: DistanceSpec) -> Result<Self> {
        let usable: Vec<Document> = train.iter().filter(|d| d.len() >= distance.k).cloned().collect();
        if usable.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_index(Arc::new(ShingleIndex::build(&usable, distance.k)?), distance)
    }

    pub fn from_index(index: Arc<ShingleIndex>, distance: DistanceSpec) -> Result<Self> {
        let years = index.doc_years().to_vec();
        let range = index.year_range();
        let fy: Vec<f64> = years.iter().map(|&y| f64::from(y)).collect();
        let median_year = median(&fy).ok_or(Error::EmptyCorpus)?;
        Ok(QrModel {
            engine: DistanceEngine::new(index, distance)?,
            years,
            range,
            median_year,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn median_year(&self) -> f64 {
        self.median_year
    }

    pub fn distance(&self) -> &DistanceSpec {
        self.engine.spec()
    }

    pub fn distances_to(&self, doc: &Document) -> Result<Vec<f64>> {
        self.engine.distances_to(doc)
    }

    fn eval_years(&self, config: &QrConfig) -> Vec<i32> {
        let (lo, hi) = config.eval_years.unwrap_or(self.range);
        (lo..=hi).collect()
    }

    fn check(&self, config: &QrConfig) -> Result<()> {
        config.validate()?;
        if config.distance != *self.engine.spec() {
            return Err(Error::invalid("QR config distance differs from the model's"));
        }
        Ok(())
    }

    pub fn qr_curve(&self, target: &Document, config: &QrConfig) -> Result<Vec<(i32, f64)>> {
        self.check(config)?;
        let d = self.distances_to(target)?;
        self.curve_for(&d, config)
    }

    fn curve_for(&self, distances: &[f64], config: &QrConfig) -> Result<Vec<(i32, f64)>> {
        let curve = curve_from_distances(distances, &self.years, &self.eval_years(config), config)?;
        if curve.is_empty() {
            return Err(Error::Numerical(format!(
                "no year reaches kernel mass {} at h = {}",
                config.min_mass, config.h
            )));
        }
        Ok(curve)
    }

    fn estimate_from(&self, distances: &[f64], config: &QrConfig) -> Result<DateEstimate> {
        let curve = self.curve_for(distances, config)?;
        let (year, tied) = date_from_curve(&curve, self.median_year)?;
        let mut est = DateEstimate::new(f64::from(year), "qr");
        if tied {
            est.diagnostics.flags.push(Flag::Tie);
        }
        est.diagnostics.params.push(("q".into(), config.q));
        est.diagnostics.params.push(("h".into(), config.h));
        est.diagnostics.curve = Some(curve);
        Ok(est)
    }

    pub fn qr_date(&self, target: &Document, config: &QrConfig) -> Result<DateEstimate> {
        self.check(config)?;
        let d = self.distances_to(target)?;
        self.estimate_from(&d, config)
    }

    /// Picks `(q, h)` minimizing validation MAE. Ties go to the larger `h`, then the
    /// larger `q`. Documents that cannot be dated count at the training median.
    pub fn qr_tune(&self, validation: &[Document], qs: &[f64], hs: &[f64], base: &QrConfig) -> Result<(QrConfig, f64)> {
        if qs.is_empty() || hs.is_empty() {
            return Err(Error::EmptyGrid("QR tuning grid"));
        }
        let val: Vec<(Vec<f64>, f64)> = validation
            .iter()
            .map(|d| {
                let y = d.year_or_err()?;
                Ok((self.distances_to(d)?, f64::from(y)))
            })
            .collect::<Result<_>>()?;
        if val.is_empty() {
            return Err(Error::invalid("QR tuning needs a nonempty validation set"));
        }
        let mut best: Option<(QrConfig, f64)> = None;
        for &h in hs {
            for &q in qs {
                let config = QrConfig { q, h, ..base.clone() };
                self.check(&config)?;
                let mae = val
                    .iter()
                    .map(|(d, y)| {
                        let pred = self.estimate_from(d, &config).map(|e| e.year_hat).unwrap_or(self.median_year);
                        (pred - y).abs()
                    })
                    .sum::<f64>()
                    / val.len() as f64;
                let replace = match &best {
                    None => true,
                    Some((b, m)) if nearly_equal(mae, *m) => (h, q) > (b.h, b.q),
                    Some((_, m)) => mae < *m,
                };
                if replace {
                    best = Some((config, mae));
                }
            }
        }
        Ok(best.expect("nonempty grid"))
    }
}

/// Writes `year,distance,weight` rows, with weights of the kernel centered at `at`.
pub fn write_scatter_csv<W: Write>(mut w: W, years: &[i32], distances: &[f64], h: f64, at: i32) -> Result<()> {
    let k = KernelSpec::gaussian(h);
    writeln!(w, "year,distance,weight")?;
    for (y, d) in years.iter().zip(distances) {
        writeln!(w, "{y},{d},{}", k.shape_value(f64::from(y - at)))?;
    }
    Ok(())
}

/// Writes `year,quantile` rows.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &[(i32, f64)]) -> Result<()> {
    writeln!(w, "year,quantile")?;
    for (y, c) in curve {
        writeln!(w, "{y},{c}")?;
    }
    Ok(())
}
