//! Distance-weighted (kNN) dating.
//!
//! The estimate is the kernel-weighted mean of training dates,
//! `t̂ = Σ t_j a(i,j) / Σ a(i,j)` with `a(i,j) = Π_k K_{h_k}(d_k(i,j))` over `r`
//! distances. Bandwidths are chosen per target by minimizing the leave-one-out
//! squared error over the target's neighborhood `K(i)`, the union of its `m` nearest
//! training documents under each distance.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};

use crate::corpus::{DocIdx, Document, ShingleIndex};
use crate::error::{Error, Result};
use crate::estimate::{nearly_equal, DateEstimate, Flag};
use crate::kernel::{log_grid, KernelSpec};
use crate::metrics::{DistanceEngine, DistanceSpec};

/// Neighborhood sizes swept by default.
pub const DEFAULT_M_GRID: [usize; 6] = [5, 10, 20, 100, 500, 1000];

/// Twelve log-spaced bandwidths on [0.05, 1] (distances live in [0, 1]).
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_grid(0.05, 1.0, 12)
}

/// Configuration of a kNN dater over `r` distances.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnConfig {
    pub distances: Vec<DistanceSpec>,
    /// Kernel per distance; bandwidths are replaced by the selected ones.
    pub kernels: Vec<KernelSpec>,
    pub m: usize,
    /// Candidate bandwidths per distance.
    pub bandwidth_grids: Vec<Vec<f64>>,
}

impl KnnConfig {
    /// Gaussian kernels and the default grid on `Dist_α` (α = 1, raw counts) for each k.
    pub fn reference(ks: &[usize], m: usize) -> Self {
        KnnConfig {
            distances: ks.iter().map(|&k| DistanceSpec::reference(k)).collect(),
            kernels: ks.iter().map(|_| KernelSpec::gaussian(0.2)).collect(),
            m,
            bandwidth_grids: ks.iter().map(|_| default_bandwidth_grid()).collect(),
        }
    }

    pub fn r(&self) -> usize {
        self.distances.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.distances.len();
        if r == 0 {
            return Err(Error::invalid("kNN needs at least one distance"));
        }
        if self.kernels.len() != r || self.bandwidth_grids.len() != r {
            return Err(Error::invalid(format!(
                "kNN config has {r} distances, {} kernels and {} bandwidth grids",
                self.kernels.len(),
                self.bandwidth_grids.len()
            )));
        }
        if self.m < 2 {
            return Err(Error::invalid(format!("neighborhood size m must be at least 2, got {}", self.m)));
        }
        for d in &self.distances {
            d.validate()?;
        }
        for k in &self.kernels {
            k.validate()?;
        }
        for g in &self.bandwidth_grids {
            if g.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(Error::invalid("bandwidths must be positive"));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let ks: Vec<String> = self.distances.iter().map(|d| d.k.to_string()).collect();
        format!("knn{}(m={})", ks.join(""), self.m)
    }
}

/// `a(i,j) = Π_k K_{h_k}(d_k)`, proportionality constants included.
pub fn kernel_weight(distances: &[f64], kernels: &[KernelSpec]) -> Result<f64> {
    if distances.len() != kernels.len() {
        return Err(Error::LengthMismatch {
            expected: kernels.len(),
            got: distances.len(),
        });
    }
    if distances.iter().any(|d| d.is_nan() || *d < 0.0) {
        return Err(Error::invalid("distances must be nonnegative"));
    }
    Ok(distances
        .iter()
        .zip(kernels)
        .map(|(&d, k)| k.eval(d))
        .product())
}

/// Distances from one target to every training document, one row per distance.
#[derive(Debug, Clone)]
pub struct TargetDistances {
    pub id: String,
    rows: Vec<Vec<f64>>,
}

impl TargetDistances {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }
}

/// Selected bandwidths with their cross-validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection {
    pub bandwidths: Vec<f64>,
    pub cv: f64,
}

/// A training corpus indexed for kNN dating under a fixed list of distances.
#[derive(Debug)]
pub struct KnnModel {
    engines: Vec<DistanceEngine>,
    years: Vec<f64>,
    ids: Vec<String>,
}

impl KnnModel {
    /// Indexes `train` for the given distances. Documents too short for the largest
    /// shingle size are left out so every distance sees the same training set.
    pub fn new(train: &[Document], distances: &[DistanceSpec]) -> Result<Self> {
        let mut cache: HashMap<usize, Arc<ShingleIndex>> = HashMap::new();
        Self::with_index_cache(train, distances, &mut cache)
    }

    /// Like [`KnnModel::new`] but reuses (and fills) a cache of indexes keyed by k.
    /// The cache must only hold indexes built from this same training set.
    pub fn with_index_cache(
        train: &[Document],
        distances: &[DistanceSpec],
        cache: &mut HashMap<usize, Arc<ShingleIndex>>,
    ) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::invalid("kNN needs at least one distance"));
        }
        let kmax = distances.iter().map(|d| d.k).max().unwrap_or(1);
        let usable: Vec<Document> = train.iter().filter(|d| d.len() >= kmax).cloned().collect();
        if usable.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut engines = Vec::with_capacity(distances.len());
        for spec in distances {
            let index = match cache.get(&spec.k) {
                Some(ix) if ix.n_docs() == usable.len() => ix.clone(),
                _ => {
                    let ix = Arc::new(ShingleIndex::build(&usable, spec.k)?);
                    cache.insert(spec.k, ix.clone());
                    ix
                }
            };
            engines.push(DistanceEngine::new(index, *spec)?);
        }
        let first = engines[0].index();
        let years = first.doc_years().iter().map(|&y| f64::from(y)).collect();
        let ids = (0..first.n_docs() as u32).map(|d| first.doc_id(d).to_string()).collect();
        Ok(KnnModel { engines, years, ids })
    }

    pub fn n_train(&self) -> usize {
        self.years.len()
    }

    pub fn r(&self) -> usize {
        self.engines.len()
    }

    pub fn years(&self) -> &[f64] {
        &self.years
    }

    pub fn distance_specs(&self) -> Vec<DistanceSpec> {
        self.engines.iter().map(|e| *e.spec()).collect()
    }

    pub fn target_distances(&self, doc: &Document) -> Result<TargetDistances> {
        let rows = self
            .engines
            .iter()
            .map(|e| e.distances_to(doc))
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetDistances {
            id: doc.id.clone(),
            rows,
        })
    }

    fn check_config(&self, config: &KnnConfig) -> Result<()> {
        config.validate()?;
        if config.distances != self.distance_specs() {
            return Err(Error::invalid("kNN config distances differ from the model's"));
        }
        Ok(())
    }

    /// `K(i)`: union over distances of the `m` nearest training documents (ties by id).
    pub fn neighborhood(&self, target: &TargetDistances, m: usize) -> Vec<DocIdx> {
        let n = self.n_train();
        let m = m.min(n);
        let mut set = BTreeSet::new();
        for row in &target.rows {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then_with(|| self.ids[a].cmp(&self.ids[b])));
            set.extend(order[..m].iter().map(|&j| j as DocIdx));
        }
        set.into_iter().collect()
    }

    /// Log-weights `Σ_k ln K_{h_k}(d_k(·, j))` over all training documents.
    fn log_weights(rows: &[&[f64]], kernels: &[KernelSpec]) -> Vec<f64> {
        let n = rows[0].len();
        let mut lw = vec![0.0; n];
        for (row, k) in rows.iter().zip(kernels) {
            for (acc, &d) in lw.iter_mut().zip(row.iter()) {
                *acc += k.log_shape(d);
            }
        }
        lw
    }

    /// Weighted mean of training years, skipping `exclude`. `None` when degenerate.
    fn weighted_mean(&self, log_weights: &[f64], exclude: Option<usize>) -> Option<f64> {
        let max = log_weights
            .iter()
            .enumerate()
            .filter(|&(j, _)| Some(j) != exclude)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (j, (&lw, &t)) in log_weights.iter().zip(&self.years).enumerate() {
            if Some(j) == exclude {
                continue;
            }
            let w = (lw - max).exp();
            num += w * t;
            den += w;
        }
        (den > 0.0 && num.is_finite()).then(|| num / den)
    }

    fn estimate_with(&self, target: &TargetDistances, kernels: &[KernelSpec], m: usize) -> DateEstimate {
        let rows: Vec<&[f64]> = target.rows.iter().map(Vec::as_slice).collect();
        let lw = Self::log_weights(&rows, kernels);
        let mut est = match self.weighted_mean(&lw, None) {
            Some(t) => DateEstimate::new(t, "knn"),
            None => {
                let nb = self.neighborhood(target, m.max(1));
                let t = nb.iter().map(|&j| self.years[j as usize]).sum::<f64>() / nb.len() as f64;
                let mut e = DateEstimate::new(t, "knn");
                e.diagnostics.flags.push(Flag::UniformFallback);
                e
            }
        };
        for (i, k) in kernels.iter().enumerate() {
            est.diagnostics.params.push((format!("h{}", i + 1), k.bandwidth));
        }
        est
    }

    /// Kernel-weighted estimate with the given bandwidths, one per distance.
    pub fn knn_estimate(&self, doc: &Document, config: &KnnConfig, bandwidths: &[f64]) -> Result<DateEstimate> {
        self.check_config(config)?;
        if bandwidths.len() != config.r() {
            return Err(Error::LengthMismatch {
                expected: config.r(),
                got: bandwidths.len(),
            });
        }
        let kernels = with_bandwidths(&config.kernels, bandwidths)?;
        let target = self.target_distances(doc)?;
        Ok(self.estimate_with(&target, &kernels, config.m))
    }

    /// Squared leave-one-out error of training document `j` for every bandwidth
    /// combination of `config`, in [`combinations`] order. NaN where undefined.
    pub fn loo_errors(&self, j: DocIdx, config: &KnnConfig) -> Vec<f64> {
        let r = config.r();
        let n = self.n_train();
        let rows: Vec<Arc<[f64]>> = self.engines.iter().map(|e| e.train_row(j)).collect();
        // lk[k][g][l] = ln K_{h_g}(d_k(j, l))
        let lk: Vec<Vec<Vec<f64>>> = (0..r)
            .map(|k| {
                config.bandwidth_grids[k]
                    .iter()
                    .map(|&h| {
                        let kern = config.kernels[k].with_bandwidth(h);
                        rows[k].iter().map(|&d| kern.log_shape(d)).collect()
                    })
                    .collect()
            })
            .collect();
        let mut lw = vec![0.0; n];
        combinations(&config.bandwidth_grids)
            .into_iter()
            .map(|combo| {
                lw.iter_mut().for_each(|v| *v = 0.0);
                for (k, &g) in combo.iter().enumerate() {
                    for (acc, &v) in lw.iter_mut().zip(&lk[k][g]) {
                        *acc += v;
                    }
                }
                match self.weighted_mean(&lw, Some(j as usize)) {
                    Some(t) => (self.years[j as usize] - t).powi(2),
                    None => f64::NAN,
                }
            })
            .collect()
    }

    /// Grid search for the bandwidths minimizing the local cross-validation error over
    /// `K(i)`. Ties go to the larger bandwidth vector.
    pub fn select_bandwidths(&self, target: &TargetDistances, config: &KnnConfig) -> Result<BandwidthSelection> {
        self.select_with(target, config, |j| self.loo_errors(j, config).into())
    }

    fn select_with(
        &self,
        target: &TargetDistances,
        config: &KnnConfig,
        loo: impl Fn(DocIdx) -> Arc<[f64]>,
    ) -> Result<BandwidthSelection> {
        self.check_config(config)?;
        if config.bandwidth_grids.iter().any(Vec::is_empty) {
            return Err(Error::EmptyGrid("kNN bandwidth grid"));
        }
        if self.n_train() < 2 {
            return Err(Error::TooFewDocuments {
                needed: 2,
                got: self.n_train(),
            });
        }
        let combos = combinations(&config.bandwidth_grids);
        let mut sse = vec![0.0; combos.len()];
        let mut count = vec![0usize; combos.len()];
        for j in self.neighborhood(target, config.m) {
            for (c, &e) in loo(j).iter().enumerate() {
                if !e.is_nan() {
                    sse[c] += e;
                    count[c] += 1;
                }
            }
        }
        let mut best: Option<BandwidthSelection> = None;
        for (c, combo) in combos.iter().enumerate() {
            if count[c] == 0 {
                continue;
            }
            let cv = sse[c] / count[c] as f64;
            let hs: Vec<f64> = combo.iter().enumerate().map(|(k, &g)| config.bandwidth_grids[k][g]).collect();
            let replace = match &best {
                None => true,
                Some(b) if nearly_equal(cv, b.cv) => hs.partial_cmp(&b.bandwidths) == Some(std::cmp::Ordering::Greater),
                Some(b) => cv < b.cv,
            };
            if replace {
                best = Some(BandwidthSelection { bandwidths: hs, cv });
            }
        }
        best.ok_or_else(|| Error::Numerical("no bandwidth gave a finite cross-validation score".into()))
    }

    /// `sqrt(ŝ²(i))`: neighborhood LOO errors weighted by `a(i, j')` at the selected bandwidths.
    pub fn knn_stderr(&self, target: &TargetDistances, config: &KnnConfig, bandwidths: &[f64]) -> Result<f64> {
        self.check_config(config)?;
        let kernels = with_bandwidths(&config.kernels, bandwidths)?;
        let single = KnnConfig {
            bandwidth_grids: bandwidths.iter().map(|&h| vec![h]).collect(),
            ..config.clone()
        };
        self.stderr_with(target, &kernels, config.m, |j| self.loo_errors(j, &single)[0])
    }

    fn stderr_with(
        &self,
        target: &TargetDistances,
        kernels: &[KernelSpec],
        m: usize,
        loo_sq: impl Fn(DocIdx) -> f64,
    ) -> Result<f64> {
        let mut lw = Vec::new();
        let mut sq = Vec::new();
        for j in self.neighborhood(target, m) {
            let e2 = loo_sq(j);
            if e2.is_nan() {
                continue;
            }
            sq.push(e2);
            lw.push(
                kernels
                    .iter()
                    .enumerate()
                    .map(|(k, kern)| kern.log_shape(target.rows[k][j as usize]))
                    .sum::<f64>(),
            );
        }
        weighted_mean_sq(&sq, &lw).map(f64::sqrt)
    }

    /// Full pipeline: neighborhood, bandwidth selection, estimate and standard error.
    /// Use a [`KnnDater`] when dating many documents.
    pub fn date(&self, doc: &Document, config: &KnnConfig) -> Result<DateEstimate> {
        self.check_config(config)?;
        let target = self.target_distances(doc)?;
        let sel = self.select_bandwidths(&target, config)?;
        let kernels = with_bandwidths(&config.kernels, &sel.bandwidths)?;
        let mut est = self.estimate_with(&target, &kernels, config.m);
        est.stderr = self.knn_stderr(&target, config, &sel.bandwidths).ok();
        est.diagnostics.params.push(("cv".into(), sel.cv));
        est.diagnostics.params.push(("m".into(), config.m as f64));
        Ok(est)
    }
}

/// All index tuples over the grids, first grid varying fastest.
pub fn combinations(grids: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for g in grids {
        out = (0..g.len())
            .flat_map(|i| out.iter().map(move |c| {
                let mut c = c.clone();
                c.push(i);
                c
            }))
            .collect();
    }
    out
}

/// A [`KnnModel`] bound to one configuration, caching each training document's
/// leave-one-out errors across targets (they do not depend on the target).
#[derive(Debug)]
pub struct KnnDater {
    model: Arc<KnnModel>,
    config: KnnConfig,
    combos: Vec<Vec<usize>>,
    loo: Arc<Vec<OnceLock<Arc<[f64]>>>>,
}

impl KnnDater {
    pub fn new(model: Arc<KnnModel>, config: KnnConfig) -> Result<Self> {
        model.check_config(&config)?;
        let combos = combinations(&config.bandwidth_grids);
        let loo = Arc::new((0..model.n_train()).map(|_| OnceLock::new()).collect());
        Ok(KnnDater {
            model,
            config,
            combos,
            loo,
        })
    }

    pub fn model(&self) -> &Arc<KnnModel> {
        &self.model
    }

    pub fn config(&self) -> &KnnConfig {
        &self.config
    }

    /// Same dater with another neighborhood size. The leave-one-out cache is shared.
    pub fn with_m(&self, m: usize) -> Result<Self> {
        let config = KnnConfig { m, ..self.config.clone() };
        config.validate()?;
        Ok(KnnDater {
            model: self.model.clone(),
            config,
            combos: self.combos.clone(),
            loo: self.loo.clone(),
        })
    }

    fn loo(&self, j: DocIdx) -> Arc<[f64]> {
        self.loo[j as usize]
            .get_or_init(|| self.model.loo_errors(j, &self.config).into())
            .clone()
    }

    pub fn select_bandwidths(&self, target: &TargetDistances) -> Result<BandwidthSelection> {
        self.model.select_with(target, &self.config, |j| self.loo(j))
    }

    pub fn date(&self, doc: &Document) -> Result<DateEstimate> {
        let target = self.model.target_distances(doc)?;
        let sel = self.select_bandwidths(&target)?;
        let kernels = with_bandwidths(&self.config.kernels, &sel.bandwidths)?;
        let idx: Vec<usize> = sel
            .bandwidths
            .iter()
            .zip(&self.config.bandwidth_grids)
            .map(|(h, g)| g.iter().position(|x| x == h).expect("selected from grid"))
            .collect();
        let c = self.combos.iter().position(|c| *c == idx).expect("combination exists");
        let mut est = self.model.estimate_with(&target, &kernels, self.config.m);
        est.stderr = self
            .model
            .stderr_with(&target, &kernels, self.config.m, |j| self.loo(j)[c])
            .ok();
        est.diagnostics.params.push(("cv".into(), sel.cv));
        est.diagnostics.params.push(("m".into(), self.config.m as f64));
        Ok(est)
    }
}

fn with_bandwidths(kernels: &[KernelSpec], bandwidths: &[f64]) -> Result<Vec<KernelSpec>> {
    if kernels.len() != bandwidths.len() {
        return Err(Error::LengthMismatch {
            expected: kernels.len(),
            got: bandwidths.len(),
        });
    }
    let out: Vec<KernelSpec> = kernels.iter().zip(bandwidths).map(|(k, &h)| k.with_bandwidth(h)).collect();
    for k in &out {
        k.validate()?;
    }
    Ok(out)
}

/// `Σ s w / Σ w` with weights given as logs.
fn weighted_mean_sq(sq: &[f64], log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroDenominator("kNN standard error weights"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&s, &lw) in sq.iter().zip(log_weights) {
        let w = (lw - max).exp();
        num += s * w;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("kNN standard error weights"));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, year: i32, text: &str) -> Document {
        Document::from_words(id, Some(year), text)
    }

    #[test]
    fn kernel_weight_examples() {
        let ks = [KernelSpec::gaussian(0.2), KernelSpec::student_t(0.5, 3.0)];
        assert_eq!(kernel_weight(&[0.0, 0.0], &ks).unwrap(), 1.0);
        let g = [KernelSpec::gaussian(0.3)];
        assert!((kernel_weight(&[0.3], &g).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel_weight(&[0.3 * 1e6], &g).unwrap() < 1e-300);
        assert!(kernel_weight(&[0.1], &ks).is_err());
        assert!(kernel_weight(&[-0.1], &g).is_err());
    }

    #[test]
    fn single_training_doc() {
        let model = KnnModel::new(&[doc("a", 1200, "x y z")], &[DistanceSpec::reference(1)]).unwrap();
        let cfg = KnnConfig::reference(&[1], 2);
        for h in [0.01, 0.5, 10.0] {
            let e = model.knn_estimate(&Document::from_words("t", None, "x q"), &cfg, &[h]).unwrap();
            assert_eq!(e.year_hat, 1200.0);
        }
    }

    #[test]
    fn equidistant_docs_average() {
        let train = [doc("a", 1200, "x y"), doc("b", 1300, "x z")];
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let cfg = KnnConfig::reference(&[1], 2);
        let e = model.knn_estimate(&Document::from_words("t", None, "x"), &cfg, &[0.3]).unwrap();
        assert!((e.year_hat - 1250.0).abs() < 1e-9);
    }

    #[test]
    fn weights_three_to_one() {
        // gaussian weights exp(-(d/h)^2): d_a = 0 gives 1, pick h so that d_b gives 1/3
        let train = [doc("a", 1200, "x y"), doc("b", 1300, "x z")];
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let target = Document::from_words("t", None, "x y");
        let td = model.target_distances(&target).unwrap();
        let d_b = td.row(0)[1];
        assert_eq!(td.row(0)[0], 0.0);
        let h = d_b / 3f64.ln().sqrt();
        let cfg = KnnConfig::reference(&[1], 2);
        let e = model.knn_estimate(&target, &cfg, &[h]).unwrap();
        assert!((e.year_hat - 1225.0).abs() < 1e-9, "{}", e.year_hat);
    }

    #[test]
    fn neighborhood_sizes() {
        let train = [
            doc("a", 1200, "p p p q"),
            doc("b", 1210, "p q q q"),
            doc("c", 1220, "r s r s q r"),
            doc("d", 1230, "r r r s"),
        ];
        let one = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let t = one.target_distances(&Document::from_words("t", None, "p p q")).unwrap();
        assert_eq!(one.neighborhood(&t, 2), vec![0, 1]);

        let same = KnnModel::new(&train, &[DistanceSpec::reference(1), DistanceSpec::reference(1)]).unwrap();
        let t = same.target_distances(&Document::from_words("t", None, "p p q")).unwrap();
        assert_eq!(same.neighborhood(&t, 2).len(), 2);

        // unigram counts point at a, bigrams at c
        let two = KnnModel::new(&train, &[DistanceSpec::reference(1), DistanceSpec::broder(2)]).unwrap();
        let t = two.target_distances(&Document::from_words("t", None, "p p p p p p q r s r s")).unwrap();
        let argmin = |row: &[f64]| (0..row.len()).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap() as DocIdx;
        let (u, b) = (argmin(t.row(0)), argmin(t.row(1)));
        assert_eq!((u, b), (0, 2));
        assert_eq!(two.neighborhood(&t, 1), vec![0, 2]);
    }

    #[test]
    fn ties_in_neighborhood_break_by_id() {
        let train = [doc("b", 1200, "x"), doc("a", 1300, "x"), doc("c", 1250, "y")];
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let t = model.target_distances(&Document::from_words("t", None, "x")).unwrap();
        // a and b tie at distance 0; "a" (index 1) wins the single slot
        assert_eq!(model.neighborhood(&t, 1), vec![1]);
    }

    #[test]
    fn constant_dates_pick_largest_bandwidth() {
        let train: Vec<Document> = (0..8)
            .map(|i| doc(&format!("d{i}"), 1250, &format!("a b w{i} w{}", i % 3)))
            .collect();
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let cfg = KnnConfig::reference(&[1], 3);
        let t = model.target_distances(&Document::from_words("t", None, "a w1")).unwrap();
        let sel = model.select_bandwidths(&t, &cfg).unwrap();
        assert!(sel.cv < 1e-18);
        assert_eq!(sel.bandwidths, vec![1.0]);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let train = [doc("a", 1200, "x y"), doc("b", 1300, "x z")];
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let mut cfg = KnnConfig::reference(&[1], 2);
        cfg.bandwidth_grids = vec![vec![]];
        let t = model.target_distances(&Document::from_words("t", None, "x")).unwrap();
        assert!(matches!(model.select_bandwidths(&t, &cfg), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn global_neighborhood_gives_same_bandwidths_for_all_targets() {
        let train: Vec<Document> = (0..10)
            .map(|i| doc(&format!("d{i}"), 1200 + 10 * i, &format!("a{} a{} b c", i / 3, i / 2)))
            .collect();
        let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
        let cfg = KnnConfig::reference(&[1], 10);
        let targets = ["a0 b", "a3 a4 c", "zz"];
        let sels: Vec<_> = targets
            .iter()
            .map(|t| {
                let td = model.target_distances(&Document::from_words("t", None, t));
                td.and_then(|td| model.select_bandwidths(&td, &cfg))
            })
            .collect();
        // "zz" shares nothing: the target has no known shingle but still a nonzero vector
        let first = sels[0].as_ref().unwrap();
        for s in &sels {
            assert_eq!(s.as_ref().unwrap(), first);
        }
    }

    #[test]
    fn stderr_examples() {
        let rms = |e: &[f64], lw: &[f64]| {
            let sq: Vec<f64> = e.iter().map(|x| x * x).collect();
            weighted_mean_sq(&sq, lw).map(f64::sqrt)
        };
        assert_eq!(rms(&[0.0, 0.0], &[0.0, -1.0]).unwrap(), 0.0);
        assert_eq!(rms(&[-7.0], &[-3.0]).unwrap(), 7.0);
        assert!((rms(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rms(&[1.0], &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn combinations_cover_grid() {
        let c = combinations(&[vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0, 0]);
        assert_eq!(c[1], vec![1, 0]);
        assert_eq!(c[5], vec![1, 2]);
    }

    fn small_corpus() -> Vec<Document> {
        (0..14)
            .map(|i| {
                let text = format!("a{} a{} b{} c c w{} a{}", i / 3, i / 4, i % 5, i, i / 2);
                doc(&format!("d{i:02}"), 1200 + 7 * i, &text)
            })
            .collect()
    }

    #[test]
    fn cached_dater_matches_direct_pipeline() {
        let train = small_corpus();
        let specs = [DistanceSpec::reference(1), DistanceSpec::reference(2)];
        let model = Arc::new(KnnModel::new(&train, &specs).unwrap());
        let mut cfg = KnnConfig::reference(&[1, 2], 5);
        cfg.bandwidth_grids = vec![log_grid(0.05, 1.0, 4), log_grid(0.1, 1.0, 3)];
        let dater = KnnDater::new(model.clone(), cfg.clone()).unwrap();
        for text in ["a1 a1 b2 c", "a3 b0 c c w9", "a0 a0 a0"] {
            let d = Document::from_words("t", None, text);
            let a = model.date(&d, &cfg).unwrap();
            let b = dater.date(&d).unwrap();
            assert_eq!(a.year_hat, b.year_hat);
            assert_eq!(a.diagnostics.params, b.diagnostics.params);
            assert!((a.stderr.unwrap() - b.stderr.unwrap()).abs() < 1e-9);
        }
    }

    /// Straightforward recomputation of the local CV criterion from pairwise distances.
    #[test]
    fn cv_matches_brute_force() {
        let train = small_corpus();
        let spec = DistanceSpec::reference(1);
        let model = KnnModel::new(&train, &[spec]).unwrap();
        let mut cfg = KnnConfig::reference(&[1], 4);
        cfg.bandwidth_grids = vec![log_grid(0.05, 1.0, 6)];
        let target = Document::from_words("t", None, "a2 b1 c w5");
        let td = model.target_distances(&target).unwrap();
        let sel = model.select_bandwidths(&td, &cfg).unwrap();

        let dist = |a: &Document, b: &Document| spec.distance(a, b).unwrap();
        let mut nearest: Vec<usize> = (0..train.len()).collect();
        nearest.sort_by(|&a, &b| {
            dist(&target, &train[a]).total_cmp(&dist(&target, &train[b])).then(train[a].id.cmp(&train[b].id))
        });
        let nb = &nearest[..4];
        let mut best = (f64::INFINITY, 0.0);
        for &h in &cfg.bandwidth_grids[0] {
            let mut sse = 0.0;
            for &j in nb {
                let (mut num, mut den) = (0.0, 0.0);
                for (l, other) in train.iter().enumerate() {
                    if l != j {
                        let w = (-(dist(&train[j], other) / h).powi(2)).exp();
                        num += w * f64::from(other.year.unwrap());
                        den += w;
                    }
                }
                sse += (f64::from(train[j].year.unwrap()) - num / den).powi(2);
            }
            let cv = sse / nb.len() as f64;
            if cv < best.0 * (1.0 - 1e-9) || nearly_equal(cv, best.0) {
                best = (cv, h);
            }
        }
        assert_eq!(sel.bandwidths, vec![best.1]);
        assert!((sel.cv - best.0).abs() <= 1e-9 * best.0.max(1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<(i32, Vec<u8>)>> {
            prop::collection::vec((1100i32..1400, prop::collection::vec(0u8..6, 2..8)), 2..10)
        }

        fn build(raw: &[(i32, Vec<u8>)]) -> Vec<Document> {
            raw.iter()
                .enumerate()
                .map(|(i, (y, w))| {
                    let toks = w.iter().map(|c| format!("w{c}")).collect();
                    Document::new(format!("d{i}"), Some(*y), toks)
                })
                .collect()
        }

        proptest! {
            #[test]
            fn estimate_is_weighted_least_squares_minimizer(raw in corpus(), q in prop::collection::vec(0u8..6, 1..6), h in 0.05f64..2.0) {
                let train = build(&raw);
                let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
                let cfg = KnnConfig::reference(&[1], 2);
                let target = Document::new("t", None, q.iter().map(|c| format!("w{c}")).collect());
                let est = model.knn_estimate(&target, &cfg, &[h]).unwrap().year_hat;
                let ys: Vec<f64> = raw.iter().map(|(y, _)| f64::from(*y)).collect();
                let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
                prop_assert!(est >= lo - 1e-9 && est <= hi + 1e-9);
                // derivative of sum a_j (t - t_j)^2 vanishes at the estimate
                let td = model.target_distances(&target).unwrap();
                let ws: Vec<f64> = td.row(0).iter().map(|&d| KernelSpec::gaussian(h).eval(d)).collect();
                let wsum: f64 = ws.iter().sum();
                if wsum > 1e-200 {
                    let grad: f64 = ws.iter().zip(model.years()).map(|(w, y)| w * (est - y)).sum::<f64>() / wsum;
                    prop_assert!(grad.abs() < 1e-6 * hi.abs());
                }
            }

            #[test]
            fn kernel_scale_does_not_move_estimate(raw in corpus(), s in 1e-3f64..1e3) {
                let train = build(&raw);
                let model = KnnModel::new(&train, &[DistanceSpec::reference(1)]).unwrap();
                let cfg = KnnConfig::reference(&[1], 2);
                let mut scaled = cfg.clone();
                scaled.kernels = vec![KernelSpec::gaussian(0.2).with_scale(s)];
                let target = Document::from_words("t", None, "w1 w2 w3");
                let a = model.date(&target, &cfg).unwrap();
                let b = model.date(&target, &scaled).unwrap();
                prop_assert_eq!(a.year_hat, b.year_hat);
            }

            #[test]
            fn neighborhood_size_bounds(raw in corpus(), m in 2usize..12) {
                let train = build(&raw);
                let model = KnnModel::new(&train, &[DistanceSpec::reference(1), DistanceSpec::reference(2)]).unwrap();
                let td = model.target_distances(&Document::from_words("t", None, "w0 w1 w0")).unwrap();
                let nb = model.neighborhood(&td, m);
                let mm = m.min(model.n_train());
                prop_assert!(nb.len() >= mm && nb.len() <= 2 * mm);
            }
        }
    }
}
