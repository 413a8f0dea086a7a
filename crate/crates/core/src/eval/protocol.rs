//! Split, tune on validation, report on validation and test.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::metrics;
use crate::corpus::{split_corpus, Document, ShingleIndex, SplitFractions};
use crate::ensemble::{blend_predict, fit_blend, BlendOptions, BlendWeights};
use crate::error::{Error, Result};
use crate::estimate::nearly_equal;
use crate::kernel::KernelSpec;
use crate::knn::{default_bandwidth_grid, KnnConfig, KnnDater, KnnModel};
use crate::metrics::DistanceSpec;
use crate::mt::{MtConfig, MtIndex};
use crate::prevalence::{Degree, PrevalenceConfig, ShingleCurveModel};
use crate::quantile::{QrConfig, QrModel};

type DateFn = Arc<dyn Fn(&Document) -> Result<f64> + Send + Sync>;

/// A dating method and its tuning grid.
#[derive(Clone)]
pub enum MethodSpec {
    /// One reference distance per shingle size; `m` tuned on validation.
    Knn {
        ks: Vec<usize>,
        m_grid: Vec<usize>,
        bandwidth_grid: Vec<f64>,
    },
    /// Student-t kernel over `(h, ν)`; an infinite `ν` means Gaussian.
    Mp {
        k: usize,
        h_grid: Vec<f64>,
        nu_grid: Vec<f64>,
        degree: Degree,
        distinct: bool,
    },
    Qr {
        k: usize,
        q_grid: Vec<f64>,
        h_grid: Vec<f64>,
    },
    Mt {
        config: MtConfig,
    },
    /// Always predicts the training mean.
    Mean,
    /// Any dating function; not tuned.
    Custom {
        name: String,
        f: DateFn,
    },
}

impl fmt::Debug for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Knn { ks, m_grid, bandwidth_grid } => f
                .debug_struct("Knn")
                .field("ks", ks)
                .field("m_grid", m_grid)
                .field("bandwidth_grid", bandwidth_grid)
                .finish(),
            MethodSpec::Mp { k, h_grid, nu_grid, degree, distinct } => f
                .debug_struct("Mp")
                .field("k", k)
                .field("h_grid", h_grid)
                .field("nu_grid", nu_grid)
                .field("degree", degree)
                .field("distinct", distinct)
                .finish(),
            MethodSpec::Qr { k, q_grid, h_grid } => f
                .debug_struct("Qr")
                .field("k", k)
                .field("q_grid", q_grid)
                .field("h_grid", h_grid)
                .finish(),
            MethodSpec::Mt { config } => f.debug_struct("Mt").field("config", config).finish(),
            MethodSpec::Mean => f.write_str("Mean"),
            MethodSpec::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish_non_exhaustive(),
        }
    }
}

impl MethodSpec {
    pub fn knn(ks: &[usize], m_grid: &[usize]) -> Self {
        MethodSpec::Knn {
            ks: ks.to_vec(),
            m_grid: m_grid.to_vec(),
            bandwidth_grid: default_bandwidth_grid(),
        }
    }

    pub fn mp(k: usize, h_grid: &[f64], nu_grid: &[f64]) -> Self {
        MethodSpec::Mp {
            k,
            h_grid: h_grid.to_vec(),
            nu_grid: nu_grid.to_vec(),
            degree: Degree::Constant,
            distinct: false,
        }
    }

    pub fn qr(k: usize, q_grid: &[f64], h_grid: &[f64]) -> Self {
        MethodSpec::Qr {
            k,
            q_grid: q_grid.to_vec(),
            h_grid: h_grid.to_vec(),
        }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(&Document) -> Result<f64> + Send + Sync + 'static) -> Self {
        MethodSpec::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            MethodSpec::Knn { ks, .. } => format!("knn{}", ks.iter().map(usize::to_string).collect::<String>()),
            MethodSpec::Mp { k, .. } => format!("mp{k}"),
            MethodSpec::Qr { k, .. } => format!("qr{k}"),
            MethodSpec::Mt { .. } => "mt".into(),
            MethodSpec::Mean => "mean".into(),
            MethodSpec::Custom { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    pub fractions: SplitFractions,
    pub seed: u64,
    /// Tune and report on validation ∪ test as one set, labeled `val+test`.
    pub merge_validation: bool,
    /// Add a row blending every method that succeeded.
    pub blend: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            fractions: SplitFractions::REFERENCE,
            seed: 0,
            merge_validation: false,
            blend: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocPrediction {
    pub id: String,
    pub truth: f64,
    pub estimate: f64,
    pub abs_error: f64,
    /// The method could not date this document; `estimate` is the training mean.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub params: String,
    pub split: String,
    pub per_doc: Vec<DocPrediction>,
    pub rmse: f64,
    pub mae: f64,
    pub medae: f64,
    pub n_failed: usize,
}

impl EvalReport {
    fn new(method: &str, params: &str, split: &str, per_doc: Vec<DocPrediction>) -> Result<Self> {
        let truths: Vec<f64> = per_doc.iter().map(|p| p.truth).collect();
        let est: Vec<f64> = per_doc.iter().map(|p| p.estimate).collect();
        let m = metrics(&truths, &est)?;
        Ok(EvalReport {
            method: method.into(),
            params: params.into(),
            split: split.into(),
            n_failed: per_doc.iter().filter(|p| p.failed).count(),
            per_doc,
            rmse: m.rmse,
            mae: m.mae,
            medae: m.medae,
        })
    }

    pub fn n(&self) -> usize {
        self.per_doc.len()
    }

    /// Mean squared error.
    pub fn mse(&self) -> f64 {
        self.per_doc.iter().map(|p| p.abs_error * p.abs_error).sum::<f64>() / self.per_doc.len() as f64
    }
}

/// One method's reports. `validation` is `None` in the merged layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub params: String,
    pub validation: Option<EvalReport>,
    pub test: Option<EvalReport>,
    /// Set when fitting or tuning failed; no reports then.
    pub error: Option<String>,
}

impl MethodResult {
    pub fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.validation.iter().chain(self.test.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub results: Vec<MethodResult>,
    /// Blend weights, in the order of the successful methods they combine.
    pub blend: Option<(Vec<String>, BlendWeights)>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

impl ProtocolResult {
    pub fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.results.iter().flat_map(MethodResult::reports)
    }

    pub fn get(&self, method: &str) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

fn mean_year(docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut s = 0.0;
    for d in docs {
        s += f64::from(d.year_or_err()?);
    }
    Ok(s / docs.len() as f64)
}

/// Estimates for `docs`, in order; failures are `None`.
fn predict_all(f: &(dyn Fn(&Document) -> Result<f64> + Send + Sync), docs: &[Document]) -> Vec<Option<f64>> {
    docs.par_iter()
        .map(|d| f(d).ok().filter(|v| v.is_finite()))
        .collect()
}

fn mae_of(preds: &[Option<f64>], docs: &[Document], fallback: f64) -> f64 {
    preds
        .iter()
        .zip(docs)
        .map(|(p, d)| (p.unwrap_or(fallback) - f64::from(d.year.unwrap_or_default())).abs())
        .sum::<f64>()
        / docs.len() as f64
}

fn predictions(preds: &[Option<f64>], docs: &[Document], fallback: f64) -> Vec<DocPrediction> {
    preds
        .iter()
        .zip(docs)
        .map(|(p, d)| {
            let truth = f64::from(d.year.unwrap_or_default());
            let estimate = p.unwrap_or(fallback);
            DocPrediction {
                id: d.id.clone(),
                truth,
                estimate,
                abs_error: (estimate - truth).abs(),
                failed: p.is_none(),
            }
        })
        .collect()
}

/// Keeps the grid point with the lowest MAE; `later_wins` decides near-ties.
struct Best<T> {
    best: Option<(T, f64)>,
}

impl<T> Best<T> {
    fn new() -> Self {
        Best { best: None }
    }

    fn offer(&mut self, item: T, mae: f64, later_wins: impl Fn(&T, &T) -> bool) {
        let replace = match &self.best {
            None => true,
            Some((b, m)) if nearly_equal(mae, *m) => later_wins(&item, b),
            Some((_, m)) => mae < *m,
        };
        if replace {
            self.best = Some((item, mae));
        }
    }
}

fn nonempty_grid(grid: &[f64], name: &'static str) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid(name));
    }
    Ok(grid.to_vec())
}

/// Fits and tunes `method` on `train` + `tune`; returns (params label, dater).
fn fit(method: &MethodSpec, train: &[Document], tune: &[Document], fallback: f64) -> Result<(String, DateFn)> {
    match method {
        MethodSpec::Mean => Ok((String::new(), Arc::new(move |_: &Document| Ok(fallback)))),
        MethodSpec::Custom { f, .. } => Ok((String::new(), f.clone())),
        MethodSpec::Knn { ks, m_grid, bandwidth_grid } => {
            if m_grid.is_empty() {
                return Err(Error::EmptyGrid("kNN m grid"));
            }
            let grid = nonempty_grid(bandwidth_grid, "kNN bandwidth grid")?;
            let config = KnnConfig {
                bandwidth_grids: ks.iter().map(|_| grid.clone()).collect(),
                ..KnnConfig::reference(ks, m_grid[0])
            };
            config.validate()?;
            let model = Arc::new(KnnModel::new(train, &config.distances)?);
            let base = KnnDater::new(model, config)?;
            // m beyond the training size selects the same neighborhood as m = |train|
            let mut ms: Vec<usize> = m_grid.iter().map(|&m| m.min(train.len()).max(2)).collect();
            ms.sort_unstable();
            ms.dedup();
            let mut best = Best::new();
            for m in ms {
                let dater = base.with_m(m)?;
                let preds = predict_all(&|d: &Document| dater.date(d).map(|e| e.year_hat), tune);
                best.offer(dater, mae_of(&preds, tune, fallback), |a, b| a.config().m > b.config().m);
            }
            let (dater, _) = best.best.expect("nonempty grid");
            let ks_label = ks.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let params = format!("k={ks_label} m={}", dater.config().m);
            Ok((params, Arc::new(move |d: &Document| dater.date(d).map(|e| e.year_hat))))
        }
        MethodSpec::Mp { k, h_grid, nu_grid, degree, distinct } => {
            let hs = nonempty_grid(h_grid, "MP bandwidth grid")?;
            let nus = nonempty_grid(nu_grid, "MP degrees-of-freedom grid")?;
            let usable: Vec<Document> = train.iter().filter(|d| d.len() >= *k).cloned().collect();
            let index = Arc::new(ShingleIndex::build(&usable, *k)?);
            let mut best = Best::new();
            for &h in &hs {
                for &nu in &nus {
                    let kernel = if nu.is_infinite() {
                        KernelSpec::gaussian(h)
                    } else {
                        KernelSpec::student_t(h, nu)
                    };
                    let config = PrevalenceConfig {
                        kernel,
                        degree: *degree,
                        distinct: *distinct,
                        ..PrevalenceConfig::default()
                    };
                    let model = ShingleCurveModel::new(index.clone(), config)?;
                    let preds = predict_all(&|d: &Document| model.mp_date(d).map(|e| e.year_hat), tune);
                    best.offer(((h, nu), model), mae_of(&preds, tune, fallback), |a, b| a.0 > b.0);
                }
            }
            let (((h, nu), model), _) = best.best.expect("nonempty grid");
            let params = format!("k={k} h={h} nu={nu}");
            Ok((params, Arc::new(move |d: &Document| model.mp_date(d).map(|e| e.year_hat))))
        }
        MethodSpec::Qr { k, q_grid, h_grid } => {
            let distance = DistanceSpec::reference(*k);
            let model = QrModel::new(train, distance)?;
            let base = QrConfig::new(q_grid.first().copied().unwrap_or(0.1), h_grid.first().copied().unwrap_or(10.0), distance);
            let (config, _) = model.qr_tune(tune, q_grid, h_grid, &base)?;
            let params = format!("k={k} q={} h={}", config.q, config.h);
            Ok((params, Arc::new(move |d: &Document| model.qr_date(d, &config).map(|e| e.year_hat))))
        }
        MethodSpec::Mt { config } => {
            config.validate()?;
            let index = MtIndex::build(train)?;
            let config = config.clone();
            Ok((String::new(), Arc::new(move |d: &Document| index.mt_date(d, &config).map(|e| e.year_hat))))
        }
    }
}

/// Fits `method` on `train`, tunes on `validation`, and reports on `validation` and
/// `test`. With `merged`, `validation` and `test` are pooled for both steps.
pub fn evaluate_split(method: &MethodSpec, train: &[Document], validation: &[Document], test: &[Document], merged: bool) -> MethodResult {
    let name = method.name();
    let run = || -> Result<(String, Option<EvalReport>, Option<EvalReport>)> {
        let fallback = mean_year(train)?;
        for d in validation.iter().chain(test) {
            d.year_or_err()?;
        }
        if merged {
            let pooled: Vec<Document> = validation.iter().chain(test).cloned().collect();
            if pooled.is_empty() {
                return Err(Error::invalid("nothing to evaluate on"));
            }
            let (params, f) = fit(method, train, &pooled, fallback)?;
            let preds = predict_all(f.as_ref(), &pooled);
            let r = EvalReport::new(&name, &params, "val+test", predictions(&preds, &pooled, fallback))?;
            return Ok((params, None, Some(r)));
        }
        if validation.is_empty() || test.is_empty() {
            return Err(Error::invalid("validation and test sets must be nonempty"));
        }
        let (params, f) = fit(method, train, validation, fallback)?;
        let v = predict_all(f.as_ref(), validation);
        let t = predict_all(f.as_ref(), test);
        Ok((
            params.clone(),
            Some(EvalReport::new(&name, &params, "val", predictions(&v, validation, fallback))?),
            Some(EvalReport::new(&name, &params, "test", predictions(&t, test, fallback))?),
        ))
    };
    match run() {
        Ok((params, validation, test)) => MethodResult {
            method: name,
            params,
            validation,
            test,
            error: None,
        },
        Err(e) => MethodResult {
            method: name,
            params: String::new(),
            validation: None,
            test: None,
            error: Some(e.to_string()),
        },
    }
}

/// Blends the successful methods on the tuning split and reports the blend.
fn blend_row(results: &[MethodResult]) -> Result<(MethodResult, Vec<String>, BlendWeights)> {
    let ok: Vec<&MethodResult> = results.iter().filter(|r| r.error.is_none()).collect();
    if ok.len() < 2 {
        return Err(Error::invalid("blending needs at least 2 successful methods"));
    }
    let tune = |r: &MethodResult| r.validation.clone().or_else(|| r.test.clone()).expect("successful method has a report");
    let tuned: Vec<EvalReport> = ok.iter().map(|r| tune(r)).collect();
    let rows: Vec<Vec<f64>> = (0..tuned[0].n())
        .map(|i| tuned.iter().map(|r| r.per_doc[i].estimate).collect())
        .collect();
    let truths: Vec<f64> = tuned[0].per_doc.iter().map(|p| p.truth).collect();
    let weights = fit_blend(&rows, &truths, BlendOptions::default())?;
    let params = ok
        .iter()
        .zip(&weights.weights)
        .map(|(r, w)| format!("{}={}", r.method, super::format_sig(*w)))
        .collect::<Vec<_>>()
        .join(" ");
    let combine = |reports: Vec<&EvalReport>, split: &str| -> Result<EvalReport> {
        let per_doc = (0..reports[0].n())
            .map(|i| {
                let row: Vec<f64> = reports.iter().map(|r| r.per_doc[i].estimate).collect();
                let p0 = &reports[0].per_doc[i];
                let estimate = blend_predict(&weights.weights, &row)?;
                Ok(DocPrediction {
                    id: p0.id.clone(),
                    truth: p0.truth,
                    estimate,
                    abs_error: (estimate - p0.truth).abs(),
                    failed: reports.iter().any(|r| r.per_doc[i].failed),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::new("blend", &params, split, per_doc)
    };
    let validation = match ok[0].validation {
        Some(_) => Some(combine(ok.iter().map(|r| r.validation.as_ref().expect("same layout")).collect(), "val")?),
        None => None,
    };
    let test_split = if validation.is_some() { "test" } else { "val+test" };
    let test = Some(combine(ok.iter().map(|r| r.test.as_ref().expect("same layout")).collect(), test_split)?);
    let names = ok.iter().map(|r| r.method.clone()).collect();
    Ok((
        MethodResult {
            method: "blend".into(),
            params,
            validation,
            test,
            error: None,
        },
        names,
        weights,
    ))
}

/// Splits `corpus`, then evaluates every method (see [`evaluate_split`]). A failing
/// method is reported with its error and does not affect the others.
pub fn run_protocol(corpus: &[Document], methods: &[MethodSpec], options: &ProtocolOptions) -> Result<ProtocolResult> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods to evaluate"));
    }
    for d in corpus {
        d.year_or_err()?;
    }
    let split = split_corpus(corpus.to_vec(), options.fractions, options.seed)?;
    let mut results: Vec<MethodResult> = methods
        .iter()
        .map(|m| evaluate_split(m, &split.train, &split.validation, &split.test, options.merge_validation))
        .collect();
    let mut blend = None;
    if options.blend {
        match blend_row(&results) {
            Ok((row, names, weights)) => {
                results.push(row);
                blend = Some((names, weights));
            }
            Err(e) => results.push(MethodResult {
                method: "blend".into(),
                params: String::new(),
                validation: None,
                test: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(ProtocolResult {
        results,
        blend,
        n_train: split.train.len(),
        n_validation: split.validation.len(),
        n_test: split.test.len(),
    })
}
