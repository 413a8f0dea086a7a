use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use textdate::corpus::{preprocess, read_documents, read_raw_corpus, write_documents, SplitFractions, Substitutions, YearBounds};
use textdate::ensemble::{blend_predict, fit_blend, BlendOptions};
use textdate::eval::{
    format_sig, generate_corpus, run_protocol, write_predictions_tsv, write_table, write_tsv, MethodSpec, ProtocolOptions,
    SyntheticSpec,
};
use textdate::knn::{default_bandwidth_grid, KnnConfig, KnnDater, KnnModel};
use textdate::mt::{MtConfig, MtIndex};
use textdate::prevalence::{Degree, PrevalenceConfig, ShingleCurveModel};
use textdate::quantile::{QrConfig, QrModel};
use textdate::{DateEstimate, DistanceSpec, Document, Error, KernelSpec, ShingleIndex};

use crate::settings::{parse_list, Grids, Settings};
use crate::{CliError, DateArgs, EvaluateArgs, Method, PreprocessArgs, SynthArgs};

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        None => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::io(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn load_substitutions(path: Option<PathBuf>) -> Result<Option<Substitutions>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(Substitutions::from_tsv(open_input(&p)?)?)),
    }
}

fn read_corpus(path: &Path, subs: Option<&Substitutions>, strict: bool) -> Result<Vec<Document>, CliError> {
    let (docs, problems) = read_documents(open_input(path)?, subs, strict)?;
    for p in &problems {
        warn!("{}: line {}: {} (skipped)", path.display(), p.line, p.message);
    }
    if docs.is_empty() {
        warn!("{}: no documents", path.display());
    }
    Ok(docs)
}

fn read_dated(path: &Path, subs: Option<&Substitutions>, strict: bool) -> Result<Vec<Document>, CliError> {
    let docs = read_corpus(path, subs, strict)?;
    if let Some(d) = docs.iter().find(|d| d.year.is_none()) {
        return Err(Error::MissingYear { id: d.id.clone() }.into());
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(docs)
}

pub fn cmd_preprocess(args: &PreprocessArgs, settings: &Settings) -> Result<(), CliError> {
    let input = required(settings.get(args.input.clone(), "input")?, "input")?;
    let output = settings.get(args.output.clone(), "output")?;
    let subs = load_substitutions(settings.get(args.substitutions.clone(), "substitutions")?)?;
    let strict = settings.switch(args.strict, "strict")?;
    let defaults = YearBounds::default();
    let bounds = YearBounds {
        min: settings.get_or(args.year_min, "year-min", defaults.min)?,
        max: settings.get_or(args.year_max, "year-max", defaults.max)?,
    };

    let (raw, problems) = read_raw_corpus(open_input(&input)?, strict)?;
    for p in &problems {
        warn!("{}: line {}: {} (skipped)", input.display(), p.line, p.message);
    }
    let mut docs = Vec::with_capacity(raw.len());
    for r in &raw {
        let result = r.validate(&bounds).and_then(|()| preprocess(r, subs.as_ref()));
        match result {
            Ok(d) => {
                info!("{}: {} tokens", d.id, d.len());
                docs.push(d);
            }
            Err(e) if strict => return Err(e.into()),
            Err(e) => warn!("{e} (skipped)"),
        }
    }
    if docs.is_empty() {
        warn!("{}: no documents written", input.display());
    }
    write_documents(open_output(output.as_deref())?, &docs)?;
    Ok(())
}

type Dater = Box<dyn Fn(&Document) -> textdate::Result<DateEstimate> + Send + Sync>;

fn build_dater(method: Method, args: &DateArgs, s: &Settings, train: &[Document]) -> Result<Dater, CliError> {
    Ok(match method {
        Method::Knn => {
            let ks: Vec<usize> = parse_list(&s.get_or(args.knn_k.clone(), "knn-k", "1".to_string())?, "--knn-k")?;
            let m = s.get_or(args.knn_m, "knn-m", 20)?;
            let config = KnnConfig::reference(&ks, m);
            config.validate()?;
            let model = Arc::new(KnnModel::new(train, &config.distances)?);
            let dater = KnnDater::new(model, config)?;
            Box::new(move |d| dater.date(d))
        }
        Method::Mp => {
            let k = s.get_or(args.mp_k, "mp-k", 1)?;
            let h = s.get_or(args.mp_h, "mp-h", 12.0)?;
            let nu = s.get_or(args.mp_nu, "mp-nu", 3.0)?;
            let degree = match s.get_or(args.mp_degree, "mp-degree", 0)? {
                0 => Degree::Constant,
                1 => Degree::Linear,
                d => return Err(CliError::Usage(format!("--mp-degree must be 0 or 1, got {d}"))),
            };
            let kernel = if nu.is_infinite() {
                KernelSpec::gaussian(h)
            } else {
                KernelSpec::student_t(h, nu)
            };
            let config = PrevalenceConfig {
                kernel,
                degree,
                distinct: s.switch(args.mp_distinct, "mp-distinct")?,
                ..PrevalenceConfig::default()
            };
            let usable: Vec<Document> = train.iter().filter(|d| d.len() >= k).cloned().collect();
            let model = ShingleCurveModel::new(Arc::new(ShingleIndex::build(&usable, k)?), config)?;
            Box::new(move |d| model.mp_date(d))
        }
        Method::Qr => {
            let k = s.get_or(args.qr_k, "qr-k", 1)?;
            let distance = DistanceSpec::reference(k);
            let config = QrConfig::new(s.get_or(args.qr_q, "qr-q", 0.1)?, s.get_or(args.qr_h, "qr-h", 10.0)?, distance);
            config.validate()?;
            let model = QrModel::new(train, distance)?;
            Box::new(move |d| model.qr_date(d, &config))
        }
        Method::Mt => {
            let defaults = MtConfig::default();
            let config = MtConfig {
                threshold: s.get_or(args.mt_threshold, "mt-threshold", defaults.threshold)?,
                initial_window: s.get_or(args.mt_window, "mt-window", defaults.initial_window)?,
                ..defaults
            };
            config.validate()?;
            let index = MtIndex::build(train)?;
            Box::new(move |d| index.mt_date(d, &config))
        }
        Method::Blend => build_blend(args, s, train)?,
    })
}

const BLEND_PARTS: [(Method, &str); 4] = [(Method::Knn, "knn"), (Method::Mp, "mp"), (Method::Qr, "qr"), (Method::Mt, "mt")];

/// The four methods blended with least-squares weights fitted on `--validation`.
/// A component that cannot date a document contributes the training mean.
fn build_blend(args: &DateArgs, s: &Settings, train: &[Document]) -> Result<Dater, CliError> {
    let subs = load_substitutions(s.get(args.substitutions.clone(), "substitutions")?)?;
    let val_path = required(s.get(args.validation.clone(), "validation")?, "validation")?;
    let validation = read_dated(&val_path, subs.as_ref(), s.switch(args.strict, "strict")?)?;
    let mean = train.iter().map(|d| f64::from(d.year.unwrap_or_default())).sum::<f64>() / train.len() as f64;
    let parts: Vec<Dater> = BLEND_PARTS
        .iter()
        .map(|(m, _)| build_dater(*m, args, s, train))
        .collect::<Result<_, _>>()?;
    let parts = Arc::new(parts);
    let row = {
        let parts = parts.clone();
        move |d: &Document| -> (Vec<f64>, Vec<usize>) {
            let mut failed = Vec::new();
            let row = parts
                .iter()
                .enumerate()
                .map(|(i, f)| match f(d) {
                    Ok(e) if e.year_hat.is_finite() => e.year_hat,
                    _ => {
                        failed.push(i);
                        mean
                    }
                })
                .collect();
            (row, failed)
        }
    };
    let rows: Vec<Vec<f64>> = validation.par_iter().map(|d| row(d).0).collect();
    let truths: Vec<f64> = validation.iter().map(|d| f64::from(d.year.unwrap_or_default())).collect();
    let weights = fit_blend(&rows, &truths, BlendOptions::default())?;
    info!("blend weights {:?}", weights.weights);
    Ok(Box::new(move |d| {
        let (r, failed) = row(d);
        let mut est = DateEstimate::new(blend_predict(&weights.weights, &r)?, "blend");
        for ((_, name), w) in BLEND_PARTS.iter().zip(&weights.weights) {
            est.diagnostics.params.push((format!("w_{name}"), *w));
        }
        for i in failed {
            est.diagnostics.params.push((format!("failed_{}", BLEND_PARTS[i].1), 1.0));
        }
        Ok(est)
    }))
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn flag_column(est: &DateEstimate) -> String {
    let mut parts: Vec<String> = est.diagnostics.flags.iter().map(ToString::to_string).collect();
    parts.extend(
        est.diagnostics
            .params
            .iter()
            .filter(|(k, _)| k.starts_with("failed_"))
            .map(|(k, _)| k.clone()),
    );
    parts.join(",")
}

pub fn cmd_date(args: &DateArgs, settings: &Settings) -> Result<(), CliError> {
    let method = match (args.method, settings.raw("method")) {
        (Some(m), _) => m,
        (None, Some(v)) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("config key \"method\": unknown method {v:?}")))?,
        (None, None) => return Err(CliError::Usage("--method is required".into())),
    };
    let corpus = required(settings.get(args.corpus.clone(), "corpus")?, "corpus")?;
    let targets = required(settings.get(args.targets.clone(), "targets")?, "targets")?;
    let output = settings.get(args.output.clone(), "output")?;
    let curves = settings.get(args.emit_curves.clone(), "emit-curves")?;
    let strict = settings.switch(args.strict, "strict")?;
    let subs = load_substitutions(settings.get(args.substitutions.clone(), "substitutions")?)?;

    let train = read_dated(&corpus, subs.as_ref(), strict)?;
    let targets = read_corpus(&targets, subs.as_ref(), strict)?;
    let dater = build_dater(method, args, settings, &train)?;
    let results: Vec<textdate::Result<DateEstimate>> = targets.par_iter().map(&dater).collect();

    let mut out = open_output(output.as_deref())?;
    writeln!(out, "id\tyear_hat\tstderr\tflags").map_err(|e| CliError::io(Path::new("output"), e))?;
    let mut first_error = None;
    for (doc, r) in targets.iter().zip(&results) {
        let line = match r {
            Ok(est) => format!(
                "{}\t{}\t{}\t{}",
                doc.id,
                format_sig(est.year_hat),
                est.stderr.map(format_sig).unwrap_or_default(),
                flag_column(est)
            ),
            Err(e) => {
                warn!("{}: {e}", doc.id);
                if first_error.is_none() {
                    first_error = Some(e.to_string());
                }
                format!("{}\tNA\t\terror: {}", doc.id, e.to_string().replace(['\t', '\n'], " "))
            }
        };
        writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("output"), e))?;
    }
    out.flush().map_err(|e| CliError::io(Path::new("output"), e))?;

    if let Some(dir) = curves {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (doc, r) in targets.iter().zip(&results) {
            let Ok(est) = r else { continue };
            let Some(curve) = &est.diagnostics.curve else {
                warn!("{}: method {} yields no curve", doc.id, est.method);
                continue;
            };
            let path = dir.join(format!("{}.csv", safe_name(&doc.id)));
            let mut w = open_output(Some(&path))?;
            let mut text = String::from("year,value\n");
            for (y, v) in curve {
                text.push_str(&format!("{y},{}\n", format_sig(*v)));
            }
            w.write_all(text.as_bytes())
                .and_then(|()| w.flush())
                .map_err(|e| CliError::io(&path, e))?;
        }
    }

    match first_error {
        Some(msg) if strict => Err(CliError::Core(Error::Undatable {
            id: "(see output)".into(),
            reason: msg,
        })),
        _ => Ok(()),
    }
}

/// Method list and grids turned into protocol methods.
pub fn methods_from_flags(methods: &str, grids: &Grids) -> Result<Vec<MethodSpec>, CliError> {
    let names: Vec<String> = parse_list(methods, "--methods")?;
    names
        .iter()
        .map(|name| {
            Ok(match name.as_str() {
                "knn" => MethodSpec::Knn {
                    ks: grids.list("knn.k", &[1])?,
                    m_grid: grids.list("knn.m", &[5, 10, 20, 100, 500, 1000])?,
                    bandwidth_grid: grids.list("knn.h", &default_bandwidth_grid())?,
                },
                "mp" => {
                    let degrees: Vec<u8> = grids.list("mp.degree", &[0])?;
                    let degree = match degrees.as_slice() {
                        [0] => Degree::Constant,
                        [1] => Degree::Linear,
                        _ => return Err(CliError::Usage("--grids mp.degree takes a single value, 0 or 1".into())),
                    };
                    MethodSpec::Mp {
                        k: single(grids.list("mp.k", &[1])?, "mp.k")?,
                        h_grid: grids.list("mp.h", &[4.0, 8.0, 12.0, 16.0, 24.0])?,
                        nu_grid: grids.list("mp.nu", &[3.0, 12.0])?,
                        degree,
                        distinct: false,
                    }
                }
                "qr" => MethodSpec::Qr {
                    k: single(grids.list("qr.k", &[1])?, "qr.k")?,
                    q_grid: grids.list("qr.q", &[0.05, 0.1, 0.2])?,
                    h_grid: grids.list("qr.h", &[5.0, 10.0, 20.0])?,
                },
                "mt" => MethodSpec::Mt { config: MtConfig::default() },
                "mean" => MethodSpec::Mean,
                other => {
                    return Err(CliError::Usage(format!(
                        "--methods: unknown method {other:?} (known: knn, mp, qr, mt, mean)"
                    )))
                }
            })
        })
        .collect()
}

fn single(values: Vec<usize>, key: &str) -> Result<usize, CliError> {
    match values.as_slice() {
        [v] => Ok(*v),
        _ => Err(CliError::Usage(format!("--grids {key} takes a single value"))),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs, settings: &Settings) -> Result<(), CliError> {
    let corpus = required(settings.get(args.corpus.clone(), "corpus")?, "corpus")?;
    let methods: String = settings.get_or(args.methods.clone(), "methods", "knn,mp,qr,mt".to_string())?;
    let grids = Grids::parse(&settings.get_or(args.grids.clone(), "grids", String::new())?)?;
    let methods = methods_from_flags(&methods, &grids)?;
    let fractions = match settings.get(args.split.clone(), "split")? {
        None => SplitFractions::REFERENCE,
        Some(text) => {
            let f: Vec<f64> = parse_list(&text, "--split")?;
            let [a, b, c] = f[..] else {
                return Err(CliError::Usage(format!("--split needs three fractions, got {text:?}")));
            };
            SplitFractions::new(a, b, c).map_err(|e| CliError::Usage(format!("--split: {e}")))?
        }
    };
    let options = ProtocolOptions {
        fractions,
        seed: settings.get_or(args.seed, "seed", 0)?,
        merge_validation: settings.switch(args.merge_validation, "merge-validation")?,
        blend: settings.switch(args.blend, "blend")?,
    };
    let subs = load_substitutions(settings.get(args.substitutions.clone(), "substitutions")?)?;
    let docs = read_dated(&corpus, subs.as_ref(), false)?;
    let result = run_protocol(&docs, &methods, &options)?;
    for r in &result.results {
        if let Some(e) = &r.error {
            warn!("{}: {e}", r.method);
        }
    }

    let mut table = Vec::new();
    write_table(&mut table, &result)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    lock.write_all(&table).map_err(|e| CliError::io(Path::new("stdout"), e))?;

    if let Some(dir) = settings.get(args.out_dir.clone(), "out-dir")? {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
        };
        let mut tsv = Vec::new();
        write_tsv(&mut tsv, &result)?;
        write("report.tsv", &tsv)?;
        write("report.txt", &table)?;
        let mut preds = Vec::new();
        write_predictions_tsv(&mut preds, &result)?;
        write("predictions.tsv", &preds)?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, settings: &Settings) -> Result<(), CliError> {
    let mut spec = match settings.get(args.model.clone(), "model")? {
        None => SyntheticSpec::default(),
        Some(p) => {
            let mut text = String::new();
            for line in open_input(&p)?.lines() {
                text.push_str(&line.map_err(|e| CliError::io(&p, e))?);
                text.push('\n');
            }
            SyntheticSpec::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        spec.set(k.trim(), v.trim())
            .map_err(|e| CliError::Usage(format!("--set: {e}")))?;
    }
    let n = settings.get_or(args.n, "n", 1000)?;
    let seed = settings.get_or(args.seed, "seed", 0)?;
    let output = settings.get(args.output.clone(), "output")?;
    let model = spec.build()?;
    let docs = generate_corpus(&model, n, seed)?;
    if docs.is_empty() {
        warn!("writing an empty corpus");
    }
    write_documents(open_output(output.as_deref())?, &docs)?;
    Ok(())
}
