use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use textdate_cli::CliError;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_textdate"));
    c.env_remove("TEXTDATE_WORKERS").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn textdate")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a synthetic corpus and returns its path.
fn synth(dir: &TempDir, name: &str, sets: &[&str], n: usize, seed: u64) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["synth".to_string()];
    for s in sets {
        args.push("--set".into());
        args.push((*s).into());
    }
    args.extend(["--n".into(), n.to_string(), "--seed".into(), seed.to_string(), "--output".into(), path(&out).into()]);
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

const REGIMES: [&str; 5] = ["preset=two_regime", "vocab=40", "year_min=1100", "year_max=1299", "split_year=1200"];

#[test]
fn charter_fixture_tokenizes_to_190_tokens() {
    let o = run(&["preprocess", "--input", path(&fixture("charter.jsonl"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let doc: serde_like::Doc = serde_like::parse(lines[0]);
    assert_eq!(doc.id, "00650032");
    assert_eq!(doc.year, Some(1230));
    assert_eq!(doc.tokens.len(), 190);
    assert_eq!(doc.tokens.iter().filter(|t| *t == "!NUM!").count(), 1);
    assert!(doc.tokens.iter().any(|t| t == "Rufford"));
}

/// Minimal reader for the tokenized line format, via the core crate's own reader.
mod serde_like {
    pub struct Doc {
        pub id: String,
        pub year: Option<i32>,
        pub tokens: Vec<String>,
    }

    pub fn parse(line: &str) -> Doc {
        let (docs, problems) = textdate::corpus::read_documents(line.as_bytes(), None, true).unwrap();
        assert!(problems.is_empty());
        let d = docs.into_iter().next().unwrap();
        Doc {
            id: d.id,
            year: d.year,
            tokens: d.tokens,
        }
    }
}

#[test]
fn empty_input_gives_empty_output_and_a_warning() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let o = run(&["preprocess", "--input", path(&input)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("no documents"), "{}", stderr(&o));
}

#[test]
fn duplicate_ids_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("dup.jsonl");
    fs::write(
        &input,
        "{\"id\":\"a\",\"year\":1200,\"text\":\"x y\"}\n{\"id\":\"a\",\"year\":1201,\"text\":\"y z\"}\n",
    )
    .unwrap();
    let o = run(&["preprocess", "--input", path(&input)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains('a'));
}

#[test]
fn malformed_lines_are_skipped_unless_strict() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.jsonl");
    fs::write(&input, "{\"id\":\"a\",\"year\":1200,\"text\":\"x y\"}\nnot json\n").unwrap();
    let o = run(&["preprocess", "--input", path(&input)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    let o = run(&["preprocess", "--strict", "--input", path(&input)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mp_dates_regime_corpus_on_the_right_side() {
    let dir = TempDir::new().unwrap();
    let train = synth(&dir, "train.jsonl", &REGIMES, 600, 1);
    let targets = synth(&dir, "targets.jsonl", &REGIMES, 40, 2);
    let out = dir.path().join("dates.tsv");
    let curves = dir.path().join("curves");
    let o = run(&[
        "date", "--method", "mp", "--mp-h", "4", "--corpus", path(&train), "--targets", path(&targets), "--output",
        path(&out), "--emit-curves", path(&curves),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let truth: std::collections::HashMap<String, i32> = {
        let text = fs::read_to_string(&targets).unwrap();
        let (docs, _) = textdate::corpus::read_documents(text.as_bytes(), None, true).unwrap();
        docs.into_iter().map(|d| (d.id, d.year.unwrap())).collect()
    };
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id\tyear_hat\tstderr\tflags"));
    let mut n = 0;
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        let est: f64 = cols[1].parse().unwrap();
        assert_eq!(est >= 1200.0, truth[cols[0]] >= 1200, "{line}");
        n += 1;
        let csv = fs::read_to_string(curves.join(format!("{}.csv", cols[0]))).unwrap();
        assert!(csv.starts_with("year,value\n"));
        assert!(csv.lines().count() > 100);
    }
    assert_eq!(n, 40);
}

#[test]
fn every_method_dates_and_writes_same_ids() {
    let dir = TempDir::new().unwrap();
    let train = synth(&dir, "train.jsonl", &REGIMES, 300, 3);
    let val = synth(&dir, "val.jsonl", &REGIMES, 60, 4);
    let targets = synth(&dir, "targets.jsonl", &REGIMES, 10, 5);
    for method in ["knn", "mp", "qr", "mt", "blend"] {
        let o = run(&[
            "date", "--method", method, "--corpus", path(&train), "--targets", path(&targets), "--validation", path(&val),
        ]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        let text = stdout(&o);
        assert_eq!(text.lines().count(), 11, "{method}");
        assert!(!text.contains("\tNA\t"), "{method}: {text}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["date", "--method", "nope", "--corpus", "x", "--targets", "y"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["date", "--corpus", "x", "--targets", "y"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--method"));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["synth", "--n", "1"]).env("TEXTDATE_WORKERS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("TEXTDATE_WORKERS"));
    let o = run(&["synth", "--set", "preset=nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_are_data_errors() {
    let o = run(&["evaluate", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent/corpus.jsonl"));
}

#[test]
fn exit_code_mapping() {
    use textdate::Error;
    assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    assert_eq!(CliError::Core(Error::InvalidArgument("x".into())).exit_code(), 2);
    assert_eq!(CliError::Core(Error::EmptyCorpus).exit_code(), 3);
    assert_eq!(CliError::Core(Error::Numerical("x".into())).exit_code(), 4);
    assert_eq!(CliError::Core(Error::ZeroVector).exit_code(), 4);
}

#[test]
fn evaluate_single_grid_point_reports_each_split() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(&dir, "c.jsonl", &REGIMES, 200, 6);
    let out = dir.path().join("out");
    let o = run(&[
        "evaluate", "--corpus", path(&corpus), "--methods", "mp", "--grids", "mp.h=8;mp.nu=3", "--out-dir", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{tsv}");
    assert!(rows[0].starts_with("mp1\tk=1 h=8 nu=3\tval\t"), "{}", rows[0]);
    assert!(rows[1].starts_with("mp1\tk=1 h=8 nu=3\ttest\t"), "{}", rows[1]);
    assert_eq!(fs::read(out.join("report.txt")).unwrap(), o.stdout);
    let preds = fs::read_to_string(out.join("predictions.tsv")).unwrap();
    let n: usize = rows.iter().map(|r| r.split('\t').nth(3).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(preds.lines().count(), 1 + n);

    let o = run(&["evaluate", "--corpus", path(&corpus), "--methods", "mp", "--grids", "mp.h=8", "--merge-validation"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("val+test"), "{}", stdout(&o));
}

#[test]
fn malformed_grid_names_the_flag() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(&dir, "c.jsonl", &REGIMES, 50, 7);
    for grid in ["mp.h=four", "mp.h", "zz.q=1", "mp.h=4,,8"] {
        let o = run(&["evaluate", "--corpus", path(&corpus), "--grids", grid]);
        assert_eq!(o.status.code(), Some(2), "{grid}");
        assert!(stderr(&o).contains("--grids"), "{grid}: {}", stderr(&o));
    }
    let o = run(&["evaluate", "--corpus", path(&corpus), "--split", "0.5,0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.conf");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    fs::write(&cfg, format!("# synthetic\nn = 5\nseed = 9\noutput = {}\n", path(&a))).unwrap();
    let o = run(&["--config", path(&cfg), "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 5);
    let o = run(&["synth", "--config", path(&cfg), "--n", "3", "--output", path(&b)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&b).unwrap().lines().count(), 3);

    fs::write(&cfg, "n = many\n").unwrap();
    let o = run(&["--config", path(&cfg), "synth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_outputs() {
    let dir = TempDir::new().unwrap();
    let empty = synth(&dir, "empty.jsonl", &[], 0, 0);
    assert_eq!(fs::read_to_string(empty).unwrap(), "");

    let a = fs::read(synth(&dir, "a.jsonl", &[], 20, 1)).unwrap();
    let a2 = fs::read(synth(&dir, "a2.jsonl", &[], 20, 1)).unwrap();
    let b = fs::read(synth(&dir, "b.jsonl", &[], 20, 2)).unwrap();
    assert_eq!(a, a2);
    assert_ne!(a, b);

    let deeds = synth(&dir, "deeds.jsonl", &["preset=deeds", "vocab=100"], 5000, 3);
    let text = fs::read_to_string(deeds).unwrap();
    let (docs, _) = textdate::corpus::read_documents(text.as_bytes(), None, true).unwrap();
    let mean = docs.iter().map(|d| f64::from(d.year.unwrap())).sum::<f64>() / docs.len() as f64;
    assert!((mean - 1237.0).abs() < 3.0, "{mean}");
    let mean_len = docs.iter().map(|d| d.len() as f64).sum::<f64>() / docs.len() as f64;
    assert!((mean_len - 237.0).abs() < 10.0, "{mean_len}");
}
