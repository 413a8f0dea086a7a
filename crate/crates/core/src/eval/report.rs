//! TSV and aligned-table output for protocol results.

use std::io::Write;

use super::{EvalReport, ProtocolResult};
use crate::error::Result;

/// Formats `x` with 6 significant digits, like C's `%g`.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    const P: i32 = 6;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn na(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

/// One row per (method, split): `method params split n n_failed rmse mae medae`.
/// Failed methods get a row with split `error` and the message in `params`.
pub fn write_tsv<W: Write>(mut w: W, result: &ProtocolResult) -> Result<()> {
    writeln!(w, "method\tparams\tsplit\tn\tn_failed\trmse\tmae\tmedae")?;
    for r in &result.results {
        if let Some(e) = &r.error {
            writeln!(w, "{}\t{}\terror\t0\t0\tnan\tnan\tnan", r.method, e.replace(['\t', '\n'], " "))?;
            continue;
        }
        for rep in r.reports() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rep.method,
                na(&rep.params),
                rep.split,
                rep.n(),
                rep.n_failed,
                format_sig(rep.rmse),
                format_sig(rep.mae),
                format_sig(rep.medae)
            )?;
        }
    }
    Ok(())
}

fn pair(a: Option<&EvalReport>, b: Option<&EvalReport>, f: impl Fn(&EvalReport) -> f64) -> String {
    let v = |r: Option<&EvalReport>| r.map_or("-".to_string(), |r| format!("{:.1}", f(r)));
    match (a, b) {
        (None, Some(b)) => v(Some(b)),
        _ => format!("({}, {})", v(a), v(b)),
    }
}

/// Human-readable table: one row per method with `(val, test)` pairs per metric.
pub fn write_table<W: Write>(mut w: W, result: &ProtocolResult) -> Result<()> {
    let header = ["method", "params", "RMSE", "MAE", "MedAE"];
    let mut rows: Vec<[String; 5]> = Vec::new();
    for r in &result.results {
        if let Some(e) = &r.error {
            rows.push([r.method.clone(), format!("error: {e}"), String::new(), String::new(), String::new()]);
            continue;
        }
        let (v, t) = (r.validation.as_ref(), r.test.as_ref());
        rows.push([
            r.method.clone(),
            na(&r.params).to_string(),
            pair(v, t, |x| x.rmse),
            pair(v, t, |x| x.mae),
            pair(v, t, |x| x.medae),
        ]);
    }
    let mut widths = header.map(str::len);
    for row in &rows {
        for (wd, cell) in widths.iter_mut().zip(row) {
            *wd = (*wd).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &wd)| format!("{c:<wd$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let layout = if result.results.iter().any(|r| r.validation.is_some()) {
        "(val, test)"
    } else {
        "val+test"
    };
    writeln!(
        w,
        "# train {}, validation {}, test {}; metrics {layout}",
        result.n_train, result.n_validation, result.n_test
    )?;
    writeln!(w, "{}", line(header.to_vec()))?;
    for row in &rows {
        writeln!(w, "{}", line(row.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

/// Per-document rows: `method split id truth estimate abs_error failed`.
pub fn write_predictions_tsv<W: Write>(mut w: W, result: &ProtocolResult) -> Result<()> {
    writeln!(w, "method\tsplit\tid\ttruth\testimate\tabs_error\tfailed")?;
    for rep in result.reports() {
        for p in &rep.per_doc {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rep.method,
                rep.split,
                p.id,
                format_sig(p.truth),
                format_sig(p.estimate),
                format_sig(p.abs_error),
                u8::from(p.failed)
            )?;
        }
    }
    Ok(())
}
