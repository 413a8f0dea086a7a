//! Evaluation: error metrics, the train/validation/test protocol, reports, and a
//! synthetic generative corpus with known dates.

mod protocol;
mod report;
mod synth;

pub use protocol::{
    evaluate_split, run_protocol, DocPrediction, EvalReport, MethodResult, MethodSpec, ProtocolOptions, ProtocolResult,
};
pub use report::{format_sig, write_predictions_tsv, write_table, write_tsv};
pub use synth::{
    generate_corpus, DateDistribution, LengthDistribution, SyntheticModel, SyntheticSpec, SyntheticWord, Trajectory,
};

use crate::error::{Error, Result};
use crate::estimate::median;

/// RMSE, MAE and MedAE of a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub medae: f64,
}

pub fn metrics(truths: &[f64], estimates: &[f64]) -> Result<ErrorMetrics> {
    if truths.len() != estimates.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: estimates.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::invalid("metrics need at least one estimate"));
    }
    let abs: Vec<f64> = truths.iter().zip(estimates).map(|(t, e)| (t - e).abs()).collect();
    let n = abs.len() as f64;
    let mae = abs.iter().sum::<f64>() / n;
    let rmse = (abs.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    Ok(ErrorMetrics {
        // equal errors can leave the root a rounding step below the mean
        rmse: rmse.max(mae),
        mae,
        medae: median(&abs).expect("nonempty"),
    })
}

/// Parses flat `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            });
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.retain(|(old, _)| *old != k);
        out.push((k, v));
    }
    Ok(out)
}
