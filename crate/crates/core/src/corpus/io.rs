//! JSON Lines corpus files and TSV substitution tables.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::corpus::{preprocess, Document, RawDocument};
use crate::error::{Error, Result};

/// Whole-token replacements applied during preprocessing (e.g. spelling variants).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitutions(HashMap<String, String>);

impl Substitutions {
    pub fn from_pairs<A: Into<String>, B: Into<String>>(pairs: impl IntoIterator<Item = (A, B)>) -> Self {
        Substitutions(pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect())
    }

    /// Reads a two-column TSV (from-token, to-token). Blank lines and `#` comments are skipped.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut cols = trimmed.split('\t');
            let (Some(from), Some(to), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected exactly two tab-separated columns".into(),
                });
            };
            if from.is_empty() || from.contains(char::is_whitespace) || to.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "substitution tokens must be nonempty and contain no whitespace".into(),
                });
            }
            map.insert(from.to_string(), to.to_string());
        }
        Ok(Substitutions(map))
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.0.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A recoverable problem with one input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

fn for_each_line<R: BufRead>(
    reader: R,
    strict: bool,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<Vec<LineError>> {
    let mut problems = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match f(i + 1, &line) {
            Ok(()) => {}
            Err(e @ Error::DuplicateId(_)) => return Err(e),
            Err(e) if strict => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
            Err(e) => problems.push(LineError {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok(problems)
}

fn check_unique(seen: &mut HashSet<String>, id: &str) -> Result<()> {
    if seen.insert(id.to_string()) {
        Ok(())
    } else {
        Err(Error::DuplicateId(id.to_string()))
    }
}

/// Reads raw documents (`id`, `year`, `text`) from JSON Lines.
///
/// Malformed lines are returned as [`LineError`]s, or abort the read when `strict`.
/// Duplicate ids always abort.
pub fn read_raw_corpus<R: BufRead>(reader: R, strict: bool) -> Result<(Vec<RawDocument>, Vec<LineError>)> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let problems = for_each_line(reader, strict, |_, line| {
        let raw: RawDocument =
            serde_json::from_str(line).map_err(|e| Error::invalid(format!("malformed record: {e}")))?;
        check_unique(&mut seen, &raw.id)?;
        docs.push(raw);
        Ok(())
    })?;
    Ok((docs, problems))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Record {
    Tokens(Document),
    Raw(RawDocument),
}

/// Reads documents from JSON Lines holding either preprocessed `tokens` or raw `text`;
/// raw records are preprocessed on the way in.
pub fn read_documents<R: BufRead>(
    reader: R,
    substitutions: Option<&super::Substitutions>,
    strict: bool,
) -> Result<(Vec<Document>, Vec<LineError>)> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let problems = for_each_line(reader, strict, |_, line| {
        let record: Record =
            serde_json::from_str(line).map_err(|e| Error::invalid(format!("malformed record: {e}")))?;
        let doc = match record {
            Record::Tokens(d) => {
                if d.tokens.is_empty() {
                    return Err(Error::EmptyDocument { id: d.id });
                }
                d
            }
            Record::Raw(r) => preprocess(&r, substitutions)?,
        };
        check_unique(&mut seen, &doc.id)?;
        docs.push(doc);
        Ok(())
    })?;
    Ok((docs, problems))
}

/// Writes documents as JSON Lines (`id`, `year`, `tokens`).
pub fn write_documents<W: Write>(mut writer: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut writer, d).map_err(|e| Error::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
