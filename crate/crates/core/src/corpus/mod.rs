//! Document ingestion: preprocessing, tokenization, shingling and corpus splits.
//!
//! Raw text is reduced to a sequence of case-sensitive word tokens. Punctuation is
//! dropped, and every number (a digit string, a Roman numeral, or a token already
//! encased in exclamation marks such as `!xv!`) collapses to the single placeholder
//! [`NUM_TOKEN`], so that all numbers count as the same word.

mod index;
mod io;

pub use index::{DocIdx, ShingleId, ShingleIndex};
pub use io::{read_documents, read_raw_corpus, write_documents, LineError, Substitutions};

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Placeholder that replaces every number in a document.
pub const NUM_TOKEN: &str = "!NUM!";

/// Latin words that happen to be valid Roman numerals and are kept as words.
const ROMAN_STOPLIST: [&str; 4] = ["i", "mi", "di", "vi"];

// Additive forms such as "iiii" are common in medieval hands and are accepted.
static ROMAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^m{0,4}(cm|cd|d?c{0,4})(xc|xl|l?x{0,4})(ix|iv|v?i{0,4})$").unwrap()
});

static ENCASED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^![^!\s]+!$").unwrap());

static YEAR_RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(\d{1,4})\s*(?:[-\u{2010}-\u{2015}/]\s*(\d{1,4}))?\s*$").unwrap()
});

/// Inclusive bounds every document year must fall in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearBounds {
    pub min: i32,
    pub max: i32,
}

impl Default for YearBounds {
    fn default() -> Self {
        YearBounds {
            min: 1000,
            max: 1500,
        }
    }
}

impl YearBounds {
    pub fn contains(&self, year: i32) -> bool {
        (self.min..=self.max).contains(&year)
    }
}

/// A document as it arrives on disk: id, optional year and untokenized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default, deserialize_with = "deserialize_year")]
    pub year: Option<i32>,
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, year: Option<i32>, text: impl Into<String>) -> Self {
        RawDocument {
            id: id.into(),
            year,
            text: text.into(),
        }
    }

    /// Checks the year against `bounds`.
    pub fn validate(&self, bounds: &YearBounds) -> Result<()> {
        match self.year {
            Some(y) if !bounds.contains(y) => Err(Error::invalid(format!(
                "document {:?}: year {y} outside [{}, {}]",
                self.id, bounds.min, bounds.max
            ))),
            _ => Ok(()),
        }
    }
}

/// A preprocessed document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub year: Option<i32>,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, year: Option<i32>, tokens: Vec<String>) -> Self {
        Document {
            id: id.into(),
            year,
            tokens,
        }
    }

    /// Convenience constructor splitting `text` on whitespace, with no other processing.
    pub fn from_words(id: impl Into<String>, year: Option<i32>, text: &str) -> Self {
        Document::new(id, year, text.split_whitespace().map(str::to_string).collect())
    }

    /// N(D): the number of word tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub(crate) fn year_or_err(&self) -> Result<i32> {
        self.year.ok_or_else(|| Error::MissingYear {
            id: self.id.clone(),
        })
    }
}

/// A run of `k` consecutive tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Shingle(pub Vec<String>);

impl Shingle {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        Shingle(words.iter().map(|w| w.as_ref().to_string()).collect())
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Shingle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

fn deserialize_year<'de, D>(deserializer: D) -> std::result::Result<Option<i32>, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum YearField {
        Int(i64),
        Text(String),
    }
    match Option::<YearField>::deserialize(deserializer)? {
        None => Ok(None),
        Some(YearField::Int(y)) => i32::try_from(y)
            .map(Some)
            .map_err(|_| serde::de::Error::custom(format!("year {y} out of range"))),
        Some(YearField::Text(s)) => parse_year(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Parses a year, resolving a range such as `"1230–1231"` to its lower end.
pub fn parse_year(s: &str) -> std::result::Result<i32, String> {
    let caps = YEAR_RANGE
        .captures(s)
        .ok_or_else(|| format!("unrecognized year {s:?}"))?;
    let first: i32 = caps[1].parse().map_err(|_| format!("bad year {s:?}"))?;
    match caps.get(2) {
        Some(m) => {
            let second: i32 = m.as_str().parse().map_err(|_| format!("bad year {s:?}"))?;
            Ok(first.min(second))
        }
        None => Ok(first),
    }
}

fn is_number(token: &str) -> bool {
    if token.chars().all(|c| c.is_ascii_digit()) {
        return true;
    }
    if !ROMAN.is_match(token) {
        return false;
    }
    let lower = token.to_lowercase();
    !ROMAN_STOPLIST.contains(&lower.as_str())
}

/// Normalizes one whitespace-delimited raw token. Returns `None` when nothing is left.
fn normalize_token(raw: &str, substitutions: Option<&Substitutions>) -> Option<String> {
    if ENCASED.is_match(raw) {
        return Some(NUM_TOKEN.to_string());
    }
    let stripped: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
    if stripped.is_empty() {
        return None;
    }
    let word = match substitutions.and_then(|s| s.get(&stripped)) {
        Some(to) => to.to_string(),
        None => stripped,
    };
    if word.is_empty() {
        return None;
    }
    if is_number(&word) {
        Some(NUM_TOKEN.to_string())
    } else {
        Some(word)
    }
}

/// Tokenizes raw text: punctuation removed, numbers collapsed to [`NUM_TOKEN`], case kept.
pub fn tokenize(text: &str, substitutions: Option<&Substitutions>) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| normalize_token(raw, substitutions))
        .collect()
}

/// Turns a raw document into a tokenized [`Document`].
///
/// Fails with [`Error::EmptyDocument`] when the text is empty or nothing survives
/// preprocessing.
pub fn preprocess(raw: &RawDocument, substitutions: Option<&Substitutions>) -> Result<Document> {
    let tokens = tokenize(&raw.text, substitutions);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument {
            id: raw.id.clone(),
        });
    }
    Ok(Document::new(raw.id.clone(), raw.year, tokens))
}

/// All `max(0, m - k + 1)` k-shingles of `doc`, in document order, duplicates kept.
///
/// # Panics
///
/// Panics if `k == 0`.
pub fn extract_shingles(doc: &Document, k: usize) -> Vec<Shingle> {
    assert!(k >= 1, "shingle size must be at least 1");
    doc.tokens.windows(k).map(|w| Shingle(w.to_vec())).collect()
}

/// The distinct k-shingles of `doc`.
pub fn distinct_shingles(doc: &Document, k: usize) -> HashSet<&[String]> {
    assert!(k >= 1, "shingle size must be at least 1");
    doc.tokens.windows(k).collect()
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    /// The proportions 2608 : 419 : 326 out of 3353.
    pub const REFERENCE: SplitFractions = SplitFractions {
        train: 2608.0 / 3353.0,
        validation: 419.0 / 3353.0,
        test: 326.0 / 3353.0,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = SplitFractions {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::invalid(format!(
                "split fractions must all be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// A three-way partition of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Randomly partitions `docs` into train, validation and test sets.
///
/// Validation and test sizes are `round(n * fraction)` (at least one each); the
/// training set takes the remainder. Each part keeps the input order. The result
/// depends only on `seed`.
pub fn split_corpus<T>(docs: Vec<T>, fractions: SplitFractions, seed: u64) -> Result<Split<T>> {
    fractions.validate()?;
    let n = docs.len();
    if n < 3 {
        return Err(Error::TooFewDocuments { needed: 3, got: n });
    }
    let n_val = ((n as f64 * fractions.validation).round() as usize).max(1);
    let n_test = ((n as f64 * fractions.test).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::invalid(format!(
            "split of {n} documents leaves no training data"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // 0 = validation, 1 = test, 2 = train
    let mut part = vec![2u8; n];
    for &i in &order[..n_val] {
        part[i] = 0;
    }
    for &i in &order[n_val..n_val + n_test] {
        part[i] = 1;
    }

    let mut split = Split {
        train: Vec::with_capacity(n - n_val - n_test),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (doc, p) in docs.into_iter().zip(part) {
        match p {
            0 => split.validation.push(doc),
            1 => split.test.push(doc),
            _ => split.train.push(doc),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(doc: &Document) -> Vec<&str> {
        doc.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn punctuation_is_removed() {
        let d = preprocess(&RawDocument::new("a", None, "Omnibus sancte, matris!"), None).unwrap();
        assert_eq!(toks(&d), ["Omnibus", "sancte", "matris"]);
    }

    #[test]
    fn numbers_become_placeholder() {
        let d = preprocess(&RawDocument::new("a", None, "anno xv regni"), None).unwrap();
        assert_eq!(toks(&d), ["anno", NUM_TOKEN, "regni"]);
        let d = preprocess(&RawDocument::new("a", None, "anno !xv! regni 1230 MCCXXX"), None).unwrap();
        assert_eq!(toks(&d), ["anno", NUM_TOKEN, "regni", NUM_TOKEN, NUM_TOKEN]);
    }

    #[test]
    fn case_is_preserved() {
        let d = preprocess(&RawDocument::new("a", None, "Anno anno"), None).unwrap();
        assert_eq!(toks(&d), ["Anno", "anno"]);
        assert_ne!(d.tokens[0], d.tokens[1]);
    }

    #[test]
    fn roman_stoplist_words_survive() {
        let d = preprocess(&RawDocument::new("a", None, "i mi di vi vii Vi"), None).unwrap();
        assert_eq!(toks(&d), ["i", "mi", "di", "vi", NUM_TOKEN, "Vi"]);
    }

    #[test]
    fn latin_words_are_not_numerals() {
        for w in ["de", "in", "et", "dixi", "cum", "vel", "Ill", "mille"] {
            assert!(!is_number(w), "{w} misread as a number");
        }
        for w in ["xv", "XIV", "mcc", "iiii", "xl", "C", "42"] {
            assert!(is_number(w), "{w} should be a number");
        }
    }

    #[test]
    fn substitutions_apply_before_number_detection() {
        let subs = Substitutions::from_pairs([("quindecim", "xv"), ("Notingha", "Nottingham")]);
        let d = preprocess(
            &RawDocument::new("a", None, "anno quindecim de Notingha'"),
            Some(&subs),
        )
        .unwrap();
        assert_eq!(toks(&d), ["anno", NUM_TOKEN, "de", "Nottingham"]);
    }

    #[test]
    fn empty_after_preprocessing_is_an_error() {
        let err = preprocess(&RawDocument::new("z", None, " ,.; -- "), None).unwrap_err();
        assert!(matches!(err, Error::EmptyDocument { .. }));
        assert!(preprocess(&RawDocument::new("z", None, ""), None).is_err());
    }

    #[test]
    fn shingle_examples() {
        let d = Document::from_words("d", None, "a b c");
        assert_eq!(
            extract_shingles(&d, 2),
            vec![Shingle::new(&["a", "b"]), Shingle::new(&["b", "c"])]
        );
        assert_eq!(extract_shingles(&d, 1).len(), 3);
        let short = Document::from_words("d", None, "a b");
        assert!(extract_shingles(&short, 3).is_empty());
    }

    #[test]
    fn year_ranges_resolve_to_lower_year() {
        assert_eq!(parse_year("1230\u{2013}1231"), Ok(1230));
        assert_eq!(parse_year("1231-1230"), Ok(1230));
        assert_eq!(parse_year(" 1187 "), Ok(1187));
        assert!(parse_year("circa 1200").is_err());
        let raw: RawDocument =
            serde_json::from_str(r#"{"id":"x","year":"1230–1231","text":"t"}"#).unwrap();
        assert_eq!(raw.year, Some(1230));
        let raw: RawDocument = serde_json::from_str(r#"{"id":"x","year":null,"text":"t"}"#).unwrap();
        assert_eq!(raw.year, None);
    }

    #[test]
    fn year_bounds() {
        let b = YearBounds::default();
        assert!(RawDocument::new("a", Some(1200), "x").validate(&b).is_ok());
        assert!(RawDocument::new("a", Some(1600), "x").validate(&b).is_err());
    }

    #[test]
    fn split_matches_reference_sizes() {
        let docs: Vec<usize> = (0..3353).collect();
        let s = split_corpus(docs, SplitFractions::REFERENCE, 7).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (2608, 419, 326)
        );
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let docs: Vec<usize> = (0..100).collect();
        let f = SplitFractions::new(0.6, 0.2, 0.2).unwrap();
        let a = split_corpus(docs.clone(), f, 42).unwrap();
        let b = split_corpus(docs.clone(), f, 42).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(docs, f, 43).unwrap();
        assert_ne!(a, c);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitFractions::new(0.5, 0.2, 0.2).is_err());
        let f = SplitFractions::new(0.6, 0.2, 0.2).unwrap();
        assert!(matches!(
            split_corpus(vec![1, 2], f, 0),
            Err(Error::TooFewDocuments { .. })
        ));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn raw_text() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof![
                    "[A-Za-z]{1,8}",
                    "[ivxlcdm]{1,5}",
                    "[0-9]{1,4}",
                    "[a-z]{1,6}[,.;:'!?]",
                    "![a-z]{1,3}!",
                ],
                1..30,
            )
            .prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn preprocess_is_idempotent(text in raw_text()) {
                let raw = RawDocument::new("p", Some(1200), text);
                if let Ok(first) = preprocess(&raw, None) {
                    let again = preprocess(&RawDocument::new("p", Some(1200), first.tokens.join(" ")), None).unwrap();
                    prop_assert_eq!(&again.tokens, &first.tokens);
                    for t in &first.tokens {
                        prop_assert!(!t.is_empty());
                        prop_assert!(t == NUM_TOKEN || t.chars().all(char::is_alphanumeric));
                    }
                }
            }

            #[test]
            fn shingle_count_identity(words in proptest::collection::vec("[a-c]", 0..20), k in 1usize..5) {
                let doc = Document::new("d", None, words);
                let n = extract_shingles(&doc, k).len();
                if doc.len() >= k {
                    prop_assert_eq!(n + k - 1, doc.len());
                } else {
                    prop_assert_eq!(n, 0);
                }
            }
        }
    }
}
