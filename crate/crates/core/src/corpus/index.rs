use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{Document, Shingle};
use crate::error::{Error, Result};

/// Dense id of a distinct shingle inside a [`ShingleIndex`].
pub type ShingleId = u32;
/// Position of a training document inside a [`ShingleIndex`].
pub type DocIdx = u32;

#[derive(Debug, Clone)]
struct ShingleEntry {
    words: Box<[u32]>,
    /// (year, occurrences), sorted by year.
    by_year: Vec<(i32, u64)>,
    /// (document, occurrences), sorted by document.
    by_doc: Vec<(DocIdx, u32)>,
}

/// Occurrence counts of the k-shingles of a dated training corpus, by year and by document.
///
/// Immutable once built. Documents shorter than `k` contribute nothing and are left out.
#[derive(Debug, Clone)]
pub struct ShingleIndex {
    k: usize,
    token_ids: HashMap<String, u32>,
    tokens: Vec<String>,
    shingle_ids: HashMap<Box<[u32]>, ShingleId>,
    shingles: Vec<ShingleEntry>,
    doc_ids: Vec<String>,
    doc_years: Vec<i32>,
    /// Per document: (shingle, count) sorted by shingle id.
    doc_vectors: Vec<Vec<(ShingleId, u32)>>,
    slots_per_year: BTreeMap<i32, u64>,
    doc_ids_per_year: BTreeMap<i32, BTreeSet<String>>,
    year_range: (i32, i32),
}

impl ShingleIndex {
    /// Indexes the k-shingles of `docs`, all of which must carry a year.
    pub fn build(docs: &[Document], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("shingle size k must be at least 1"));
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = std::collections::HashSet::with_capacity(docs.len());
        for d in docs {
            d.year_or_err()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }

        let mut index = ShingleIndex {
            k,
            token_ids: HashMap::new(),
            tokens: Vec::new(),
            shingle_ids: HashMap::new(),
            shingles: Vec::new(),
            doc_ids: Vec::new(),
            doc_years: Vec::new(),
            doc_vectors: Vec::new(),
            slots_per_year: BTreeMap::new(),
            doc_ids_per_year: BTreeMap::new(),
            year_range: (i32::MAX, i32::MIN),
        };
        let mut year_counts: Vec<HashMap<i32, u64>> = Vec::new();

        for doc in docs.iter().filter(|d| d.len() >= k) {
            let year = doc.year_or_err()?;
            let idx = index.doc_ids.len() as DocIdx;
            let ids: Vec<u32> = doc.tokens.iter().map(|t| index.intern(t)).collect();

            let mut counts: HashMap<ShingleId, u32> = HashMap::new();
            for w in ids.windows(k) {
                let sid = match index.shingle_ids.get(w) {
                    Some(&sid) => sid,
                    None => {
                        let sid = index.shingles.len() as ShingleId;
                        index.shingle_ids.insert(w.into(), sid);
                        index.shingles.push(ShingleEntry {
                            words: w.into(),
                            by_year: Vec::new(),
                            by_doc: Vec::new(),
                        });
                        year_counts.push(HashMap::new());
                        sid
                    }
                };
                *counts.entry(sid).or_default() += 1;
            }
            let mut vector: Vec<(ShingleId, u32)> = counts.into_iter().collect();
            vector.sort_unstable();
            for &(sid, c) in &vector {
                index.shingles[sid as usize].by_doc.push((idx, c));
                *year_counts[sid as usize].entry(year).or_default() += u64::from(c);
            }

            let slots = (doc.len() - k + 1) as u64;
            *index.slots_per_year.entry(year).or_default() += slots;
            index
                .doc_ids_per_year
                .entry(year)
                .or_default()
                .insert(doc.id.clone());
            index.year_range.0 = index.year_range.0.min(year);
            index.year_range.1 = index.year_range.1.max(year);
            index.doc_ids.push(doc.id.clone());
            index.doc_years.push(year);
            index.doc_vectors.push(vector);
        }

        if index.doc_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (entry, by_year) in index.shingles.iter_mut().zip(year_counts) {
            let mut v: Vec<(i32, u64)> = by_year.into_iter().collect();
            v.sort_unstable();
            entry.by_year = v;
        }
        Ok(index)
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.token_ids.insert(token.to_string(), id);
        id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// (earliest, latest) training year.
    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    /// Number of distinct shingles.
    pub fn n_shingles(&self) -> usize {
        self.shingles.len()
    }

    /// Σ over training documents dated `y` of (|tokens| − k + 1).
    pub fn slots_per_year(&self) -> &BTreeMap<i32, u64> {
        &self.slots_per_year
    }

    pub fn doc_ids_per_year(&self) -> &BTreeMap<i32, BTreeSet<String>> {
        &self.doc_ids_per_year
    }

    /// Σ over all years of the shingle slots.
    pub fn total_slots(&self) -> u64 {
        self.slots_per_year.values().sum()
    }

    pub fn doc_id(&self, idx: DocIdx) -> &str {
        &self.doc_ids[idx as usize]
    }

    pub fn doc_year(&self, idx: DocIdx) -> i32 {
        self.doc_years[idx as usize]
    }

    pub fn doc_years(&self) -> &[i32] {
        &self.doc_years
    }

    /// Position of the training document with the given id.
    pub fn doc_index(&self, id: &str) -> Option<DocIdx> {
        self.doc_ids.iter().position(|d| d == id).map(|i| i as DocIdx)
    }

    /// Sparse count vector of a training document, sorted by shingle id.
    pub fn doc_vector(&self, idx: DocIdx) -> &[(ShingleId, u32)] {
        &self.doc_vectors[idx as usize]
    }

    /// N(D) for a training document.
    pub fn doc_slots(&self, idx: DocIdx) -> u64 {
        self.doc_vectors[idx as usize]
            .iter()
            .map(|&(_, c)| u64::from(c))
            .sum()
    }

    pub fn shingle_id(&self, shingle: &Shingle) -> Option<ShingleId> {
        self.lookup(shingle.words())
    }

    /// Id of the shingle spelled by `words`, if it occurs in training.
    pub fn lookup<S: AsRef<str>>(&self, words: &[S]) -> Option<ShingleId> {
        if words.len() != self.k {
            return None;
        }
        let ids: Option<Vec<u32>> = words
            .iter()
            .map(|w| self.token_ids.get(w.as_ref()).copied())
            .collect();
        self.shingle_ids.get(ids?.as_slice()).copied()
    }

    pub fn shingle(&self, id: ShingleId) -> Shingle {
        Shingle(
            self.shingles[id as usize]
                .words
                .iter()
                .map(|&t| self.tokens[t as usize].clone())
                .collect(),
        )
    }

    /// (year, occurrences) for a shingle, sorted by year.
    pub fn year_counts_by_id(&self, id: ShingleId) -> &[(i32, u64)] {
        &self.shingles[id as usize].by_year
    }

    /// (document, occurrences) for a shingle, sorted by document.
    pub fn postings(&self, id: ShingleId) -> &[(DocIdx, u32)] {
        &self.shingles[id as usize].by_doc
    }

    /// Occurrences of `shingle` per year; empty when unseen.
    pub fn counts(&self, shingle: &Shingle) -> BTreeMap<i32, u64> {
        self.shingle_id(shingle)
            .map(|id| self.year_counts_by_id(id).iter().copied().collect())
            .unwrap_or_default()
    }

    /// Occurrences of `shingle` per training document id; empty when unseen.
    pub fn doc_counts(&self, shingle: &Shingle) -> BTreeMap<String, u64> {
        self.shingle_id(shingle)
            .map(|id| {
                self.postings(id)
                    .iter()
                    .map(|&(d, c)| (self.doc_ids[d as usize].clone(), u64::from(c)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The k-shingles of an arbitrary document mapped to training ids, in document
    /// order; `None` marks a shingle never seen in training.
    pub fn shingle_ids_of(&self, doc: &Document) -> Vec<Option<ShingleId>> {
        if doc.len() < self.k {
            return Vec::new();
        }
        let ids: Vec<Option<u32>> = doc
            .tokens
            .iter()
            .map(|t| self.token_ids.get(t.as_str()).copied())
            .collect();
        ids.windows(self.k)
            .map(|w| {
                let w: Option<Vec<u32>> = w.iter().copied().collect();
                w.and_then(|w| self.shingle_ids.get(w.as_slice()).copied())
            })
            .collect()
    }

    /// Sparse count vector of an arbitrary document over training shingles, plus the
    /// counts of its shingles unknown to the index.
    pub fn count_vector_of(&self, doc: &Document) -> (Vec<(ShingleId, u32)>, Vec<u32>) {
        let mut known: HashMap<ShingleId, u32> = HashMap::new();
        let mut unknown: HashMap<&[String], u32> = HashMap::new();
        let ids = self.shingle_ids_of(doc);
        for (w, id) in doc.tokens.windows(self.k).zip(ids) {
            match id {
                Some(id) => *known.entry(id).or_default() += 1,
                None => *unknown.entry(w).or_default() += 1,
            }
        }
        let mut known: Vec<_> = known.into_iter().collect();
        known.sort_unstable();
        let mut unknown: Vec<u32> = unknown.into_values().collect();
        unknown.sort_unstable();
        (known, unknown)
    }
}
