//! Decomposition adapters: sequences become ordered n-grams, documents become
//! word sets. Sequence answers are verified by edit distance and certified
//! exact when the candidate counts allow it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cpq::Hit;
use crate::engine::{run_query, Selector};
use crate::error::{Error, Result};
use crate::index::{build_index, InvertedIndex};
use crate::model::{Keyword, ObjectRecord, Query, QueryItem};

pub const DEFAULT_GRAM_LEN: usize = 3;
pub const DEFAULT_CANDIDATES: usize = 32;
/// Candidate counts tried in turn before falling back to a full scan.
pub const ESCALATION_SCHEDULE: [usize; 4] = [32, 64, 128, 256];

/// An n-gram together with how many equal grams precede it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrderedNGram {
    pub gram: String,
    pub occurrence: u32,
}

impl OrderedNGram {
    pub fn new(gram: impl Into<String>, occurrence: u32) -> Self {
        Self {
            gram: gram.into(),
            occurrence,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("n-gram length must be at least 1"))
    } else {
        Ok(())
    }
}

/// Sliding windows of `n` characters, numbered per distinct gram left to right.
pub fn decompose_sequence(text: &str, n: usize) -> Result<Vec<OrderedNGram>> {
    check_n(n)?;
    let chars: Vec<char> = text.chars().collect();
    let mut seen: HashMap<&[char], u32> = HashMap::new();
    Ok(chars
        .windows(n)
        .map(|w| {
            let occ = seen.entry(w).or_insert(0);
            let g = OrderedNGram::new(w.iter().collect::<String>(), *occ);
            *occ += 1;
            g
        })
        .collect())
}

fn gram_counts(chars: &[char], n: usize) -> HashMap<&[char], u32> {
    let mut counts = HashMap::new();
    for w in chars.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Number of ordered n-grams two sequences share: per gram, the smaller multiplicity.
pub fn shared_gram_count(s: &str, q: &str, n: usize) -> Result<u32> {
    check_n(n)?;
    let s: Vec<char> = s.chars().collect();
    let q: Vec<char> = q.chars().collect();
    let cs = gram_counts(&s, n);
    Ok(gram_counts(&q, n)
        .into_iter()
        .map(|(g, c)| c.min(cs.get(g).copied().unwrap_or(0)))
        .sum())
}

/// Lowest possible shared-gram count of two sequences at edit distance `tau`;
/// zero or negative means no filtering power.
pub fn count_lower_bound(qlen: usize, slen: usize, n: usize, tau: usize) -> i64 {
    qlen.max(slen) as i64 - n as i64 + 1 - (tau * n) as i64
}

/// Levenshtein distance over characters with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

pub(crate) fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance if it is at most `limit`, otherwise `None`. Only the diagonal
/// band of width `2 * limit + 1` is filled.
pub fn edit_distance_within(a: &str, b: &str, limit: usize) -> Option<usize> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    banded_levenshtein(&a, &b, limit)
}

pub(crate) fn banded_levenshtein<T: PartialEq>(a: &[T], b: &[T], limit: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > limit {
        return None;
    }
    let inf = limit + 1;
    let m = b.len();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(limit.min(m) + 1) {
        *p = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(limit).max(1);
        let hi = (i + limit).min(m);
        cur.iter_mut().for_each(|c| *c = inf);
        if i <= limit {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= limit).then_some(prev[m])
}

/// True when every object outside the candidates must be farther than
/// `tau_kprime`: `c_k < qlen - n + 1 - tau_kprime * n`.
pub fn topk_certificate(c_k: u32, qlen: usize, n: usize, tau_kprime: usize) -> bool {
    (c_k as i64) < count_lower_bound(qlen, 0, n, tau_kprime)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub best_id: u32,
    pub best_distance: usize,
    pub certified: bool,
    pub k_used: usize,
    /// Count threshold in force when the scan ended.
    pub threshold_at_stop: i64,
    /// Edit distances actually computed.
    pub verified: usize,
}

/// Scans candidates (count desc) keeping the closest by edit distance, and
/// stops once the remaining counts cannot belong to anything closer.
pub fn verify_candidates<S: AsRef<str>>(
    query: &str,
    candidates: &[Hit],
    sequences: &[S],
    n: usize,
) -> Result<VerificationOutcome> {
    check_n(n)?;
    let first = candidates.first().ok_or(Error::NoCandidates)?;
    let q: Vec<char> = query.chars().collect();
    let chars_of = |id: u32| -> Result<Vec<char>> {
        sequences
            .get(id as usize)
            .map(|s| s.as_ref().chars().collect())
            .ok_or(Error::ObjectOutOfRange {
                object: id,
                num_objects: sequences.len() as u32,
            })
    };
    let qlen = q.len() as i64;
    let n_i = n as i64;
    let theta_for = |tau: usize| qlen - n_i + 1 - n_i * (tau as i64 - 1);

    let mut best_id = first.id;
    let mut tau = levenshtein(&q, &chars_of(first.id)?);
    let mut theta = theta_for(tau);
    let mut verified = 1;
    for c in &candidates[1..] {
        if theta > c.count as i64 {
            break;
        }
        let s = chars_of(c.id)?;
        if q.len().abs_diff(s.len()) > tau {
            continue;
        }
        verified += 1;
        if tau == 0 {
            continue;
        }
        if let Some(d) = banded_levenshtein(&q, &s, tau - 1) {
            tau = d;
            best_id = c.id;
            theta = theta_for(tau);
        }
    }
    let c_k = candidates.last().map_or(0, |h| h.count);
    Ok(VerificationOutcome {
        best_id,
        best_distance: tau,
        certified: topk_certificate(c_k, q.len(), n, tau),
        k_used: candidates.len(),
        threshold_at_stop: theta,
        verified,
    })
}

/// Exact 1-NN by edit distance over every sequence, lowest id on ties.
pub fn brute_force_nearest<S: AsRef<str>>(query: &str, sequences: &[S]) -> Option<(u32, usize)> {
    let q: Vec<char> = query.chars().collect();
    let mut best: Option<(u32, usize)> = None;
    for (i, s) in sequences.iter().enumerate() {
        let s: Vec<char> = s.as_ref().chars().collect();
        let d = match best {
            None => Some(levenshtein(&q, &s)),
            Some((_, 0)) => break,
            Some((_, b)) => banded_levenshtein(&q, &s, b - 1),
        };
        if let Some(d) = d {
            best = Some((i as u32, d));
        }
    }
    best
}

fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811C_9DC5u32, |h, &b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

/// Maps n-grams to keyword dimensions and disambiguators, built as objects
/// are encoded.
///
/// A gram's dimension is a 16-bit fold of its FNV-1a hash; grams sharing a
/// dimension get distinct disambiguators. The token packs the disambiguator
/// over the occurrence index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramVocabulary {
    n: usize,
    grams: BTreeMap<String, (u16, u16)>,
    dim_sizes: BTreeMap<u16, u16>,
}

impl GramVocabulary {
    pub fn new(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(Self {
            n,
            ..Self::default()
        })
    }

    pub fn gram_len(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    fn dim_of(gram: &str) -> u16 {
        let h = fnv1a(gram.as_bytes());
        ((h >> 16) ^ (h & 0xFFFF)) as u16
    }

    fn intern(&mut self, gram: &str) -> Result<(u16, u16)> {
        if let Some(&slot) = self.grams.get(gram) {
            return Ok(slot);
        }
        let dim = Self::dim_of(gram);
        let size = self.dim_sizes.entry(dim).or_insert(0);
        if *size == u16::MAX {
            return Err(Error::invalid(format!("too many grams hash to dimension {dim}")));
        }
        let slot = (dim, *size);
        *size += 1;
        self.grams.insert(gram.to_owned(), slot);
        Ok(slot)
    }

    pub fn lookup(&self, gram: &str) -> Option<(u16, u16)> {
        self.grams.get(gram).copied()
    }

    fn keyword(slot: (u16, u16), occurrence: u32) -> Result<Keyword> {
        if occurrence > u16::MAX as u32 {
            return Err(Error::invalid(format!(
                "gram repeats more than {} times",
                u16::MAX as u32 + 1
            )));
        }
        Ok(Keyword::new(slot.0, (slot.1 as u32) << 16 | occurrence))
    }

    pub fn encode_object(&mut self, id: u32, text: &str) -> Result<ObjectRecord> {
        let keywords = decompose_sequence(text, self.n)?
            .into_iter()
            .map(|g| Self::keyword(self.intern(&g.gram)?, g.occurrence))
            .collect::<Result<Vec<_>>>()?;
        ObjectRecord::new(id, keywords)
    }

    /// `None` when no gram of `text` occurs in any encoded object.
    pub fn encode_query(&self, id: u32, text: &str, k: usize) -> Result<Option<Query>> {
        let mut items = Vec::new();
        for g in decompose_sequence(text, self.n)? {
            if let Some(slot) = self.lookup(&g.gram) {
                items.push(QueryItem::point(Self::keyword(slot, g.occurrence)?));
            }
        }
        if items.is_empty() {
            return Ok(None);
        }
        Query::new(id, items, k).map(Some)
    }
}

/// How a sequence query was answered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceAnswer {
    pub best_id: u32,
    pub best_distance: usize,
    pub certified: bool,
    /// Candidate rounds run before stopping.
    pub rounds: usize,
    pub full_scan: bool,
    pub last: Option<VerificationOutcome>,
}

/// Sequences indexed by ordered n-grams.
#[derive(Debug, Clone)]
pub struct SequenceIndex {
    vocabulary: GramVocabulary,
    index: InvertedIndex,
    sequences: Vec<String>,
}

impl SequenceIndex {
    pub fn build(sequences: Vec<String>, n: usize) -> Result<Self> {
        let mut vocabulary = GramVocabulary::new(n)?;
        let objects = sequences
            .iter()
            .enumerate()
            .map(|(i, s)| vocabulary.encode_object(i as u32, s))
            .collect::<Result<Vec<_>>>()?;
        let index = build_index(&objects, None)?;
        Ok(Self {
            vocabulary,
            index,
            sequences,
        })
    }

    /// Reassembles a sequence index from a stored vocabulary and index.
    pub fn from_parts(vocabulary: GramVocabulary, index: InvertedIndex, sequences: Vec<String>) -> Result<Self> {
        if index.num_objects() as usize != sequences.len() {
            return Err(Error::Config(format!(
                "index holds {} objects but {} sequences were given",
                index.num_objects(),
                sequences.len()
            )));
        }
        Ok(Self {
            vocabulary,
            index,
            sequences,
        })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn vocabulary(&self) -> &GramVocabulary {
        &self.vocabulary
    }

    pub fn sequences(&self) -> &[String] {
        &self.sequences
    }

    /// The `k` objects sharing the most ordered n-grams with `query`.
    pub fn candidates(&self, query: &str, k: usize) -> Result<Vec<Hit>> {
        match self.vocabulary.encode_query(0, query, k)? {
            Some(q) => Ok(run_query(&self.index, &q, Selector::Cpq)?.entries),
            None => Ok(Vec::new()),
        }
    }

    /// Verifies `k` candidates without escalation.
    pub fn verify(&self, query: &str, k: usize) -> Result<VerificationOutcome> {
        let cands = self.candidates(query, k)?;
        verify_candidates(query, &cands, &self.sequences, self.vocabulary.gram_len())
    }

    /// 1-NN by edit distance: candidate rounds of growing size until one is
    /// certified, then a full scan.
    pub fn search(&self, query: &str, schedule: &[usize]) -> Result<SequenceAnswer> {
        if self.sequences.is_empty() {
            return Err(Error::NoCandidates);
        }
        let mut last = None;
        for (round, &k) in schedule.iter().enumerate() {
            let cands = self.candidates(query, k)?;
            if cands.is_empty() {
                break;
            }
            let outcome = verify_candidates(query, &cands, &self.sequences, self.vocabulary.gram_len())?;
            if outcome.certified {
                return Ok(SequenceAnswer {
                    best_id: outcome.best_id,
                    best_distance: outcome.best_distance,
                    certified: true,
                    rounds: round + 1,
                    full_scan: false,
                    last: Some(outcome),
                });
            }
            last = Some(outcome);
        }
        let (best_id, best_distance) =
            brute_force_nearest(query, &self.sequences).ok_or(Error::NoCandidates)?;
        Ok(SequenceAnswer {
            best_id,
            best_distance,
            certified: true,
            rounds: schedule.len(),
            full_scan: true,
            last,
        })
    }
}

/// Words of a document: lowercased, whitespace-split, stop words dropped, deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentVocabulary {
    words: BTreeMap<String, u32>,
    stopwords: BTreeSet<String>,
}

impl DocumentVocabulary {
    pub fn new<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: BTreeMap::new(),
            stopwords: stopwords
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn terms(&self, text: &str) -> BTreeSet<String> {
        text.split_whitespace()
            .map(str::to_lowercase)
            .filter(|w| !self.stopwords.contains(w))
            .collect()
    }

    /// Encodes a document, adding unseen words to the vocabulary.
    pub fn decompose_document(&mut self, id: u32, text: &str) -> Result<ObjectRecord> {
        let mut keywords = Vec::new();
        for w in self.terms(text) {
            let next = self.words.len() as u32;
            let token = *self.words.entry(w).or_insert(next);
            keywords.push(Keyword::new(0, token));
        }
        ObjectRecord::new(id, keywords)
    }

    /// `None` when the document has no known word.
    pub fn encode_query(&self, id: u32, text: &str, k: usize) -> Result<Option<Query>> {
        let items: Vec<QueryItem> = self
            .terms(text)
            .iter()
            .filter_map(|w| self.words.get(w))
            .map(|&t| QueryItem::point(Keyword::new(0, t)))
            .collect();
        if items.is_empty() {
            return Ok(None);
        }
        Query::new(id, items, k).map(Some)
    }
}
