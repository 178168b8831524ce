//! Sparse non-negative vectors, TF-IDF vectorization, and angular similarity.
//!
//! Items live in a high-dimensional non-negative space; similarity between
//! two vectors is `1 - theta/pi` where `theta` is the angle between them.
//! For non-negative vectors the angle is at most a right angle, so the
//! similarity lands in `[0.5, 1]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A sparse vector: (dimension, weight) entries with strictly increasing
/// dimensions and strictly positive weights. Zero entries are omitted.
/// The Euclidean norm is computed once at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl SparseVector {
    /// Builds a vector from (dimension, weight) pairs given in any order.
    /// Zero weights are dropped; duplicate dimensions, negative or
    /// non-finite weights are rejected.
    pub fn new(mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        for &(d, w) in &pairs {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Domain(format!(
                    "weight {w} at dimension {d} is not a finite non-negative real"
                )));
            }
        }
        pairs.retain(|&(_, w)| w > 0.0);
        pairs.sort_unstable_by_key(|&(d, _)| d);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate dimension index".into()));
        }
        let norm = pairs.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        Ok(Self { entries: pairs, norm })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// True for the zero vector (no entries).
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dot product via a merge walk over the sorted entry lists.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

impl TryFrom<Vec<(u32, f64)>> for SparseVector {
    type Error = Error;
    fn try_from(pairs: Vec<(u32, f64)>) -> Result<Self> {
        SparseVector::new(pairs)
    }
}

impl From<SparseVector> for Vec<(u32, f64)> {
    fn from(v: SparseVector) -> Self {
        v.entries
    }
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]` to absorb
/// floating-point drift before any `acos`.
pub fn cosine(u: &SparseVector, v: &SparseVector) -> Result<f64> {
    if u.is_zero() || u.norm == 0.0 {
        return Err(Error::ZeroNorm("left operand"));
    }
    if v.is_zero() || v.norm == 0.0 {
        return Err(Error::ZeroNorm("right operand"));
    }
    Ok((u.dot(v) / (u.norm * v.norm)).clamp(-1.0, 1.0))
}

/// Angular similarity `1 - theta/pi`, in `[0, 1]`; symmetric, and `1`
/// exactly when the vectors are parallel.
pub fn angular_similarity(u: &SparseVector, v: &SparseVector) -> Result<f64> {
    let c = cosine(u, v)?;
    Ok(1.0 - c.acos() / std::f64::consts::PI)
}

/// Term dictionary over a training corpus: every term gets a dense
/// dimension index, and document frequencies feed the IDF weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    docs: u32,
    index: HashMap<String, u32>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabularyData {
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    docs: u32,
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = Error;
    fn try_from(d: VocabularyData) -> Result<Self> {
        if d.terms.len() != d.doc_freq.len() {
            return Err(Error::Domain("vocabulary arrays disagree in length".into()));
        }
        if d.doc_freq.iter().any(|&f| f == 0 || f > d.docs) {
            return Err(Error::Domain(
                "document frequency outside 1..=corpus size".into(),
            ));
        }
        let index = d
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != d.terms.len() {
            return Err(Error::Domain("duplicate vocabulary term".into()));
        }
        Ok(Self { terms: d.terms, doc_freq: d.doc_freq, docs: d.docs, index })
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData { terms: v.terms, doc_freq: v.doc_freq, docs: v.docs }
    }
}

impl Vocabulary {
    pub fn builder() -> VocabularyBuilder {
        VocabularyBuilder::default()
    }

    /// Number of distinct terms (the vector dimensionality).
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn doc_count(&self) -> u32 {
        self.docs
    }

    pub fn dim(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<u32> {
        self.dim(term).map(|d| self.doc_freq[d as usize])
    }

    /// IDF factor for a dimension: `ln(N_docs / (doc_freq + 1)) + 1`.
    pub fn idf(&self, dim: u32) -> f64 {
        (f64::from(self.docs) / (f64::from(self.doc_freq[dim as usize]) + 1.0)).ln() + 1.0
    }
}

/// Accumulates documents one at a time; dimensions are assigned in first-seen
/// order, so a fixed corpus always yields the same vocabulary.
#[derive(Default)]
pub struct VocabularyBuilder {
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    docs: u32,
    index: HashMap<String, u32>,
}

impl VocabularyBuilder {
    pub fn add_document<'a>(&mut self, tokens: impl IntoIterator<Item = &'a str>) {
        self.docs += 1;
        let mut seen_here = std::collections::HashSet::new();
        for tok in tokens {
            if !seen_here.insert(tok.to_owned()) {
                continue;
            }
            match self.index.get(tok) {
                Some(&d) => self.doc_freq[d as usize] += 1,
                None => {
                    let d = self.terms.len() as u32;
                    self.index.insert(tok.to_owned(), d);
                    self.terms.push(tok.to_owned());
                    self.doc_freq.push(1);
                }
            }
        }
    }

    pub fn finish(self) -> Vocabulary {
        Vocabulary {
            terms: self.terms,
            doc_freq: self.doc_freq,
            docs: self.docs,
            index: self.index,
        }
    }
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// TF-IDF weighting of a token sequence against a training vocabulary.
/// Each in-vocabulary term gets weight `sqrt(tf) * (ln(N/(df+1)) + 1)`;
/// unknown terms are dropped. Errs if nothing remains.
pub fn vectorize(tokens: &[String], vocab: &Vocabulary) -> Result<SparseVector> {
    let mut tf: HashMap<u32, u32> = HashMap::new();
    for tok in tokens {
        if let Some(d) = vocab.dim(tok) {
            *tf.entry(d).or_insert(0) += 1;
        }
    }
    if tf.is_empty() {
        return Err(Error::EmptyVector(
            "no in-vocabulary terms after filtering".into(),
        ));
    }
    let pairs = tf
        .into_iter()
        .map(|(d, n)| (d, f64::from(n).sqrt() * vocab.idf(d)))
        .collect();
    SparseVector::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(pairs.to_vec()).unwrap()
    }

    #[test]
    fn construction_sorts_and_validates() {
        let a = v(&[(5, 1.0), (2, 3.0)]);
        assert_eq!(a.entries(), &[(2, 3.0), (5, 1.0)]);
        assert!((a.norm() - 10f64.sqrt()).abs() < 1e-12);
        assert!(SparseVector::new(vec![(1, -0.5)]).is_err());
        assert!(SparseVector::new(vec![(1, 1.0), (1, 2.0)]).is_err());
        // zero weights are omitted rather than rejected
        let b = SparseVector::new(vec![(0, 0.0), (3, 2.0)]).unwrap();
        assert_eq!(b.entries(), &[(3, 2.0)]);
    }

    #[test]
    fn self_similarity_is_one() {
        let a = v(&[(0, 1.0), (4, 2.0), (9, 0.5)]);
        assert_eq!(angular_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_vectors_score_half() {
        let a = v(&[(0, 1.0)]);
        let b = v(&[(1, 1.0)]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert!((angular_similarity(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_scores_three_quarters() {
        let a = v(&[(0, 1.0)]);
        let b = v(&[(0, 1.0), (1, 1.0)]);
        assert!((angular_similarity(&a, &b).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cosine_from_direct_arithmetic() {
        // (3,4)·(4,3) = 24, norms 5 and 5.
        let a = v(&[(0, 3.0), (1, 4.0)]);
        let b = v(&[(0, 4.0), (1, 3.0)]);
        let expected = 24.0 / 25.0;
        assert!((cosine(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_rejected() {
        let z = SparseVector::new(vec![]).unwrap();
        let a = v(&[(0, 1.0)]);
        assert!(matches!(cosine(&z, &a), Err(Error::ZeroNorm(_))));
        assert!(matches!(angular_similarity(&a, &z), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn vectorize_matches_stated_weighting() {
        // Corpus of 4 docs; "common" appears in every one.
        let mut b = Vocabulary::builder();
        for _ in 0..4 {
            b.add_document(["common"]);
        }
        let vocab = b.finish();
        let out = vectorize(&["common".into()], &vocab).unwrap();
        // single occurrence of a term present in all N docs:
        // sqrt(1) * (ln(N/(N+1)) + 1)
        let expected = (4.0f64 / 5.0).ln() + 1.0;
        assert_eq!(out.entries().len(), 1);
        assert!((out.entries()[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_only_is_an_error() {
        let mut b = Vocabulary::builder();
        b.add_document(["known"]);
        let vocab = b.finish();
        let err = vectorize(&["unknown".into()], &vocab);
        assert!(matches!(err, Err(Error::EmptyVector(_))));
    }

    #[test]
    fn identical_documents_vectorize_identically() {
        let mut b = Vocabulary::builder();
        b.add_document(["alpha", "beta"]);
        b.add_document(["alpha", "gamma"]);
        let vocab = b.finish();
        let toks = tokenize("Alpha beta ALPHA");
        let u = vectorize(&toks, &vocab).unwrap();
        let w = vectorize(&toks, &vocab).unwrap();
        assert_eq!(u, w);
        assert_eq!(angular_similarity(&u, &w).unwrap(), 1.0);
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Hello, wor1d--x"), vec!["hello", "wor1d", "x"]);
        assert!(tokenize("--- ,, !").is_empty());
    }
}
