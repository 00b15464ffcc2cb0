//! Tokenization, TF-IDF sentence vectors and cosine similarity.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, OnceLock};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::endpoint::ClassifierEndpoint;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn english_stopwords() -> Arc<HashSet<String>> {
    static WORDS: OnceLock<Arc<HashSet<String>>> = OnceLock::new();
    WORDS
        .get_or_init(|| {
            Arc::new(
                include_str!("../data/stopwords.txt")
                    .lines()
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect(),
            )
        })
        .clone()
}

/// Lowercasing word tokenizer. Tokens are alphanumeric runs; a hyphen
/// between two alphanumeric characters joins them with `_`.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: Option<Arc<HashSet<String>>>,
    min_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            stopwords: Some(english_stopwords()),
            min_len: 2,
        }
    }
}

impl Tokenizer {
    /// Same splitting rules with stopwords retained (used for n-grams).
    pub fn keep_stopwords() -> Self {
        Tokenizer {
            stopwords: None,
            min_len: 2,
        }
    }

    pub fn with_min_len(mut self, min_len: usize) -> Self {
        self.min_len = min_len;
        self
    }

    pub fn without_stopwords(mut self) -> Self {
        self.stopwords = None;
        self
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.as_ref().is_some_and(|s| s.contains(token))
    }

    pub fn tokenize(&self, sentence: &str) -> Vec<String> {
        let lowered = sentence.to_lowercase();
        let chars: Vec<char> = lowered.chars().collect();
        let mut tokens = Vec::new();
        let mut current = String::new();
        for (i, &ch) in chars.iter().enumerate() {
            if ch.is_alphanumeric() {
                current.push(ch);
            } else if ch == '-'
                && !current.is_empty()
                && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric())
            {
                current.push('_');
            } else if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
            .into_iter()
            .filter(|t| t.chars().count() >= self.min_len && !self.is_stopword(t))
            .collect()
    }
}

/// Tokenizes with the default English stopword list.
pub fn tokenize(sentence: &str) -> Vec<String> {
    Tokenizer::default().tokenize(sentence)
}

#[derive(Debug, Clone)]
pub struct VectorizerConfig {
    pub tokenizer: Tokenizer,
    /// Longest n-gram added to the vocabulary (1 or 2 by default).
    pub ngram_max: usize,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        VectorizerConfig {
            tokenizer: Tokenizer::default(),
            ngram_max: 2,
        }
    }
}

/// Token and n-gram terms (space-joined) in ascending term order.
fn terms(tokens: &[String], ngram_max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=ngram_max.max(1) {
        for window in tokens.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

/// Fitted vocabulary: column index per term, document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    df: Vec<usize>,
    n_docs: usize,
    ngram_max: usize,
    #[serde(skip, default)]
    idf_cache: Vec<f64>,
}

impl Vocabulary {
    pub fn dimension(&self) -> usize {
        self.df.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.df[i])
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        if let Some(&v) = self.idf_cache.get(column) {
            return v;
        }
        let n = self.n_docs as f64;
        ((1.0 + n) / (1.0 + self.df[column] as f64)).ln() + 1.0
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, usize)> {
        self.index.iter().map(|(t, &i)| (t.as_str(), i))
    }
}

/// Builds the vocabulary of unigrams and n-grams up to `config.ngram_max`,
/// counting each term once per sentence. Column indices follow term order.
pub fn fit_vectorizer<S: AsRef<str>>(sentences: &[S], config: &VectorizerConfig) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput("cannot fit a vocabulary on zero sentences".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in sentences {
        let tokens = config.tokenizer.tokenize(sentence.as_ref());
        let distinct: HashSet<String> = terms(&tokens, config.ngram_max).into_iter().collect();
        for term in distinct {
            *counts.entry(term).or_default() += 1;
        }
    }
    let mut index = BTreeMap::new();
    let mut df = Vec::with_capacity(counts.len());
    for (i, (term, count)) in counts.into_iter().enumerate() {
        index.insert(term, i);
        df.push(count);
    }
    let mut vocab = Vocabulary {
        index,
        df,
        n_docs: sentences.len(),
        ngram_max: config.ngram_max,
        idf_cache: Vec::new(),
    };
    vocab.idf_cache = (0..vocab.dimension()).map(|c| vocab.idf(c)).collect();
    Ok(vocab)
}

/// Dense sentence vector with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DefinitionVector<T: Scalar> {
    pub candidate_id: String,
    pub values: Vec<T>,
    pub norm: T,
    /// Zero vector (for instance an all-out-of-vocabulary sentence).
    pub degenerate: bool,
}

impl<T: Scalar> DefinitionVector<T> {
    pub fn new(candidate_id: impl Into<String>, values: Vec<T>) -> Self {
        let norm = euclidean_norm(&values);
        DefinitionVector {
            candidate_id: candidate_id.into(),
            degenerate: norm == T::zero(),
            values,
            norm,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Copy scaled to unit length; degenerate vectors are returned unchanged.
    pub fn normalized(&self) -> Self {
        if self.degenerate {
            return self.clone();
        }
        let values = self.values.iter().map(|&v| v / self.norm).collect();
        DefinitionVector::new(self.candidate_id.clone(), values)
    }
}

pub fn euclidean_norm<T: Scalar>(values: &[T]) -> T {
    values.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// TF-IDF vector of `sentence` (raw term counts times smoothed idf),
/// L2-normalized. Out-of-vocabulary terms are ignored.
pub fn embed<T: Scalar>(
    candidate_id: &str,
    sentence: &str,
    vocab: &Vocabulary,
    config: &VectorizerConfig,
) -> DefinitionVector<T> {
    let mut values = vec![T::zero(); vocab.dimension()];
    let tokens = config.tokenizer.tokenize(sentence);
    for term in terms(&tokens, vocab.ngram_max) {
        if let Some(col) = vocab.index_of(&term) {
            values[col] = values[col] + T::one();
        }
    }
    for (col, v) in values.iter_mut().enumerate() {
        if *v != T::zero() {
            *v = *v * T::of(vocab.idf(col));
        }
    }
    DefinitionVector::new(candidate_id, values).normalized()
}

/// Baseline vectors for a batch: fit on the batch, embed each sentence.
pub fn embed_baseline<T: Scalar>(
    ids: &[String],
    sentences: &[String],
    config: &VectorizerConfig,
) -> Result<(Vocabulary, Vec<DefinitionVector<T>>)> {
    let vocab = fit_vectorizer(sentences, config)?;
    let vectors = ids
        .par_iter()
        .zip(sentences.par_iter())
        .map(|(id, s)| embed(id, s, &vocab, config))
        .collect();
    Ok((vocab, vectors))
}

/// Cosine of the angle between two vectors.
///
/// Computed as `dot / sqrt(|a|^2 |b|^2)` so that `sim(a, a)` is exactly one.
pub fn cosine_similarity<T: Scalar>(a: &DefinitionVector<T>, b: &DefinitionVector<T>) -> Result<T> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let mut dot = T::zero();
    let mut aa = T::zero();
    let mut bb = T::zero();
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot = dot + x * y;
        aa = aa + x * x;
        bb = bb + y * y;
    }
    if aa == T::zero() || b.degenerate || a.degenerate || bb == T::zero() {
        let which = if aa == T::zero() { &a.candidate_id } else { &b.candidate_id };
        return Err(Error::DegenerateVector(which.clone()));
    }
    let sim = dot / (aa * bb).sqrt();
    Ok(sim.max(-T::one()).min(T::one()))
}

/// How a set of vectors was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Baseline,
    External,
    Fallback,
}

#[derive(Debug, Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f64>>,
}

/// Vectors from an external embedding service (`{"texts": [...]}` in,
/// `{"vectors": [[...]]}` out). Disabled endpoints and transport or parse
/// failures fall back to the baseline; inconsistent dimensions are an error.
pub fn embed_external(
    ids: &[String],
    sentences: &[String],
    endpoint: &ClassifierEndpoint,
    config: &VectorizerConfig,
) -> Result<(Vec<DefinitionVector<f64>>, EmbeddingSource)> {
    if !endpoint.enabled {
        let (_, vectors) = embed_baseline(ids, sentences, config)?;
        return Ok((vectors, EmbeddingSource::Baseline));
    }
    let fetched = endpoint
        .post_json(&json!({ "texts": sentences }))
        .and_then(|value| {
            serde_json::from_value::<VectorsResponse>(value)
                .map_err(|e| Error::Endpoint(format!("unparsable vectors: {e}")))
        })
        .and_then(|resp| {
            if resp.vectors.len() == sentences.len() {
                Ok(resp.vectors)
            } else {
                Err(Error::Endpoint(format!(
                    "expected {} vectors, got {}",
                    sentences.len(),
                    resp.vectors.len()
                )))
            }
        });
    match fetched {
        Ok(rows) => {
            let dim = rows.first().map_or(0, Vec::len);
            if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: bad.len(),
                });
            }
            let vectors = ids
                .iter()
                .zip(rows)
                .map(|(id, values)| DefinitionVector::new(id.clone(), values))
                .collect();
            Ok((vectors, EmbeddingSource::External))
        }
        Err(e) if endpoint.allow_fallback => {
            warn!("embedding endpoint failed, using baseline vectors: {e}");
            let (_, vectors) = embed_baseline(ids, sentences, config)?;
            Ok((vectors, EmbeddingSource::Fallback))
        }
        Err(e) => Err(e),
    }
}

/// On-disk vector cache row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub candidate_id: String,
    pub values: Vec<f64>,
}

impl From<&DefinitionVector<f64>> for VectorRecord {
    fn from(v: &DefinitionVector<f64>) -> Self {
        VectorRecord {
            candidate_id: v.candidate_id.clone(),
            values: v.values.clone(),
        }
    }
}

impl From<VectorRecord> for DefinitionVector<f64> {
    fn from(r: VectorRecord) -> Self {
        DefinitionVector::new(r.candidate_id, r.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> DefinitionVector<f64> {
        DefinitionVector::new("v", values.to_vec())
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Digital Twin is a virtual replica"),
            vec!["digital", "twin", "virtual", "replica"]
        );
        assert_eq!(
            tokenize("real-time, bi-directional data"),
            vec!["real_time", "bi_directional", "data"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("2D/3D data - x"), vec!["2d", "3d", "data"]);
        assert_eq!(
            Tokenizer::keep_stopwords().tokenize("Digital twin is defined"),
            vec!["digital", "twin", "is", "defined"]
        );
    }

    #[test]
    fn vocabulary_counts() {
        let cfg = VectorizerConfig::default();
        let vocab = fit_vectorizer(&["digital twin models", "digital twin sensors"], &cfg).unwrap();
        assert_eq!(vocab.document_frequency("digital"), Some(2));
        assert_eq!(vocab.document_frequency("digital twin"), Some(2));
        assert_eq!(vocab.document_frequency("twin models"), Some(1));

        let single = fit_vectorizer(&["alpha beta gamma"], &cfg).unwrap();
        assert!(single.terms().all(|(t, _)| single.document_frequency(t) == Some(1)));

        // disjoint: 3 + 2 unigrams/bigrams and 2 + 1
        let disjoint = fit_vectorizer(&["alpha beta gamma", "delta epsilon"], &cfg).unwrap();
        assert_eq!(disjoint.dimension(), (3 + 2) + (2 + 1));

        let empty: [&str; 0] = [];
        assert!(fit_vectorizer(&empty, &cfg).is_err());
    }

    #[test]
    fn embedding_properties() {
        let cfg = VectorizerConfig::default();
        let sentences = ["digital twin models", "digital twin sensors"];
        let vocab = fit_vectorizer(&sentences, &cfg).unwrap();
        let e: DefinitionVector<f64> = embed("a", sentences[0], &vocab, &cfg);
        assert_relative_eq!(e.norm, 1.0, epsilon = 1e-12);
        let oov: DefinitionVector<f64> = embed("b", "quantum entanglement", &vocab, &cfg);
        assert!(oov.degenerate);
        assert!(oov.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shared_token_weighs_less_than_unique() {
        // corpus {"a b", "a c"} with stopwords off and unigrams only:
        // idf(a) = ln(3/3) + 1 = 1, idf(b) = ln(3/2) + 1
        let cfg = VectorizerConfig {
            tokenizer: Tokenizer::default().without_stopwords().with_min_len(1),
            ngram_max: 1,
        };
        let vocab = fit_vectorizer(&["a b", "a c"], &cfg).unwrap();
        let e: DefinitionVector<f64> = embed("x", "a b", &vocab, &cfg);
        let wa = e.values[vocab.index_of("a").unwrap()];
        let wb = e.values[vocab.index_of("b").unwrap()];
        assert!(wa < wb);
        let idf_b = (1.5f64).ln() + 1.0;
        let norm = (1.0 + idf_b * idf_b).sqrt();
        assert_relative_eq!(wa, 1.0 / norm, epsilon = 1e-12);
        assert_relative_eq!(wb, idf_b / norm, epsilon = 1e-12);
    }

    #[test]
    fn cosine_cases() {
        let a = v(&[1.0, 2.0, 3.0]).normalized();
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let sim = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((sim - 0.974632).abs() < 1e-6);
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateVector(_))
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        let a32 = DefinitionVector::<f32>::new("a", vec![1.0, 2.0, 3.0]);
        let b32 = DefinitionVector::<f32>::new("b", vec![4.0, 5.0, 6.0]);
        assert!((cosine_similarity(&a32, &b32).unwrap() - 0.974632).abs() < 1e-5);
    }

    #[test]
    fn baseline_is_deterministic() {
        let ids: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let s: Vec<String> = ["digital twin of a city", "digital twin of a bridge", "a virtual model"]
            .map(String::from)
            .to_vec();
        let cfg = VectorizerConfig::default();
        let (v1, a) = embed_baseline::<f64>(&ids, &s, &cfg).unwrap();
        let (v2, b) = embed_baseline::<f64>(&ids, &s, &cfg).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_endpoint_uses_baseline() {
        let ids = vec!["a".to_string()];
        let s = vec!["digital twin model".to_string()];
        let (vecs, source) =
            embed_external(&ids, &s, &ClassifierEndpoint::disabled(), &VectorizerConfig::default()).unwrap();
        assert_eq!(source, EmbeddingSource::Baseline);
        assert_eq!(vecs.len(), 1);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            scale in 0.1f64..100.0,
        ) {
            let va = v(&a);
            let vb = v(&b);
            prop_assume!(!va.degenerate && !vb.degenerate);
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            let scaled = v(&a.iter().map(|x| x * scale).collect::<Vec<_>>());
            let sab = cosine_similarity(&scaled, &vb).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((ab - sab).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let aa = cosine_similarity(&va, &va).unwrap();
            prop_assert!((aa - 1.0).abs() < 1e-12);
            let n = va.normalized();
            prop_assert!(1.0 - cosine_similarity(&n, &vb.normalized()).unwrap() >= 0.0);
        }
    }
}
