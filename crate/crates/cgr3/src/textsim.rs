//! Pluggable text similarity used for supporting-sentence selection and
//! question/context relevance.
//!
//! The default backend is lexical: IDF-weighted token overlap with
//! BM25-style term saturation, normalized so that a candidate identical to
//! the query scores 1.0 and a candidate sharing no vocabulary scores 0.0.
//! A remote-embedding backend speaks the same HTTP shape as the chat
//! endpoint family and maps cosine similarity to [0, 1].

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SimError {
    #[error("remote similarity backend failed for a batch of {batch_len} texts: {message}")]
    Remote { batch_len: usize, message: String },
}

/// Similarity scorer interface; scores are in [0, 1], higher = closer.
pub trait TextScorer {
    fn score(&self, query: &str, candidate: &str) -> Result<f64, SimError>;

    fn score_batch(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, SimError> {
        candidates.iter().map(|c| self.score(query, c)).collect()
    }
}

/// Indices of the `k` best candidates, score-descending, ties to the lowest
/// index. `k > |candidates|` returns all of them, ordered.
pub fn top_k(
    scorer: &dyn TextScorer,
    query: &str,
    candidates: &[String],
    k: usize,
) -> Result<Vec<usize>, SimError> {
    let scores = scorer.score_batch(query, candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// BM25-weighted lexical overlap scorer.
///
/// Corpus statistics (document frequencies, average length) come from the
/// context corpus it was built over; an empty corpus degenerates to uniform
/// IDF, which still ranks by term overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexicalScorer {
    doc_freq: HashMap<String, usize>,
    num_docs: usize,
    avg_doc_len: f64,
    k1: f64,
    b: f64,
}

impl Default for LexicalScorer {
    fn default() -> Self {
        LexicalScorer::from_corpus(std::iter::empty::<&str>())
    }
}

impl LexicalScorer {
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut num_docs = 0usize;
        let mut total_len = 0usize;
        for doc in corpus {
            let tokens = tokenize(doc);
            total_len += tokens.len();
            num_docs += 1;
            let unique: HashSet<String> = tokens.into_iter().collect();
            for tok in unique {
                *doc_freq.entry(tok).or_insert(0) += 1;
            }
        }
        let avg_doc_len = if num_docs == 0 {
            1.0
        } else {
            (total_len as f64 / num_docs as f64).max(1.0)
        };
        LexicalScorer {
            doc_freq,
            num_docs,
            avg_doc_len,
            k1: 1.2,
            b: 0.75,
        }
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Unnormalized query-vs-document weight: sum of per-term IDF with
    /// BM25 saturation.
    fn raw_score(&self, query_terms: &HashSet<String>, doc_tokens: &[String]) -> f64 {
        if doc_tokens.is_empty() {
            return 0.0;
        }
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for tok in doc_tokens {
            *tf.entry(tok.as_str()).or_insert(0) += 1;
        }
        let dl = doc_tokens.len() as f64;
        let mut score = 0.0;
        for term in query_terms {
            let freq = tf.get(term.as_str()).copied().unwrap_or(0) as f64;
            if freq == 0.0 {
                continue;
            }
            let sat = freq * (self.k1 + 1.0)
                / (freq + self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_len));
            score += self.idf(term) * sat;
        }
        score
    }
}

impl TextScorer for LexicalScorer {
    /// Raw overlap weight divided by the query's self-weight, clamped to
    /// [0, 1]. `score(a, a) == 1` for any non-empty `a` and disjoint
    /// vocabularies score 0.
    fn score(&self, query: &str, candidate: &str) -> Result<f64, SimError> {
        let query_tokens = tokenize(query);
        let query_terms: HashSet<String> = query_tokens.iter().cloned().collect();
        let self_weight = self.raw_score(&query_terms, &query_tokens);
        if self_weight <= 0.0 {
            return Ok(0.0);
        }
        let raw = self.raw_score(&query_terms, &tokenize(candidate));
        Ok((raw / self_weight).clamp(0.0, 1.0))
    }
}

/// Remote embedding scorer: POSTs `{"texts": [...]}` and expects
/// `{"embeddings": [[...], ...]}`, one vector per input text.
/// Cosine similarity is mapped to [0, 1] via `(x + 1) / 2`.
pub struct RemoteScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteScorer {
            endpoint: endpoint.into(),
            client: reqwest::blocking::Client::new(),
        }
    }

    fn embed(&self, texts: Vec<&str>) -> Result<Vec<Vec<f64>>, SimError> {
        let batch_len = texts.len();
        let resp: EmbedResponse = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| SimError::Remote {
                batch_len,
                message: e.to_string(),
            })?;
        if resp.embeddings.len() != batch_len {
            return Err(SimError::Remote {
                batch_len,
                message: format!("expected {batch_len} vectors, got {}", resp.embeddings.len()),
            });
        }
        Ok(resp.embeddings)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl TextScorer for RemoteScorer {
    fn score(&self, query: &str, candidate: &str) -> Result<f64, SimError> {
        let vecs = self.embed(vec![query, candidate])?;
        Ok(((cosine(&vecs[0], &vecs[1]) + 1.0) / 2.0).clamp(0.0, 1.0))
    }

    fn score_batch(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, SimError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut texts = vec![query];
        texts.extend(candidates.iter().map(String::as_str));
        let vecs = self.embed(texts)?;
        Ok(vecs[1..]
            .iter()
            .map(|v| ((cosine(&vecs[0], v) + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_strings_score_one() {
        let scorer = LexicalScorer::default();
        assert_eq!(scorer.score("a b c", "a b c").unwrap(), 1.0);
    }

    #[test]
    fn disjoint_vocabulary_scores_zero() {
        let scorer = LexicalScorer::default();
        assert_eq!(scorer.score("a b", "x y").unwrap(), 0.0);
    }

    #[test]
    fn empty_query_scores_zero() {
        let scorer = LexicalScorer::default();
        assert_eq!(scorer.score("", "anything").unwrap(), 0.0);
    }

    #[test]
    fn ranking_matches_hand_computed_idf_weights() {
        // 5-doc toy corpus. "rare" appears in 1 doc, "common" in 4.
        let corpus = [
            "rare common alpha",
            "common beta",
            "common gamma",
            "common delta",
            "epsilon zeta",
        ];
        let scorer = LexicalScorer::from_corpus(corpus.iter().copied());
        // idf(rare) = ln((5-1+0.5)/(1+0.5)+1) = ln(4) ; idf(common) = ln((5-4+0.5)/(4+0.5)+1) = ln(4/3)
        assert!((scorer.idf("rare") - 4.0f64.ln()).abs() < 1e-12);
        assert!((scorer.idf("common") - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        let query = "rare common";
        let candidates: Vec<String> = vec![
            "common only here".into(),   // matches common
            "rare word".into(),          // matches rare (higher idf)
            "nothing matches".into(),
            "rare common both".into(),   // matches both, best
        ];
        let order = top_k(&scorer, query, &candidates, 4).unwrap();
        assert_eq!(order, vec![3, 1, 0, 2]);
    }

    #[test]
    fn top_k_saturates_and_handles_empty() {
        let scorer = LexicalScorer::default();
        let candidates: Vec<String> = vec!["a".into(), "b".into()];
        assert_eq!(top_k(&scorer, "a b", &candidates, 10).unwrap().len(), 2);
        assert_eq!(top_k(&scorer, "a", &[], 3).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let scorer = LexicalScorer::default();
        let candidates: Vec<String> = vec!["x q".into(), "x q".into(), "q x".into()];
        let order = top_k(&scorer, "x q", &candidates, 3).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
    }
}
