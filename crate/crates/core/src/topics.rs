//! Keyword extraction per cluster and the TC / TD / TQ topic-quality stack.
//!
//! NPPMI uses the natural log with probabilities estimated from document-level
//! co-occurrence (two words co-occur when they appear in the same post).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const DEFAULT_KEYWORDS: usize = 15;
pub const NPPMI_EPS: f64 = 1e-12;

/// Lowercase whitespace tokens of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub term: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicKeywords {
    pub topic: usize,
    pub keywords: Vec<Keyword>,
    pub n_docs: usize,
}

impl TopicKeywords {
    pub fn terms(&self) -> Vec<&str> {
        self.keywords.iter().map(|k| k.term.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }
}

fn require_text(corpus: &Corpus) -> Result<()> {
    if corpus.has_text() {
        Ok(())
    } else {
        Err(Error::MissingText)
    }
}

/// Top-`k_kw` TF-IDF terms per cluster. Each cluster's member texts form one
/// pseudo-document; TF is the raw count and IDF = ln((1+|T|)/(1+df)) + 1.
/// Ties are broken by term order.
pub fn extract_keywords(corpus: &Corpus, labels: &[usize], n_topics: usize, k_kw: usize) -> Result<Vec<TopicKeywords>> {
    require_text(corpus)?;
    if labels.len() != corpus.len() {
        return Err(Error::DimensionMismatch {
            expected: corpus.len(),
            found: labels.len(),
            context: "assignment length".into(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_topics) {
        return Err(Error::InvalidParameter(format!(
            "label {bad} out of range for {n_topics} topics"
        )));
    }
    let mut tf: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); n_topics];
    let mut n_docs = vec![0; n_topics];
    for (text, &l) in corpus.texts().iter().zip(labels) {
        n_docs[l] += 1;
        for token in tokenize(text.as_deref().unwrap_or("")) {
            *tf[l].entry(token).or_insert(0) += 1;
        }
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for counts in &tf {
        for term in counts.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let t = n_topics as f64;
    Ok(tf
        .iter()
        .enumerate()
        .map(|(topic, counts)| {
            let mut scored: Vec<Keyword> = counts
                .iter()
                .map(|(term, &c)| Keyword {
                    term: term.clone(),
                    score: c as f64 * (((1.0 + t) / (1.0 + df[term.as_str()] as f64)).ln() + 1.0),
                })
                .collect();
            // BTreeMap order is term order, so a stable sort keeps ties lexicographic.
            scored.sort_by(|a, b| b.score.total_cmp(&a.score));
            scored.truncate(k_kw);
            TopicKeywords {
                topic,
                keywords: scored,
                n_docs: n_docs[topic],
            }
        })
        .collect())
}

/// Document frequencies and co-occurrence counts over a set of documents.
#[derive(Debug, Clone)]
pub struct CooccurrenceCounts {
    vocabulary: BTreeMap<String, usize>,
    /// Sorted document ids per word.
    postings: Vec<Vec<u32>>,
    documents: usize,
}

impl CooccurrenceCounts {
    pub fn from_documents<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut vocabulary = BTreeMap::new();
        let mut postings: Vec<Vec<u32>> = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            let unique: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
            for token in unique {
                let next = vocabulary.len();
                let id = *vocabulary.entry(token).or_insert(next);
                if id == postings.len() {
                    postings.push(Vec::new());
                }
                postings[id].push(d as u32);
            }
        }
        CooccurrenceCounts {
            vocabulary,
            postings,
            documents: docs.len(),
        }
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        require_text(corpus)?;
        let docs: Vec<&str> = corpus.texts().iter().map(|t| t.as_deref().unwrap_or("")).collect();
        Ok(Self::from_documents(&docs))
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocabulary.contains_key(word)
    }

    pub fn doc_count(&self, word: &str) -> usize {
        self.vocabulary.get(word).map_or(0, |&i| self.postings[i].len())
    }

    pub fn pair_count(&self, a: &str, b: &str) -> usize {
        let (Some(&i), Some(&j)) = (self.vocabulary.get(a), self.vocabulary.get(b)) else {
            return 0;
        };
        let (x, y) = (&self.postings[i], &self.postings[j]);
        let (mut p, mut q, mut n) = (0, 0, 0);
        while p < x.len() && q < y.len() {
            match x[p].cmp(&y[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        n
    }
}

/// NPPMI from raw counts: max(0, ln((P_ij+ε)/(P_i·P_j+ε))) / −ln(P_ij+ε), clamped to [0, 1].
pub fn nppmi_from_counts(documents: usize, c_i: usize, c_j: usize, c_ij: usize) -> f64 {
    if documents == 0 {
        return 0.0;
    }
    let d = documents as f64;
    let (p_i, p_j, p_ij) = (c_i as f64 / d, c_j as f64 / d, c_ij as f64 / d);
    let pmi = ((p_ij + NPPMI_EPS) / (p_i * p_j + NPPMI_EPS)).ln();
    if pmi <= 0.0 {
        return 0.0;
    }
    // pmi > 0 implies p_ij < 1, so the normalizer is positive.
    (pmi / -(p_ij + NPPMI_EPS).ln()).min(1.0)
}

pub fn nppmi(a: &str, b: &str, counts: &CooccurrenceCounts) -> f64 {
    nppmi_from_counts(
        counts.documents,
        counts.doc_count(a),
        counts.doc_count(b),
        counts.pair_count(a, b),
    )
}

/// Mean NPPMI over keyword pairs, or `None` when fewer than two keywords are in the vocabulary.
pub fn topic_coherence_single(keywords: &[&str], counts: &CooccurrenceCounts) -> Option<f64> {
    let present: Vec<&str> = keywords.iter().copied().filter(|w| counts.contains(w)).collect();
    if present.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            sum += nppmi(present[i], present[j], counts);
            pairs += 1;
        }
    }
    Some(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub tc: f64,
    pub per_topic: Vec<Option<f64>>,
    pub valid_topics: usize,
    pub invalid_topics: usize,
}

/// Corpus TC: mean of per-topic coherence over valid topics.
pub fn topic_coherence(topics: &[Vec<&str>], counts: &CooccurrenceCounts) -> Result<CoherenceReport> {
    let per_topic: Vec<Option<f64>> = topics.iter().map(|t| topic_coherence_single(t, counts)).collect();
    let valid: Vec<f64> = per_topic.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidTopics);
    }
    Ok(CoherenceReport {
        tc: valid.iter().sum::<f64>() / valid.len() as f64,
        valid_topics: valid.len(),
        invalid_topics: topics.len() - valid.len(),
        per_topic,
    })
}

/// TD = U / (k·|T|), with U the number of distinct keywords over all topics.
pub fn topic_diversity(topics: &[Vec<&str>], k: usize) -> f64 {
    if topics.is_empty() || k == 0 {
        return 0.0;
    }
    let unique: BTreeSet<&str> = topics.iter().flatten().copied().collect();
    unique.len() as f64 / (k * topics.len()) as f64
}

pub fn topic_quality(tc: f64, td: f64) -> f64 {
    tc * td
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub tc: f64,
    pub td: f64,
    pub tq: f64,
    pub valid_topics: usize,
    pub invalid_topics: usize,
    pub n_topics: usize,
    pub k_kw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub topic: usize,
    pub keywords: Vec<Keyword>,
    pub tc: Option<f64>,
    pub n_docs: usize,
    /// True when the cluster has no members.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topics: Vec<TopicEntry>,
    pub corpus: QualityReport,
}

/// Keywords, per-topic coherence, and corpus TC/TD/TQ for a clustering.
pub fn evaluate_topics(corpus: &Corpus, labels: &[usize], n_topics: usize, k_kw: usize) -> Result<TopicReport> {
    let keywords = extract_keywords(corpus, labels, n_topics, k_kw)?;
    let counts = CooccurrenceCounts::from_corpus(corpus)?;
    let lists: Vec<Vec<&str>> = keywords.iter().map(TopicKeywords::terms).collect();
    let coherence = topic_coherence(&lists, &counts)?;
    let td = topic_diversity(&lists, k_kw);
    Ok(TopicReport {
        corpus: QualityReport {
            tc: coherence.tc,
            td,
            tq: topic_quality(coherence.tc, td),
            valid_topics: coherence.valid_topics,
            invalid_topics: coherence.invalid_topics,
            n_topics,
            k_kw,
        },
        topics: keywords
            .into_iter()
            .zip(coherence.per_topic)
            .map(|(k, tc)| TopicEntry {
                empty: k.is_empty(),
                topic: k.topic,
                keywords: k.keywords,
                tc,
                n_docs: k.n_docs,
            })
            .collect(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GeoCoordinate, Post};
    use proptest::prelude::*;

    fn text_corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Post {
                    id: format!("d{i}"),
                    embedding: vec![1.0, i as f32],
                    coord: GeoCoordinate::new(0.0, 0.0).unwrap(),
                    text: Some(t.to_string()),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tokenizer_drops_short_tokens() {
        assert_eq!(tokenize("A flood  of\tWater x"), vec!["flood", "of", "water"]);
    }

    #[test]
    fn disjoint_vocabularies_give_exact_keywords() {
        let c = text_corpus(&["flood", "flood", "wind"]);
        let k = extract_keywords(&c, &[0, 0, 1], 2, 15).unwrap();
        assert_eq!(k[0].terms(), vec!["flood"]);
        assert_eq!(k[1].terms(), vec!["wind"]);
    }

    #[test]
    fn shared_word_ranks_below_exclusive_words() {
        let c = text_corpus(&["storm rain rain", "storm wind", "storm heat"]);
        let k = extract_keywords(&c, &[0, 1, 2], 3, 1).unwrap();
        assert_eq!(k[0].terms(), vec!["rain"]);
        assert_eq!(k[1].terms(), vec!["wind"]);
        let all = extract_keywords(&c, &[0, 1, 2], 3, 15).unwrap();
        assert_eq!(all[1].terms(), vec!["wind", "storm"]);
    }

    #[test]
    fn empty_cluster_is_flagged() {
        let c = text_corpus(&["aa bb", "cc dd"]);
        let r = evaluate_topics(&c, &[0, 0], 2, 2).unwrap();
        assert!(r.topics[1].empty && r.topics[1].keywords.is_empty() && r.topics[1].tc.is_none());
        assert_eq!(r.corpus.invalid_topics, 1);
    }

    #[test]
    fn missing_text_is_rejected() {
        let c = Corpus::new(vec![Post {
            id: "a".into(),
            embedding: vec![1.0],
            coord: GeoCoordinate::new(0.0, 0.0).unwrap(),
            text: None,
        }])
        .unwrap();
        assert!(matches!(extract_keywords(&c, &[0], 1, 3), Err(Error::MissingText)));
    }

    #[test]
    fn nppmi_examples() {
        let expected = (0.3f64 / 0.2).ln() / -(0.3f64).ln();
        assert!((nppmi_from_counts(10, 4, 5, 3) - expected).abs() < 1e-10);
        assert!((nppmi_from_counts(10, 4, 5, 3) - 0.3368).abs() < 5e-5);
        assert!((nppmi_from_counts(10, 4, 4, 4) - 1.0).abs() < 1e-10);
        assert_eq!(nppmi_from_counts(10, 5, 4, 2), 0.0);
        assert_eq!(nppmi_from_counts(10, 10, 10, 10), 0.0);
        assert_eq!(nppmi_from_counts(10, 3, 3, 0), 0.0);
    }

    #[test]
    fn coherence_examples() {
        let docs = ["aa bb", "aa bb", "cc", "dd"];
        let counts = CooccurrenceCounts::from_documents(&docs);
        assert_eq!(counts.pair_count("aa", "bb"), 2);
        let r = topic_coherence(&[vec!["aa", "bb"]], &counts).unwrap();
        assert!((r.tc - 1.0).abs() < 1e-10);
        // Each word in half the documents, together in a quarter: independent.
        let counts = CooccurrenceCounts::from_documents(&["xx yy", "xx", "yy", "zz"]);
        assert_eq!(topic_coherence(&[vec!["xx", "yy"]], &counts).unwrap().tc, 0.0);
        assert!(matches!(
            topic_coherence(&[vec!["xx"], vec![]], &counts),
            Err(Error::NoValidTopics)
        ));
    }

    #[test]
    fn diversity_examples() {
        let lists = vec![vec!["a", "b"], vec!["b", "c"], vec!["d", "e"]];
        assert!((topic_diversity(&lists, 2) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(topic_diversity(&[vec!["a", "b"], vec!["a", "b"]], 2), 0.5);
        assert_eq!(topic_diversity(&[vec!["a", "b"], vec!["c", "d"]], 2), 1.0);
        assert_eq!(topic_quality(0.5, 0.8), 0.4);
        assert_eq!(topic_quality(0.3, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn nppmi_bounded_and_symmetric(d in 1usize..500, a in 0usize..500, b in 0usize..500, c in 0usize..500) {
            let c_i = a % (d + 1);
            let c_j = b % (d + 1);
            let lo = (c_i + c_j).saturating_sub(d);
            let c_ij = lo + c % (c_i.min(c_j) - lo + 1);
            let v = nppmi_from_counts(d, c_i, c_j, c_ij);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, nppmi_from_counts(d, c_j, c_i, c_ij));
        }

        #[test]
        fn diversity_ignores_topic_order(mut lists in proptest::collection::vec(proptest::collection::vec("[a-e]", 3), 1..5)) {
            fn as_refs(l: &[Vec<String>]) -> Vec<Vec<&str>> {
                l.iter().map(|t| t.iter().map(String::as_str).collect()).collect()
            }
            let td = topic_diversity(&as_refs(&lists), 3);
            lists.reverse();
            prop_assert_eq!(td, topic_diversity(&as_refs(&lists), 3));
        }
    }
}
