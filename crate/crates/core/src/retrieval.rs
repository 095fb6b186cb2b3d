//! Local evidence corpus and Okapi BM25 retrieval.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::domain::tokenize;
use crate::error::{Error, Result};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_P: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

/// Term postings over document bodies.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    docs: Vec<CorpusDoc>,
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<usize>,
    avg_doc_len: f64,
}

impl InvertedIndex {
    pub fn build(docs: Vec<CorpusDoc>) -> Result<InvertedIndex> {
        if docs.is_empty() {
            return Err(Error::invalid("cannot index an empty corpus"));
        }
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::invalid(format!("duplicate doc_id '{}'", d.doc_id)));
            }
            if d.body.trim().is_empty() {
                return Err(Error::invalid(format!("document '{}' has an empty body", d.doc_id)));
            }
        }
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let tokens = tokenize(&d.body);
            doc_lengths.push(tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((i, count));
            }
        }
        let avg_doc_len = doc_lengths.iter().sum::<usize>() as f64 / docs.len() as f64;
        Ok(InvertedIndex {
            docs,
            postings,
            doc_lengths,
            avg_doc_len,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn docs(&self) -> &[CorpusDoc] {
        &self.docs
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.docs
            .iter()
            .position(|d| d.doc_id == doc_id)
            .map(|i| self.doc_lengths[i])
    }

    /// (doc_id, term frequency) pairs for `term`, in corpus order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|list| {
                list.iter()
                    .map(|&(i, tf)| (self.docs[i].doc_id.as_str(), tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores every document with a nonzero BM25 score for `query`.
    /// Each distinct query term counts once.
    fn score_all(&self, query: &str) -> Result<Vec<(usize, f64)>> {
        if query.trim().is_empty() {
            return Err(Error::invalid("empty query"));
        }
        let terms: HashSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        let mut terms: Vec<String> = terms.into_iter().collect();
        terms.sort();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = tf as f64;
                let len_norm = 1.0 - BM25_B + BM25_B * self.doc_lengths[doc] as f64 / self.avg_doc_len;
                *scores.entry(doc).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0].doc_id.cmp(&self.docs[b.0].doc_id))
        });
        Ok(ranked)
    }

    /// Top `p` documents by descending score, ties by ascending `doc_id`.
    /// Documents scoring zero are never returned.
    pub fn bm25_topk(&self, query: &str, p: usize) -> Result<Vec<(&CorpusDoc, f64)>> {
        if p == 0 {
            return Err(Error::invalid("p must be positive"));
        }
        let ranked = self.score_all(query)?;
        Ok(ranked
            .into_iter()
            .take(p)
            .map(|(i, s)| (&self.docs[i], s))
            .collect())
    }
}

/// Per-sentence retrieval with a shared memo, safe for concurrent use.
pub struct Retriever<'a> {
    index: &'a InvertedIndex,
    p: usize,
    memo: RwLock<HashMap<String, Vec<(usize, f64)>>>,
}

impl<'a> Retriever<'a> {
    pub fn new(index: &'a InvertedIndex, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("retrieval p must be positive"));
        }
        Ok(Retriever {
            index,
            p,
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn retrieve(&self, query: &str) -> Result<Vec<&'a CorpusDoc>> {
        let cached = self.memo.read().expect("memo lock").get(query).cloned();
        let hits = match cached {
            Some(h) => h,
            None => {
                let mut h = self.index.score_all(query)?;
                h.truncate(self.p);
                self.memo
                    .write()
                    .expect("memo lock")
                    .entry(query.to_string())
                    .or_insert(h)
                    .clone()
            }
        };
        Ok(hits.into_iter().map(|(i, _)| &self.index.docs[i]).collect())
    }
}
