//! Post-hoc rationale refinement.
//!
//! Every sentence gets a factuality score (best evidence support among the
//! top-p retrieved documents, where support is the mean of the stance and
//! summary scores) and a relevance score (cosine between the article and
//! sentence embeddings). Each filter keeps the top fraction of sentences
//! within one rationale; the two filters are then combined.

use serde::{Deserialize, Serialize};

use crate::domain::{Perspective, Rationale, Sentence};
use crate::error::{Error, Result};
use crate::providers::{Embedder, EvidenceScorers};
use crate::retrieval::{CorpusDoc, InvertedIndex, Retriever, DEFAULT_P};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Keep sentences that pass both filters, each applied to the full rationale.
    #[default]
    Intersection,
    /// Apply the relevance filter only to factuality survivors.
    Sequential,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(CombineMode::Intersection),
            "sequential" => Ok(CombineMode::Sequential),
            other => Err(Error::invalid(format!(
                "unknown combine mode '{other}' (expected intersection|sequential)"
            ))),
        }
    }
}

fn half() -> f64 {
    0.5
}

fn default_p() -> usize {
    DEFAULT_P
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default = "half")]
    pub factuality_keep_fraction: f64,
    #[serde(default = "half")]
    pub relevance_keep_fraction: f64,
    #[serde(default = "default_p")]
    pub retrieval_p: usize,
    #[serde(default)]
    pub combine_mode: CombineMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            factuality_keep_fraction: 0.5,
            relevance_keep_fraction: 0.5,
            retrieval_p: DEFAULT_P,
            combine_mode: CombineMode::Intersection,
        }
    }
}

impl FilterConfig {
    pub fn keep_all() -> Self {
        FilterConfig {
            factuality_keep_fraction: 1.0,
            relevance_keep_fraction: 1.0,
            ..FilterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("factuality_keep_fraction", self.factuality_keep_fraction),
            ("relevance_keep_fraction", self.relevance_keep_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if self.retrieval_p == 0 {
            return Err(Error::invalid("retrieval_p must be positive"));
        }
        Ok(())
    }
}

/// Services the filters depend on.
#[derive(Clone, Copy)]
pub struct RefineDeps<'a> {
    pub retriever: &'a Retriever<'a>,
    pub scorers: EvidenceScorers<'a>,
    pub embedder: &'a dyn Embedder,
}

/// Max over `docs` of the mean of stance and summary support; 0 when
/// nothing was retrieved.
pub fn factuality_from_docs(
    sentence: &str,
    docs: &[&CorpusDoc],
    scorers: EvidenceScorers<'_>,
) -> Result<f64> {
    if sentence.trim().is_empty() {
        return Err(Error::invalid("empty sentence"));
    }
    let mut best = 0.0f64;
    for d in docs {
        let stance = scorers.stance_score(sentence, &d.body)?;
        let summary = scorers.summary_score(sentence, &d.body)?;
        best = best.max(0.5 * (stance + summary));
    }
    Ok(best)
}

/// Retrieves the top `p` documents for `sentence` and scores it against them.
pub fn factuality_score(
    sentence: &str,
    index: &InvertedIndex,
    scorers: EvidenceScorers<'_>,
    p: usize,
) -> Result<f64> {
    if sentence.trim().is_empty() {
        return Err(Error::invalid("empty sentence"));
    }
    let docs: Vec<&CorpusDoc> = index
        .bm25_topk(sentence, p)?
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    factuality_from_docs(sentence, &docs, scorers)
}

/// Cosine between the article and sentence embeddings.
pub fn relevance_score(article_text: &str, sentence: &str, embedder: &dyn Embedder) -> Result<f64> {
    if article_text.trim().is_empty() || sentence.trim().is_empty() {
        return Err(Error::invalid("relevance inputs must be nonempty"));
    }
    let v = embedder.embed_batch(&[article_text, sentence])?;
    v[0].cosine(&v[1])
}

/// `ceil(m * fraction)` clamped to `[1, m]`, tolerant of float noise such
/// as `10 * 0.7 = 7.000000000000001`.
pub fn retention_count(m: usize, fraction: f64) -> usize {
    if m == 0 {
        return 0;
    }
    let raw = (m as f64 * fraction - 1e-9).ceil();
    (raw.max(1.0) as usize).min(m)
}

/// Marks the top `retention_count(candidates.len(), fraction)` candidates by
/// score. Ties go to the earlier sentence.
fn mark_top(scores: &[f64], candidates: &[usize], fraction: f64) -> Vec<bool> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = retention_count(candidates.len(), fraction);
    let mut keep = vec![false; scores.len()];
    for &i in &order[..k] {
        keep[i] = true;
    }
    keep
}

/// Which sentences pass each filter and which are finally kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub factuality_pass: Vec<bool>,
    pub relevance_pass: Vec<bool>,
    pub kept: Vec<bool>,
}

/// Applies both filters to precomputed scores.
pub fn select_sentences(factuality: &[f64], relevance: &[f64], cfg: &FilterConfig) -> Result<Selection> {
    let m = factuality.len();
    if m == 0 {
        return Err(Error::invalid("cannot filter an empty rationale"));
    }
    if relevance.len() != m {
        return Err(Error::invalid("score lists differ in length"));
    }
    let all: Vec<usize> = (0..m).collect();
    let factuality_pass = mark_top(factuality, &all, cfg.factuality_keep_fraction);
    let relevance_pass = match cfg.combine_mode {
        CombineMode::Intersection => mark_top(relevance, &all, cfg.relevance_keep_fraction),
        CombineMode::Sequential => {
            let survivors: Vec<usize> = all.iter().copied().filter(|&i| factuality_pass[i]).collect();
            mark_top(relevance, &survivors, cfg.relevance_keep_fraction)
        }
    };
    let mut kept: Vec<bool> = factuality_pass
        .iter()
        .zip(&relevance_pass)
        .map(|(a, b)| *a && *b)
        .collect();
    if !kept.iter().any(|k| *k) {
        let best = (0..m)
            .max_by(|&a, &b| {
                (factuality[a] + relevance[a])
                    .total_cmp(&(factuality[b] + relevance[b]))
                    .then(b.cmp(&a))
            })
            .expect("m > 0");
        kept[best] = true;
    }
    Ok(Selection {
        factuality_pass,
        relevance_pass,
        kept,
    })
}

/// Keeps the top `keep_fraction` of sentences by the mean of their two
/// scores. Used to prune third-party rationales by combined score.
pub fn select_by_combined(factuality: &[f64], relevance: &[f64], keep_fraction: f64) -> Result<Vec<bool>> {
    if factuality.is_empty() || factuality.len() != relevance.len() {
        return Err(Error::invalid("score lists must be nonempty and of equal length"));
    }
    let combined: Vec<f64> = factuality
        .iter()
        .zip(relevance)
        .map(|(f, r)| 0.5 * (f + r))
        .collect();
    let all: Vec<usize> = (0..combined.len()).collect();
    Ok(mark_top(&combined, &all, keep_fraction))
}

/// A scored rationale with per-sentence filter decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedRationale {
    pub perspective: Perspective,
    /// All original sentences, annotated with scores when filtering ran.
    pub sentences: Vec<Sentence>,
    pub factuality_pass: Vec<bool>,
    pub relevance_pass: Vec<bool>,
    pub kept: Vec<bool>,
}

impl RefinedRationale {
    /// Marks every sentence as kept without scoring.
    pub fn unfiltered(rat: &Rationale) -> RefinedRationale {
        let m = rat.sentences.len();
        RefinedRationale {
            perspective: rat.perspective,
            sentences: rat.sentences.clone(),
            factuality_pass: vec![true; m],
            relevance_pass: vec![true; m],
            kept: vec![true; m],
        }
    }

    pub fn kept_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences
            .iter()
            .zip(&self.kept)
            .filter(|(_, k)| **k)
            .map(|(s, _)| s)
    }

    pub fn kept_texts(&self) -> Vec<&str> {
        self.kept_sentences().map(|s| s.text.as_str()).collect()
    }

    /// The kept sentences as a plain rationale, re-indexed from 0.
    pub fn to_rationale(&self) -> Rationale {
        let texts = self.kept_texts();
        let joined = texts.join(" ");
        Rationale {
            perspective: self.perspective,
            analysis_turn: joined,
            judgment_turn: String::new(),
            sentences: Sentence::indexed(texts.iter().map(|s| s.to_string()))
                .expect("kept sentences are nonempty"),
        }
    }

    fn scores(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let f: Option<Vec<f64>> = self.sentences.iter().map(|s| s.factuality).collect();
        let r: Option<Vec<f64>> = self.sentences.iter().map(|s| s.relevance).collect();
        Some((f?, r?))
    }

    /// Re-applies the filters with a different configuration, reusing the
    /// stored scores. Fails if the sentences were never scored.
    pub fn reselect(&self, cfg: &FilterConfig) -> Result<RefinedRationale> {
        let (f, r) = self
            .scores()
            .ok_or_else(|| Error::invalid("rationale sentences carry no scores"))?;
        let sel = select_sentences(&f, &r, cfg)?;
        Ok(RefinedRationale {
            perspective: self.perspective,
            sentences: self.sentences.clone(),
            factuality_pass: sel.factuality_pass,
            relevance_pass: sel.relevance_pass,
            kept: sel.kept,
        })
    }
}

fn check_bounds(s: &Sentence) -> Result<()> {
    if let Some(f) = s.factuality {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!("factuality {f} outside [0, 1]")));
        }
    }
    if let Some(r) = s.relevance {
        if !(-1.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("relevance {r} outside [-1, 1]")));
        }
    }
    Ok(())
}

/// Scores and filters one rationale against its article.
pub fn refine_rationale(
    rat: &Rationale,
    article_text: &str,
    cfg: &FilterConfig,
    deps: RefineDeps<'_>,
) -> Result<RefinedRationale> {
    cfg.validate()?;
    if rat.sentences.is_empty() {
        return Err(Error::invalid(format!(
            "{} rationale has no sentences",
            rat.perspective
        )));
    }
    if article_text.trim().is_empty() {
        return Err(Error::invalid("empty article text"));
    }
    let article = deps.embedder.embed(article_text)?;
    let texts: Vec<&str> = rat.sentences.iter().map(|s| s.text.as_str()).collect();
    let sentence_vecs = deps.embedder.embed_batch(&texts)?;

    let mut sentences = Vec::with_capacity(texts.len());
    for (s, v) in rat.sentences.iter().zip(&sentence_vecs) {
        let docs = deps.retriever.retrieve(&s.text)?;
        let scored = Sentence {
            factuality: Some(factuality_from_docs(&s.text, &docs, deps.scorers)?),
            relevance: Some(article.cosine(v)?),
            ..s.clone()
        };
        check_bounds(&scored)?;
        sentences.push(scored);
    }
    let f: Vec<f64> = sentences.iter().map(|s| s.factuality.unwrap()).collect();
    let r: Vec<f64> = sentences.iter().map(|s| s.relevance.unwrap()).collect();
    let sel = select_sentences(&f, &r, cfg)?;
    Ok(RefinedRationale {
        perspective: rat.perspective,
        sentences,
        factuality_pass: sel.factuality_pass,
        relevance_pass: sel.relevance_pass,
        kept: sel.kept,
    })
}

/// Refines each rationale independently, preserving order.
pub fn refine_all(
    rationales: &[Rationale],
    article_text: &str,
    cfg: &FilterConfig,
    deps: RefineDeps<'_>,
) -> Result<Vec<RefinedRationale>> {
    rationales
        .iter()
        .map(|r| refine_rationale(r, article_text, cfg, deps))
        .collect()
}

/// Mean retained scores at one keep fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    /// Factuality filter alone, averaged per rationale then across rationales.
    pub mean_factuality: f64,
    /// Relevance filter alone, averaged the same way.
    pub mean_relevance: f64,
    /// Both filters at this fraction under the configured combine mode.
    pub mean_kept_sentences: f64,
}

/// Replays the filters over already-scored rationales at several keep
/// fractions.
pub fn threshold_sweep(
    scored: &[RefinedRationale],
    fractions: &[f64],
    mode: CombineMode,
) -> Result<Vec<SweepPoint>> {
    if scored.is_empty() {
        return Err(Error::invalid("nothing to sweep"));
    }
    let scores: Vec<(Vec<f64>, Vec<f64>)> = scored
        .iter()
        .map(|r| {
            r.scores()
                .ok_or_else(|| Error::invalid("rationale sentences carry no scores"))
        })
        .collect::<Result<_>>()?;
    fractions
        .iter()
        .map(|&fraction| {
            let mut fact_sum = 0.0;
            let mut rel_sum = 0.0;
            let mut kept_sum = 0.0;
            for (f, r) in &scores {
                let all: Vec<usize> = (0..f.len()).collect();
                fact_sum += masked_mean(f, &mark_top(f, &all, fraction));
                rel_sum += masked_mean(r, &mark_top(r, &all, fraction));
                let cfg = FilterConfig {
                    factuality_keep_fraction: fraction,
                    relevance_keep_fraction: fraction,
                    combine_mode: mode,
                    ..FilterConfig::default()
                };
                cfg.validate()?;
                kept_sum += select_sentences(f, r, &cfg)?.kept.iter().filter(|k| **k).count() as f64;
            }
            let n = scores.len() as f64;
            Ok(SweepPoint {
                fraction,
                mean_factuality: fact_sum / n,
                mean_relevance: rel_sum / n,
                mean_kept_sentences: kept_sum / n,
            })
        })
        .collect()
}

fn masked_mean(values: &[f64], mask: &[bool]) -> f64 {
    let (sum, n) = values
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    sum / n as f64
}
