//! Generated datasets and evidence corpora for offline runs.
//!
//! Articles are made of pseudo-words with one cue word each: fake items
//! carry a sensational cue, real items a sourcing cue (the same lexicons the
//! mock chat model reacts to). Image features are pure noise. The matching
//! corpus holds one short document per cue plus topic documents built from
//! the article vocabulary.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{sub_seed, EmbeddingVec, Label, NewsInstance};
use crate::error::{Error, Result};
use crate::providers::{CREDIBLE_CUES, SENSATIONAL_CUES};
use crate::retrieval::CorpusDoc;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "n", "r", "s", "l"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_instances: usize,
    pub image_dim: usize,
    pub vocabulary_size: usize,
    pub sentences_per_article: usize,
    pub words_per_sentence: usize,
    pub topic_docs: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_instances: 200,
            image_dim: 16,
            vocabulary_size: 400,
            sentences_per_article: 3,
            words_per_sentence: 8,
            topic_docs: 40,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_instances == 0 || self.image_dim == 0 {
            return Err(Error::invalid("n_instances and image_dim must be positive"));
        }
        if self.vocabulary_size < 10 || self.sentences_per_article == 0 || self.words_per_sentence < 2 {
            return Err(Error::invalid("synthetic vocabulary or article shape too small"));
        }
        Ok(())
    }
}

/// Distinct three-syllable pseudo-words, none of them cue words.
pub fn vocabulary(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "vocabulary"));
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let word: String = (0..3)
            .map(|_| {
                format!(
                    "{}{}{}",
                    ONSETS.choose(&mut rng).unwrap(),
                    NUCLEI.choose(&mut rng).unwrap(),
                    CODAS.choose(&mut rng).unwrap()
                )
            })
            .collect();
        let is_cue = SENSATIONAL_CUES.contains(&word.as_str()) || CREDIBLE_CUES.contains(&word.as_str());
        if !is_cue && seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Balanced labelled articles (even indices real, odd fake).
pub fn dataset(cfg: &SyntheticConfig) -> Result<Vec<NewsInstance>> {
    cfg.validate()?;
    let vocab = vocabulary(cfg.vocabulary_size, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "dataset"));
    (0..cfg.n_instances)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            let cues = match label {
                Label::Fake => SENSATIONAL_CUES,
                Label::Real => CREDIBLE_CUES,
            };
            let cue = *cues.choose(&mut rng).unwrap();
            let cue_sentence = rng.random_range(0..cfg.sentences_per_article);
            let cue_slot = rng.random_range(1..cfg.words_per_sentence);
            let sentences: Vec<String> = (0..cfg.sentences_per_article)
                .map(|s| {
                    let mut words: Vec<String> = (0..cfg.words_per_sentence)
                        .map(|_| vocab.choose(&mut rng).unwrap().clone())
                        .collect();
                    if s == cue_sentence {
                        words[cue_slot] = cue.to_string();
                    }
                    words[0] = capitalize(&words[0]);
                    format!("{}.", words.join(" "))
                })
                .collect();
            let features: Vec<f64> = (0..cfg.image_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            Ok(NewsInstance {
                id: format!("syn-{i:04}"),
                text: sentences.join(" "),
                image_features: EmbeddingVec::new(features)?,
                label,
                image_ref: Some(format!("images/syn-{i:04}.jpg")),
            })
        })
        .collect()
}

/// Evidence documents: one per cue word plus `topic_docs` documents of
/// article vocabulary.
pub fn corpus(cfg: &SyntheticConfig) -> Vec<CorpusDoc> {
    let vocab = vocabulary(cfg.vocabulary_size, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "corpus"));
    let mut docs = Vec::new();
    for cue in SENSATIONAL_CUES {
        docs.push(CorpusDoc {
            doc_id: format!("cue-{cue}"),
            title: capitalize(cue),
            body: format!(
                "Stories using the term {cue} often rely on sensational and fabricated framing of events."
            ),
        });
    }
    for cue in CREDIBLE_CUES {
        docs.push(CorpusDoc {
            doc_id: format!("cue-{cue}"),
            title: capitalize(cue),
            body: format!(
                "Stories using the term {cue} usually follow measured and verified framing of events."
            ),
        });
    }
    for t in 0..cfg.topic_docs {
        let words: Vec<&str> = (0..12).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect();
        docs.push(CorpusDoc {
            doc_id: format!("topic-{t:03}"),
            title: String::new(),
            body: format!("The news of this topic centers on {}.", words.join(" ")),
        });
    }
    docs
}
