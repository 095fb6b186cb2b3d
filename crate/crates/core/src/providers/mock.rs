//! Deterministic offline stand-ins for the neural services.
//!
//! Each mock is a pure function of its inputs. The chat mock behaves like a
//! crude lexicon-driven analyst: it echoes words from the news text, reacts
//! to charged or sourcing vocabulary, and pads its answers with filler that
//! is neither relevant nor supported by any evidence corpus.

use std::collections::HashSet;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::{ChatModel, ChatTurn, Embedder, Role, SupportScorer};
use crate::domain::{tokenize, EmbeddingVec};
use crate::error::{Error, Result};

/// Words the mock analyst reads as sensational framing.
pub const SENSATIONAL_CUES: &[&str] = &[
    "shocking",
    "miracle",
    "secret",
    "exposed",
    "hoax",
    "unbelievable",
    "banned",
    "conspiracy",
    "outrage",
    "bombshell",
    "scandalous",
    "leaked",
];

/// Words the mock analyst reads as measured, sourced reporting.
pub const CREDIBLE_CUES: &[&str] = &[
    "announced",
    "officials",
    "report",
    "confirmed",
    "statement",
    "according",
    "agency",
    "quarterly",
    "published",
    "spokesperson",
    "census",
    "ministry",
];

const FILLER: &[&str] = &[
    "quorl", "venthic", "marrowtide", "plinth", "oskary", "trevalent", "dunmore", "ashcombe",
    "velloring", "quadrix", "tamsel", "norrowick", "fennimal", "grisp", "holloway", "istrane",
    "jorvast", "kelming", "lustrane", "mavrick", "nepsy", "orlath", "pindle", "quessa",
    "rannoch", "sollery", "tunkett", "umbrix", "vastow", "wexley",
];

const PROMPT_STOPWORDS: &[&str] = &[
    "please", "analyze", "describe", "the", "of", "this", "piece", "news", "in", "that",
    "between", "and", "utilized", "appears", "a", "an",
];

fn fnv64(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
        h.write(&[0xff]);
    }
    h.finish()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Offline chat model. Turn one is answered with an analysis, any later
/// user turn with a verdict.
#[derive(Debug, Clone)]
pub struct MockChat {
    model: String,
}

impl MockChat {
    pub fn new(model: impl Into<String>) -> Self {
        MockChat {
            model: model.into(),
        }
    }
}

struct Reading {
    focus: String,
    topic: Vec<String>,
    cue: Option<(String, bool)>,
    image_ref: Option<String>,
    leans_fake: bool,
    seed: u64,
}

impl Reading {
    fn from_history(history: &[ChatTurn]) -> Reading {
        let first = &history[0];
        let (news, prompt) = match first.content.rsplit_once("\n\n") {
            Some((n, p)) => (n, p),
            None => (first.content.as_str(), first.content.as_str()),
        };
        let focus_words: Vec<String> = tokenize(prompt)
            .into_iter()
            .filter(|t| !PROMPT_STOPWORDS.contains(&t.as_str()))
            .collect();
        let focus = if focus_words.is_empty() {
            "overall".to_string()
        } else {
            focus_words.join(" ")
        };

        let tokens = tokenize(news);
        let mut sensational = 0usize;
        let mut credible = 0usize;
        let mut cue = None;
        let mut topic = Vec::new();
        for t in &tokens {
            if SENSATIONAL_CUES.contains(&t.as_str()) {
                sensational += 1;
                cue.get_or_insert((t.clone(), true));
            } else if CREDIBLE_CUES.contains(&t.as_str()) {
                credible += 1;
                cue.get_or_insert((t.clone(), false));
            } else if t.chars().count() > 3 && !topic.contains(t) && topic.len() < 3 {
                topic.push(t.clone());
            }
        }
        if topic.is_empty() {
            topic.push("its subject".to_string());
        }

        let mut h = FnvHasher::default();
        for turn in history {
            h.write(format!("{:?}", turn.role).as_bytes());
            h.write(turn.content.as_bytes());
            h.write(&[0xff]);
        }
        Reading {
            focus,
            topic,
            cue,
            image_ref: first.image_ref.clone(),
            leans_fake: sensational > credible,
            seed: h.finish(),
        }
    }

    fn filler(&self, salt: u64, n: usize) -> Vec<&'static str> {
        let mut state = self.seed ^ salt;
        (0..n)
            .map(|_| {
                state = splitmix(state);
                FILLER[(state % FILLER.len() as u64) as usize]
            })
            .collect()
    }

    fn topic_phrase(&self) -> String {
        match self.topic.as_slice() {
            [a] => a.clone(),
            [a, b] => format!("{a} and {b}"),
            [a, b, c, ..] => format!("{a}, {b} and {c}"),
            [] => unreachable!(),
        }
    }

    fn analysis(&self) -> String {
        let mut out = vec![format!(
            "The {} of this news centers on {}.",
            self.focus,
            self.topic_phrase()
        )];
        match &self.cue {
            Some((cue, true)) => out.push(format!(
                "The term {cue} signals sensational and fabricated framing."
            )),
            Some((cue, false)) => out.push(format!(
                "The term {cue} signals measured and verified framing."
            )),
            None => out.push("No strongly charged wording appears in the text.".to_string()),
        }
        if let Some(r) = &self.image_ref {
            out.push(format!(
                "The attached image {r} was examined for this {} analysis.",
                self.focus
            ));
        }
        let f = self.filler(1, 3);
        out.push(format!(
            "Further {} {} {} considerations remain open.",
            f[0], f[1], f[2]
        ));
        out.join(" ")
    }

    fn judgment(&self) -> String {
        let verdict = if self.leans_fake { "fake" } else { "real" };
        let mut out = vec![format!(
            "Based on the {} analysis, this news is most likely {verdict}.",
            self.focus
        )];
        match &self.cue {
            Some((cue, true)) => out.push(format!(
                "The {cue} wording points to fabricated content."
            )),
            Some((cue, false)) => out.push(format!(
                "The {cue} wording points to verified content."
            )),
            None => out.push("The evidence is inconclusive.".to_string()),
        }
        let f = self.filler(2, 2);
        out.push(format!("Overall {} and {} factors were weighed.", f[0], f[1]));
        out.join(" ")
    }
}

impl ChatModel for MockChat {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, history: &[ChatTurn]) -> Result<String> {
        let reading = Reading::from_history(history);
        let user_turns = history.iter().filter(|t| t.role == Role::User).count();
        Ok(if user_turns <= 1 {
            reading.analysis()
        } else {
            reading.judgment()
        })
    }
}

/// Hashing embedder: each lowercased token adds a signed unit to four
/// hashed buckets; the sum is L2-normalized. Texts without tokens map to
/// the zero vector.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    profile: String,
}

/// Buckets touched per token.
const PROBES: usize = 4;

impl MockEmbedder {
    pub fn new(profile: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(MockEmbedder {
            dim,
            profile: profile.into(),
        })
    }

    fn embed_one(&self, text: &str) -> EmbeddingVec {
        let mut acc = vec![0.0f64; self.dim];
        for tok in tokenize(text) {
            let mut state = fnv64(&[self.profile.as_bytes(), tok.as_bytes()]);
            for _ in 0..PROBES {
                state = splitmix(state);
                let bucket = (state % self.dim as u64) as usize;
                let sign = if (state >> 63) == 0 { 1.0 } else { -1.0 };
                acc[bucket] += sign;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVec::new(acc).expect("finite by construction")
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn overlap(sentence: &str, document: &str) -> (usize, usize, usize) {
    let s: HashSet<String> = tokenize(sentence).into_iter().collect();
    let d: HashSet<String> = tokenize(document).into_iter().collect();
    (s.intersection(&d).count(), s.len(), d.len())
}

/// Stance mock: share of the sentence's distinct tokens found in the document.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockStance;

impl SupportScorer for MockStance {
    fn raw_score(&self, sentence: &str, document: &str) -> Result<f64> {
        let (common, s, _) = overlap(sentence, document);
        Ok(if s == 0 { 0.0 } else { common as f64 / s as f64 })
    }
}

/// Summary-precision mock: share of the document's distinct tokens found in
/// the sentence, capped at 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSummary;

impl SupportScorer for MockSummary {
    fn raw_score(&self, sentence: &str, document: &str) -> Result<f64> {
        let (common, _, d) = overlap(sentence, document);
        Ok(if d == 0 {
            0.0
        } else {
            (common as f64 / d as f64).min(1.0)
        })
    }
}
