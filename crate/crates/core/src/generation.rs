//! Multi-perspective rationale generation and sentence segmentation.
//!
//! Each perspective runs its own two-turn conversation: the news item plus
//! an analysis prompt, then a fixed judgment prompt appended to the same
//! conversation. The rationale text is the two assistant turns joined.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{NewsInstance, Perspective, Rationale};
use crate::error::{Error, Result};
use crate::providers::{ChatModel, ChatTurn};

/// Second-turn prompt shared by every perspective.
pub const JUDGMENT_PROMPT: &str = "Based on the analysis, determine whether this news with text and image is fake or real. Meanwhile, provide a comprehensive explanation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub perspective: Perspective,
    pub analysis_prompt: &'static str,
    pub judgment_prompt: &'static str,
}

impl PromptTemplate {
    pub const fn for_perspective(perspective: Perspective) -> PromptTemplate {
        let analysis_prompt = match perspective {
            Perspective::Sentiment => "Please analyze the sentiment of this piece of news.",
            Perspective::Propaganda => {
                "Please analyze the propaganda tactics utilized in this piece of news."
            }
            Perspective::Consistency => {
                "Please analyze the consistency between the text and the image of this piece of news."
            }
            Perspective::Object => {
                "Please analyze the object that appears in the image of this piece of news."
            }
            Perspective::Description => "Please describe this image in this piece of news.",
        };
        PromptTemplate {
            perspective,
            analysis_prompt,
            judgment_prompt: JUDGMENT_PROMPT,
        }
    }

    pub fn all() -> [PromptTemplate; 5] {
        Perspective::ALL.map(PromptTemplate::for_perspective)
    }

    /// First user turn: the news text followed by the analysis prompt, with
    /// the image reference attached.
    pub fn analysis_turn(&self, inst: &NewsInstance) -> ChatTurn {
        ChatTurn::user(format!("{}\n\n{}", inst.text.trim(), self.analysis_prompt))
            .with_image(inst.image_ref.clone())
    }
}

/// Runs the two-turn protocol for one perspective.
pub fn generate_rationale(
    inst: &NewsInstance,
    perspective: Perspective,
    chat: &dyn ChatModel,
) -> Result<Rationale> {
    let template = PromptTemplate::for_perspective(perspective);
    let ctx = || format!("instance {} / {perspective}", inst.id);

    let mut history = vec![template.analysis_turn(inst)];
    let analysis = chat
        .chat_complete(&history)
        .map_err(|e| e.with_context(&ctx()))?;
    history.push(ChatTurn::assistant(analysis.clone()));
    history.push(ChatTurn::user(template.judgment_prompt));
    let judgment = chat
        .chat_complete(&history)
        .map_err(|e| e.with_context(&ctx()))?;

    Ok(Rationale::from_turns(perspective, analysis, judgment))
}

/// Generates rationales for the given perspectives, in the order given.
/// A provider failure stops the instance at once; other failures are
/// collected so every perspective is attempted, and nothing is returned if
/// any failed.
pub fn generate_perspectives(
    inst: &NewsInstance,
    perspectives: &[Perspective],
    chat: &dyn ChatModel,
) -> Result<Vec<Rationale>> {
    let mut out = Vec::with_capacity(perspectives.len());
    let mut failures: Vec<Error> = Vec::new();
    for &p in perspectives {
        match generate_rationale(inst, p, chat) {
            Ok(r) => out.push(r),
            Err(e) if e.is_provider() => return Err(e),
            Err(e) => failures.push(e),
        }
    }
    match failures.len() {
        0 => Ok(out),
        1 => Err(failures.remove(0)),
        _ => Err(Error::Precondition(
            failures
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

/// All five perspectives in canonical order.
pub fn generate_all(inst: &NewsInstance, chat: &dyn ChatModel) -> Result<Vec<Rationale>> {
    generate_perspectives(inst, &Perspective::ALL, chat)
}

/// Generates for many instances on a pool of `workers` threads. Results
/// come back in input order. After the first provider failure, jobs that
/// have not started yet are skipped and reported as unavailable.
pub fn generate_many(
    jobs: &[(&NewsInstance, Vec<Perspective>)],
    chat: &dyn ChatModel,
    workers: usize,
) -> Result<Vec<Result<Vec<Rationale>>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let provider_down = AtomicBool::new(false);
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(inst, ps)| {
                if provider_down.load(Ordering::Relaxed) {
                    return Err(Error::ProviderUnavailable(format!(
                        "instance {} skipped after an earlier provider failure",
                        inst.id
                    )));
                }
                let res = generate_perspectives(inst, ps, chat);
                if res.as_ref().is_err_and(Error::is_provider) {
                    provider_down.store(true, Ordering::Relaxed);
                }
                res
            })
            .collect()
    }))
}

/// One persisted conversation result, keyed by (instance, perspective, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRow {
    pub instance_id: String,
    pub perspective: Perspective,
    pub model: String,
    pub analysis_turn: String,
    pub judgment_turn: String,
}

impl CacheRow {
    pub fn new(instance_id: &str, model: &str, r: &Rationale) -> CacheRow {
        CacheRow {
            instance_id: instance_id.to_string(),
            perspective: r.perspective,
            model: model.to_string(),
            analysis_turn: r.analysis_turn.clone(),
            judgment_turn: r.judgment_turn.clone(),
        }
    }

    pub fn to_rationale(&self) -> Rationale {
        Rationale::from_turns(self.perspective, &self.analysis_turn, &self.judgment_turn)
    }
}

const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "U.S.", "e.g.", "i.e.", "vs.", "No.", "Fig.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

fn ends_sentence(word: &str, prev: Option<&str>) -> bool {
    let core = word.trim_end_matches(CLOSERS);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    if core.ends_with('.') {
        let bare = core.trim_start_matches(OPENERS);
        if ABBREVIATIONS.contains(&bare) {
            return false;
        }
        if bare == "al." && prev.map(|p| p.trim_start_matches(OPENERS)) == Some("et") {
            return false;
        }
    }
    true
}

fn starts_sentence(word: &str) -> bool {
    word.chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_numeric() || OPENERS.contains(&c))
}

/// Rule-based sentence splitter.
///
/// Breaks after `.`, `!` or `?` (optionally followed by closing quotes or
/// brackets) when the next word starts with an uppercase letter, a digit or
/// an opening quote, unless the word is a listed abbreviation. Whitespace
/// inside sentences is collapsed to single spaces.
pub fn split_sentences(text: &str) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..words.len() {
        let prev = i.checked_sub(1).map(|j| words[j]);
        let boundary = match words.get(i + 1) {
            Some(next) => ends_sentence(words[i], prev) && starts_sentence(next),
            None => true,
        };
        if boundary {
            out.push(words[start..=i].join(" "));
            start = i + 1;
        }
    }
    out
}
