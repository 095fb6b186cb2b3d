//! Trainable multimodal detector and the rationale-fusion front end.
//!
//! The augmented text is the article followed by every kept rationale
//! sentence. It is represented by the mean of its per-sentence embeddings,
//! which makes the representation independent of rationale order and of
//! input length.

mod model;
mod train;

pub use model::{Activations, Checkpoint, Dense, DetectorModel, Example, CHECKPOINT_VERSION};
pub use train::{train, OptimizerKind, TrainConfig, TrainOutcome};

use rayon::prelude::*;

use crate::domain::{sub_seed, Dataset, EmbeddingVec, Label, NewsInstance};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, CvReport, EvalReport, FoldReport};
use crate::generation::split_sentences;
use crate::providers::Embedder;
use crate::refinement::RefinedRationale;

/// Sentences are embedded in batches of this size.
const EMBED_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedInput {
    pub instance_id: String,
    pub sentences: Vec<String>,
    pub image_features: EmbeddingVec,
}

/// Article sentences followed by the kept sentences of each rationale, in
/// the order the rationales are given (callers pass canonical perspective
/// order).
pub fn build_augmented_input(inst: &NewsInstance, refined: &[RefinedRationale]) -> AugmentedInput {
    let mut sentences = split_sentences(&inst.text);
    for r in refined {
        sentences.extend(r.kept_texts().into_iter().map(str::to_string));
    }
    AugmentedInput {
        instance_id: inst.id.clone(),
        sentences,
        image_features: inst.image_features.clone(),
    }
}

/// Mean of the per-sentence embeddings.
pub fn text_representation<S: AsRef<str>>(sentences: &[S], embedder: &dyn Embedder) -> Result<EmbeddingVec> {
    if sentences.is_empty() {
        return Err(Error::invalid("cannot represent an empty sentence list"));
    }
    let mut vecs = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(EMBED_CHUNK) {
        let refs: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
        vecs.extend(embedder.embed_batch(&refs)?);
    }
    EmbeddingVec::mean(&vecs)
}

/// Embeds an augmented input into a detector example.
pub fn to_example(input: &AugmentedInput, label: Label, embedder: &dyn Embedder) -> Result<Example> {
    Ok(Example {
        text: text_representation(&input.sentences, embedder)?,
        image: input.image_features.clone(),
        label,
    })
}

/// One fold's trained model and held-out report.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: DetectorModel,
    pub init_seed: u64,
    pub report: FoldReport,
}

/// Evaluates `model` on `examples`.
pub fn evaluate_model(model: &DetectorModel, examples: &[&Example], n_bins: usize) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut confs = Vec::with_capacity(examples.len());
    for ex in examples {
        let (label, conf) = model.predict(&ex.text, &ex.image)?;
        preds.push(label);
        golds.push(ex.label);
        confs.push(conf);
    }
    evaluate_predictions(&preds, &golds, &confs, n_bins)
}

/// Five-fold cross-validation over precomputed examples aligned with
/// `dataset.instances()`. Folds train in parallel; every seed is derived
/// from `cfg.seed` and the fold index, so the result is deterministic.
pub fn cross_validate(
    dataset: &Dataset,
    examples: &[Example],
    cfg: &TrainConfig,
    n_bins: usize,
) -> Result<(CvReport, Vec<FoldOutcome>)> {
    cfg.validate()?;
    if examples.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} examples for {} instances",
            examples.len(),
            dataset.len()
        )));
    }
    let d_text = examples[0].text.dim();
    let d_img = examples[0].image.dim();

    let outcomes: Vec<FoldOutcome> = (0..dataset.folds().len())
        .into_par_iter()
        .map(|k| {
            let (train_idx, test_idx) = dataset.split(k)?;
            let train_set: Vec<Example> = train_idx.iter().map(|&i| examples[i].clone()).collect();
            let test_set: Vec<&Example> = test_idx.iter().map(|&i| &examples[i]).collect();
            let init_seed = sub_seed(cfg.seed, &format!("init/{k}"));
            let fold_cfg = TrainConfig {
                seed: sub_seed(cfg.seed, &format!("shuffle/{k}")),
                ..*cfg
            };
            let model = DetectorModel::init(d_text, d_img, cfg.d_h, init_seed)?;
            let out = train(model, &train_set, &fold_cfg).map_err(|e| match e {
                Error::TrainingDiverged { reason, .. } => Error::TrainingDiverged {
                    fold: Some(k),
                    reason,
                },
                other => other,
            })?;
            let report = evaluate_model(&out.model, &test_set, n_bins)?;
            Ok(FoldOutcome {
                fold: k,
                init_seed,
                report: FoldReport {
                    fold: k,
                    n_train: train_set.len(),
                    n_test: test_set.len(),
                    final_train_loss: out.final_loss,
                    report,
                },
                model: out.model,
            })
        })
        .collect::<Result<_>>()?;

    let report = CvReport::from_folds(outcomes.iter().map(|o| o.report.clone()).collect(), n_bins)?;
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Perspective, Rationale};
    use crate::providers::MockEmbedder;

    struct Table;

    impl Embedder for Table {
        fn dim(&self) -> usize {
            2
        }
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>> {
            Ok(texts
                .iter()
                .map(|t| {
                    EmbeddingVec::new(if t.starts_with('x') { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).unwrap()
                })
                .collect())
        }
    }

    fn inst() -> NewsInstance {
        NewsInstance {
            id: "a".into(),
            text: "First claim. Second claim. Third claim.".into(),
            image_features: EmbeddingVec::zeros(3),
            label: Label::Fake,
            image_ref: None,
        }
    }

    #[test]
    fn representation_cases() {
        let e = MockEmbedder::new("fusion", 16).unwrap();
        assert_eq!(text_representation(&["only one"], &e).unwrap(), e.embed("only one").unwrap());
        let t = text_representation(&["x", "y"], &Table).unwrap();
        assert_eq!(t.values(), &[0.5, 0.5]);
        assert!(text_representation::<&str>(&[], &e).is_err());
    }

    #[test]
    fn representation_handles_long_inputs() {
        let e = MockEmbedder::new("fusion", 8).unwrap();
        let many: Vec<String> = (0..10_000).map(|i| format!("sentence number {i}")).collect();
        let t = text_representation(&many, &e).unwrap();
        assert_eq!(t.dim(), 8);
    }

    fn refined(p: Perspective, kept: usize) -> RefinedRationale {
        let texts: Vec<String> = (0..kept + 1).map(|i| format!("Point {i} about {p}.")).collect();
        let r = Rationale::from_turns(p, texts.join(" "), "Closing remark.");
        let mut rr = RefinedRationale::unfiltered(&r);
        for (i, k) in rr.kept.iter_mut().enumerate() {
            *k = i < kept;
        }
        rr
    }

    #[test]
    fn augmented_counts() {
        assert_eq!(build_augmented_input(&inst(), &[]).sentences.len(), 3);
        let rs: Vec<RefinedRationale> = Perspective::ALL.iter().map(|&p| refined(p, 2)).collect();
        let aug = build_augmented_input(&inst(), &rs);
        assert_eq!(aug.sentences.len(), 13);
        assert_eq!(aug.sentences[3], "Point 0 about sentiment.");
        assert_eq!(aug, build_augmented_input(&inst(), &rs));
    }
}
