//! Detection, calibration and rationale-diversity metrics.
//!
//! `Fake` is the positive class. Confidence means the probability of the
//! predicted (argmax) label, so it always lies in [0.5, 1].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{tokenize, Label, Rationale};
use crate::error::{Error, Result};
use crate::providers::Embedder;

pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(c: Counts) -> f64 {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn class_counts(preds: &[Label], golds: &[Label]) -> Result<[Counts; 2]> {
    if preds.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut counts = [Counts::default(); 2];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            counts[p.index()].tp += 1;
        } else {
            counts[p.index()].fp += 1;
            counts[g.index()].fn_ += 1;
        }
    }
    Ok(counts)
}

/// Micro F1 (pooled over both classes) and macro F1 (unweighted mean of
/// per-class F1; a class never seen contributes 0).
pub fn micro_macro_f1(preds: &[Label], golds: &[Label]) -> Result<(f64, f64)> {
    let counts = class_counts(preds, golds)?;
    let pooled = counts.iter().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let macro_f1 = counts.iter().map(|c| f1(*c)).sum::<f64>() / counts.len() as f64;
    Ok((f1(pooled), macro_f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn per_class_metrics(preds: &[Label], golds: &[Label]) -> Result<Vec<ClassMetrics>> {
    let counts = class_counts(preds, golds)?;
    Ok(Label::ALL
        .iter()
        .map(|&l| {
            let c = counts[l.index()];
            ClassMetrics {
                label: l.name().to_string(),
                precision: ratio(c.tp, c.tp + c.fp),
                recall: ratio(c.tp, c.tp + c.fn_),
                f1: f1(c),
                support: c.tp + c.fn_,
            }
        })
        .collect())
}

/// Equal-width, right-closed bins over [0, 1]; bin 0 also holds 0.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    let mut b = (conf * n_bins as f64).ceil() as usize;
    // guard against products that land a hair above an edge
    if b > 0 && conf <= (b - 1) as f64 / n_bins as f64 {
        b -= 1;
    }
    b.saturating_sub(1).min(n_bins - 1)
}

/// Σ_b (|b|/N)·|acc(b) − conf(b)| over equal-width bins.
pub fn expected_calibration_error(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::invalid("confidences and correctness differ in length"));
    }
    if confidences.is_empty() {
        return Err(Error::invalid("no predictions to calibrate"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.5..=1.0).contains(*c)) {
        return Err(Error::invalid(format!(
            "argmax confidence {c} outside [0.5, 1]"
        )));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_of(c, n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

/// Unique tokens over total tokens across every rationale sentence.
pub fn distinct_token_ratio(rationales: &[Rationale]) -> Result<f64> {
    let mut total = 0usize;
    let mut unique = HashSet::new();
    for r in rationales {
        for s in &r.sentences {
            for t in tokenize(&s.text) {
                total += 1;
                unique.insert(t);
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("rationales contain no tokens"));
    }
    Ok(unique.len() as f64 / total as f64)
}

fn rationale_text(r: &Rationale) -> String {
    r.sentences
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean cosine similarity between the embedded full texts of every
/// unordered pair of rationales.
pub fn pairwise_perspective_similarity(rationales: &[Rationale], embedder: &dyn Embedder) -> Result<f64> {
    if rationales.len() < 2 {
        return Err(Error::invalid("pairwise similarity needs at least two rationales"));
    }
    let texts: Vec<String> = rationales.iter().map(rationale_text).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vecs = embedder.embed_batch(&refs)?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            sum += vecs[i].cosine(&vecs[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub distinct_ratio: f64,
    pub mean_pairwise_similarity: f64,
}

/// Distinct-token ratio over all rationales of all instances, and the mean
/// over instances of their within-instance pairwise similarity (instances
/// with fewer than two rationales are skipped).
pub fn diversity_stats(per_instance: &[Vec<Rationale>], embedder: &dyn Embedder) -> Result<Option<DiversityStats>> {
    let all: Vec<Rationale> = per_instance.iter().flatten().cloned().collect();
    if all.is_empty() {
        return Ok(None);
    }
    let distinct_ratio = distinct_token_ratio(&all)?;
    let sims: Vec<f64> = per_instance
        .iter()
        .filter(|rs| rs.len() >= 2)
        .map(|rs| pairwise_perspective_similarity(rs, embedder))
        .collect::<Result<_>>()?;
    if sims.is_empty() {
        return Ok(None);
    }
    Ok(Some(DiversityStats {
        distinct_ratio,
        mean_pairwise_similarity: sims.iter().sum::<f64>() / sims.len() as f64,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub ece: f64,
    pub n_examples: usize,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityStats>,
}

/// Builds an [`EvalReport`] from argmax predictions and their confidences.
pub fn evaluate_predictions(
    preds: &[Label],
    golds: &[Label],
    confidences: &[f64],
    n_bins: usize,
) -> Result<EvalReport> {
    let (micro_f1, macro_f1) = micro_macro_f1(preds, golds)?;
    let correct: Vec<bool> = preds.iter().zip(golds).map(|(p, g)| p == g).collect();
    let ece = expected_calibration_error(confidences, &correct, n_bins)?;
    Ok(EvalReport {
        micro_f1,
        macro_f1,
        ece,
        n_examples: preds.len(),
        per_class: per_class_metrics(preds, golds)?,
        diversity: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub report: EvalReport,
}

/// Mean and sample standard deviation (n − 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub micro_f1: MeanStd,
    pub macro_f1: MeanStd,
    pub ece: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub positive_class: String,
    /// Which probability feeds the calibration error.
    pub ece_confidence: String,
    pub ece_bins: usize,
    pub std: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metadata: ReportMetadata,
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityStats>,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldReport>, ece_bins: usize) -> Result<CvReport> {
        if folds.is_empty() {
            return Err(Error::invalid("no folds to aggregate"));
        }
        let pick = |f: fn(&EvalReport) -> f64| -> Vec<f64> { folds.iter().map(|r| f(&r.report)).collect() };
        let aggregate = Aggregate {
            micro_f1: MeanStd::of(&pick(|r| r.micro_f1)),
            macro_f1: MeanStd::of(&pick(|r| r.macro_f1)),
            ece: MeanStd::of(&pick(|r| r.ece)),
        };
        Ok(CvReport {
            metadata: ReportMetadata {
                positive_class: Label::Fake.name().to_string(),
                ece_confidence: "argmax".to_string(),
                ece_bins,
                std: "sample".to_string(),
            },
            folds,
            aggregate,
            diversity: None,
        })
    }

    /// One CSV row per fold plus a mean and a std row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,micro_f1,macro_f1,ece,n_test\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.fold, f.report.micro_f1, f.report.macro_f1, f.report.ece, f.n_test
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!("mean,{},{},{},\n", a.micro_f1.mean, a.macro_f1.mean, a.ece.mean));
        out.push_str(&format!("std,{},{},{},\n", a.micro_f1.std, a.macro_f1.std, a.ece.std));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EmbeddingVec, Perspective};
    use crate::providers::MockEmbedder;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&x| Label::from_index(x as usize).unwrap()).collect()
    }

    #[test]
    fn f1_cases() {
        let (mi, ma) = micro_macro_f1(&labels(&[1, 0, 1]), &labels(&[1, 0, 1])).unwrap();
        assert_eq!((mi, ma), (1.0, 1.0));
        let (mi, ma) = micro_macro_f1(&labels(&[1, 1, 0, 0]), &labels(&[1, 0, 0, 0])).unwrap();
        assert!((mi - 0.75).abs() < 1e-12);
        assert!((ma - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        let (mi, _) = micro_macro_f1(&labels(&[1, 1, 1, 1]), &labels(&[1, 0, 1, 0])).unwrap();
        assert_eq!(mi, 0.5);
        assert!(micro_macro_f1(&labels(&[1]), &labels(&[1, 0])).is_err());
    }

    #[test]
    fn per_class_example() {
        let pc = per_class_metrics(&labels(&[1, 1, 0, 0]), &labels(&[1, 0, 0, 0])).unwrap();
        assert_eq!(pc[1].label, "fake");
        assert_eq!(pc[1].precision, 0.5);
        assert_eq!(pc[1].recall, 1.0);
        assert_eq!(pc[0].support, 3);
    }

    #[test]
    fn ece_cases() {
        assert_eq!(expected_calibration_error(&[1.0, 1.0], &[true, true], 10).unwrap(), 0.0);
        let e = expected_calibration_error(&[0.9, 0.6], &[true, false], 10).unwrap();
        assert!((e - 0.35).abs() < 1e-12);
        let e2 = expected_calibration_error(&[0.9, 0.6, 0.9, 0.6], &[true, false, true, false], 10).unwrap();
        assert!((e - e2).abs() < 1e-12);
        assert!(expected_calibration_error(&[0.4], &[true], 10).is_err());
        assert!(expected_calibration_error(&[0.6], &[true, false], 10).is_err());
    }

    #[test]
    fn bins_are_right_closed() {
        assert_eq!(bin_of(0.6, 10), 5);
        assert_eq!(bin_of(0.61, 10), 6);
        assert_eq!(bin_of(1.0, 10), 9);
        assert_eq!(bin_of(0.0, 10), 0);
        assert_eq!(bin_of(0.7, 10), 6);
        assert_eq!(bin_of(0.3, 10), 2);
    }

    fn rat(text: &str) -> Rationale {
        Rationale::from_turns(Perspective::Sentiment, text, "")
    }

    #[test]
    fn distinct_ratio_cases() {
        assert!((distinct_token_ratio(&[rat("a b a")]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(distinct_token_ratio(&[rat("x y z")]).unwrap(), 1.0);
        let one = distinct_token_ratio(&[rat("p q r q")]).unwrap();
        let two = distinct_token_ratio(&[rat("p q r q"), rat("p q r q")]).unwrap();
        assert!((two - one / 2.0).abs() < 1e-15);
        assert!(distinct_token_ratio(&[rat("...")]).is_err());
    }

    struct Axis;
    impl Embedder for Axis {
        fn dim(&self) -> usize {
            2
        }
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVec>> {
            Ok(texts
                .iter()
                .map(|t| EmbeddingVec::new(if t.contains("east") { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).unwrap())
                .collect())
        }
    }

    #[test]
    fn similarity_cases() {
        let e = MockEmbedder::new("rel", 32).unwrap();
        let same = pairwise_perspective_similarity(&[rat("Same text here."), rat("Same text here.")], &e).unwrap();
        assert!((same - 1.0).abs() < 1e-9);
        assert_eq!(pairwise_perspective_similarity(&[rat("Go east."), rat("Go north.")], &Axis).unwrap(), 0.0);
        // pairs: (e,n)=0, (e,e)=1, (n,e)=0 -> 1/3
        let three = pairwise_perspective_similarity(&[rat("Go east."), rat("Go north."), rat("Far east.")], &Axis).unwrap();
        assert!((three - 1.0 / 3.0).abs() < 1e-12);
        assert!(pairwise_perspective_similarity(&[rat("x")], &e).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[0.8; 5]);
        assert_eq!(m.mean, 0.8);
        assert_eq!(m.std, 0.0);
        let m = MeanStd::of(&[1.0, 3.0]);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let preds: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.0 as usize).unwrap()).collect();
            let golds: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.1 as usize).unwrap()).collect();
            let acc = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
            let (micro, macro_) = micro_macro_f1(&preds, &golds).unwrap();
            prop_assert!((micro - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&macro_));
        }

        #[test]
        fn ece_bounded_and_order_free(items in proptest::collection::vec((0.5f64..=1.0, any::<bool>()), 1..50)) {
            let confs: Vec<f64> = items.iter().map(|i| i.0).collect();
            let ok: Vec<bool> = items.iter().map(|i| i.1).collect();
            let e = expected_calibration_error(&confs, &ok, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let rc: Vec<f64> = confs.iter().rev().copied().collect();
            let ro: Vec<bool> = ok.iter().rev().copied().collect();
            prop_assert!((expected_calibration_error(&rc, &ro, 10).unwrap() - e).abs() < 1e-12);
        }
    }
}
