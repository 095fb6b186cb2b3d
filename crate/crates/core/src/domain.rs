//! Domain types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of cross-validation folds.
pub const N_FOLDS: usize = 5;

/// Binary veracity label. `Fake` is the positive class for per-class reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

/// Fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVec(Vec<f64>);

impl EmbeddingVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have positive dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "embedding entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(EmbeddingVec(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingVec(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity clamped to [-1, 1]; a zero-norm operand yields 0.
    pub fn cosine(&self, other: &EmbeddingVec) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        Ok((dot / (na * nb)).clamp(-1.0, 1.0))
    }

    /// Component-wise mean using Neumaier-compensated sums, so the result is
    /// stable under reordering of `vecs`.
    pub fn mean(vecs: &[EmbeddingVec]) -> Result<EmbeddingVec> {
        let first = vecs
            .first()
            .ok_or_else(|| Error::invalid("cannot average an empty list of embeddings"))?;
        let dim = first.dim();
        let mut sum = vec![0.0f64; dim];
        let mut comp = vec![0.0f64; dim];
        for v in vecs {
            if v.dim() != dim {
                return Err(Error::invalid(format!(
                    "dimension mismatch: {} vs {}",
                    v.dim(),
                    dim
                )));
            }
            for ((s, c), &x) in sum.iter_mut().zip(comp.iter_mut()).zip(&v.0) {
                let t = *s + x;
                if s.abs() >= x.abs() {
                    *c += (*s - t) + x;
                } else {
                    *c += (x - t) + *s;
                }
                *s = t;
            }
        }
        let n = vecs.len() as f64;
        Ok(EmbeddingVec(
            sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect(),
        ))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVec {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        EmbeddingVec::new(v).map_err(|e| e.to_string())
    }
}

impl From<EmbeddingVec> for Vec<f64> {
    fn from(e: EmbeddingVec) -> Vec<f64> {
        e.0
    }
}

/// One multimodal news item. Images travel as precomputed feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsInstance {
    pub id: String,
    pub text: String,
    pub image_features: EmbeddingVec,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Checks every `NewsInstance` invariant, reporting the first one violated.
pub fn validate_instance(inst: &NewsInstance, expected_image_dim: usize) -> Result<()> {
    if inst.id.trim().is_empty() {
        return Err(Error::invalid("empty id"));
    }
    if inst.text.trim().is_empty() {
        return Err(Error::invalid(format!("instance {}: empty text", inst.id)));
    }
    if inst.image_features.dim() != expected_image_dim {
        return Err(Error::invalid(format!(
            "instance {}: image feature dimension mismatch (got {}, expected {})",
            inst.id,
            inst.image_features.dim(),
            expected_image_dim
        )));
    }
    Ok(())
}

/// One of the five reasoning perspectives. Declaration order is the
/// canonical order used everywhere rationales are listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Sentiment,
    Propaganda,
    Consistency,
    Object,
    Description,
}

impl Perspective {
    pub const ALL: [Perspective; 5] = [
        Perspective::Sentiment,
        Perspective::Propaganda,
        Perspective::Consistency,
        Perspective::Object,
        Perspective::Description,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Perspective::Sentiment => "sentiment",
            Perspective::Propaganda => "propaganda",
            Perspective::Consistency => "consistency",
            Perspective::Object => "object",
            Perspective::Description => "description",
        }
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Perspective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Perspective::ALL
            .into_iter()
            .find(|p| p.name() == s.trim().to_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown perspective '{s}'")))
    }
}

/// A rationale sentence with optional filter scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factuality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
}

impl Sentence {
    /// Builds an indexed, unscored sentence list. Empty strings are rejected.
    pub fn indexed<I, S>(texts: I) -> Result<Vec<Sentence>>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        texts
            .into_iter()
            .enumerate()
            .map(|(index, t)| {
                let text = t.into();
                if text.trim().is_empty() {
                    return Err(Error::invalid(format!("sentence {index} is empty")));
                }
                Ok(Sentence {
                    text,
                    index,
                    factuality: None,
                    relevance: None,
                })
            })
            .collect()
    }
}

/// One perspective's two-turn explanation and its sentence split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub perspective: Perspective,
    pub analysis_turn: String,
    pub judgment_turn: String,
    pub sentences: Vec<Sentence>,
}

impl Rationale {
    /// Segments `analysis ++ " " ++ judgment` into indexed sentences.
    pub fn from_turns(
        perspective: Perspective,
        analysis_turn: impl Into<String>,
        judgment_turn: impl Into<String>,
    ) -> Rationale {
        let analysis_turn = analysis_turn.into();
        let judgment_turn = judgment_turn.into();
        let joined = format!("{analysis_turn} {judgment_turn}");
        let sentences = crate::generation::split_sentences(&joined)
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                text,
                index,
                factuality: None,
                relevance: None,
            })
            .collect();
        Rationale {
            perspective,
            analysis_turn,
            judgment_turn,
            sentences,
        }
    }

    pub fn full_text(&self) -> String {
        format!("{} {}", self.analysis_turn, self.judgment_turn)
    }
}

/// Lowercased maximal runs of alphanumeric characters.
///
/// Shared by retrieval, the mock providers and the diversity metrics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Derives a named sub-seed from the root seed (FNV-1a over the name, then
/// a splitmix64 finalizer).
pub fn sub_seed(root: u64, name: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(&root.to_le_bytes());
    h.write(name.as_bytes());
    let mut z = h.finish().wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded shuffle followed by round-robin assignment into five folds.
/// Each fold is returned sorted ascending.
pub fn make_folds(n_instances: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_instances < N_FOLDS {
        return Err(Error::invalid(format!(
            "need at least {N_FOLDS} instances for {N_FOLDS}-fold splitting, got {n_instances}"
        )));
    }
    let mut order: Vec<usize> = (0..n_instances).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % N_FOLDS].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Instances plus their fold partition.
#[derive(Debug, Clone)]
pub struct Dataset {
    instances: Vec<NewsInstance>,
    folds: Vec<Vec<usize>>,
    image_dim: usize,
}

impl Dataset {
    /// Validates all instances against the first instance's image dimension,
    /// checks id uniqueness and assigns folds.
    pub fn new(instances: Vec<NewsInstance>, fold_seed: u64) -> Result<Dataset> {
        let image_dim = Dataset::validate_all(&instances)?;
        let folds = make_folds(instances.len(), fold_seed)?;
        Ok(Dataset {
            instances,
            folds,
            image_dim,
        })
    }

    /// Checks every instance and id uniqueness without assigning folds.
    /// Returns the shared image dimension.
    pub fn validate_all(instances: &[NewsInstance]) -> Result<usize> {
        let image_dim = instances
            .first()
            .map(|i| i.image_features.dim())
            .ok_or_else(|| Error::invalid("dataset is empty"))?;
        let mut seen = std::collections::HashSet::new();
        for inst in instances {
            validate_instance(inst, image_dim)?;
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::invalid(format!("duplicate instance id '{}'", inst.id)));
            }
        }
        Ok(image_dim)
    }

    pub fn instances(&self) -> &[NewsInstance] {
        &self.instances
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// (train indices, test indices) for fold `k`.
    pub fn split(&self, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let test = self
            .folds
            .get(k)
            .ok_or_else(|| Error::invalid(format!("fold {k} out of range 0..{N_FOLDS}")))?
            .clone();
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(text: &str, dim: usize) -> NewsInstance {
        NewsInstance {
            id: "n1".into(),
            text: text.into(),
            image_features: EmbeddingVec::zeros(dim),
            label: Label::Fake,
            image_ref: None,
        }
    }

    #[test]
    fn folds_of_ten() {
        let folds = make_folds(10, 7).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, make_folds(10, 7).unwrap());
    }

    #[test]
    fn folds_of_eleven() {
        let mut sizes: Vec<usize> = make_folds(11, 7).unwrap().iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_need_five() {
        assert!(matches!(make_folds(4, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn validate() {
        assert!(validate_instance(&inst("hello", 64), 64).is_ok());
        let e = validate_instance(&inst("  ", 64), 64).unwrap_err();
        assert!(e.to_string().contains("empty text"));
        let e = validate_instance(&inst("x", 128), 64).unwrap_err();
        assert!(e.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn label_json() {
        assert_eq!(serde_json::to_string(&Label::Fake).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Real);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(EmbeddingVec::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVec::new(vec![]).is_err());
        assert!(serde_json::from_str::<EmbeddingVec>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn cosine_cases() {
        let a = EmbeddingVec::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVec::new(vec![0.0, 1.0]).unwrap();
        let c = EmbeddingVec::new(vec![-1.0, 0.0]).unwrap();
        assert_eq!(a.cosine(&b).unwrap(), 0.0);
        assert_eq!(a.cosine(&c).unwrap(), -1.0);
        assert_eq!(a.cosine(&EmbeddingVec::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("A b, a!"), vec!["a", "b", "a"]);
        assert_eq!(tokenize("Ünïcode-wörds 42"), vec!["ünïcode", "wörds", "42"]);
        assert!(tokenize("...").is_empty());
    }

    #[test]
    fn rationale_indices_contiguous() {
        let r = Rationale::from_turns(Perspective::Object, "One. Two!", "Three? Four.");
        let idx: Vec<usize> = r.sentences.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sub_seeds_differ_by_name() {
        assert_ne!(sub_seed(1, "folds"), sub_seed(1, "init"));
        assert_eq!(sub_seed(1, "folds"), sub_seed(1, "folds"));
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n in 5usize..400, seed in any::<u64>()) {
            let folds = make_folds(n, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
