//! End-to-end stages over files: generate, refine, train/evaluate, compare.
//!
//! Every stage reads its inputs from the paths in [`RunConfig`] and writes
//! one output file. All randomness is derived from `RunConfig::seed`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::detector::{
    build_augmented_input, cross_validate, evaluate_model, to_example, Checkpoint, Example, FoldOutcome,
    TrainConfig,
};
use crate::domain::{sub_seed, Dataset, NewsInstance, Perspective, Rationale, Sentence};
use crate::error::{Error, Result};
use crate::evaluation::{diversity_stats, CvReport, EvalReport, MeanStd, DEFAULT_ECE_BINS};
use crate::generation::{generate_many, CacheRow};
use crate::providers::{
    ChatModel, Embedder, EvidenceScorers, HttpChat, HttpEmbedder, HttpScorer, MockChat, MockEmbedder,
    MockStance, MockSummary, ProviderConfig, SupportScorer,
};
use crate::refinement::{refine_all, FilterConfig, RefineDeps, RefinedRationale};
use crate::retrieval::{CorpusDoc, InvertedIndex, Retriever};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Http,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(Backend::Mock),
            "http" => Ok(Backend::Http),
            other => Err(Error::invalid(format!("unknown provider '{other}' (expected mock|http)"))),
        }
    }
}

const DEFAULT_ENDPOINT: &str = "http://localhost:8000/v1";

/// Endpoints for each external service when the HTTP backend is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSet {
    pub chat: ProviderConfig,
    pub fusion_embedding: ProviderConfig,
    pub relevance_embedding: ProviderConfig,
    pub stance: ProviderConfig,
    pub summary: ProviderConfig,
}

impl Default for ProviderSet {
    fn default() -> Self {
        let embed = |model: &str| ProviderConfig {
            dimension: Some(768),
            ..ProviderConfig::new(DEFAULT_ENDPOINT, model)
        };
        ProviderSet {
            chat: ProviderConfig::new(DEFAULT_ENDPOINT, "gpt-4o"),
            fusion_embedding: embed("text-encoder"),
            relevance_embedding: embed("sentence-encoder"),
            stance: ProviderConfig::new(DEFAULT_ENDPOINT, "stance-scorer"),
            summary: ProviderConfig::new(DEFAULT_ENDPOINT, "summary-scorer"),
        }
    }
}

/// Settings for the offline backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub chat_model: String,
    pub fusion_dim: usize,
    pub relevance_dim: usize,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            chat_model: "mock-chat".to_string(),
            fusion_dim: 64,
            relevance_dim: 64,
        }
    }
}

/// One run's configuration, loaded from a JSON document and optionally
/// overridden from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub refined_path: Option<PathBuf>,
    /// Directory receiving one checkpoint per fold.
    pub checkpoint_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub provider: Backend,
    pub providers: ProviderSet,
    pub mock: MockSettings,
    pub filter: FilterConfig,
    /// `train.seed` is ignored; training seeds derive from `seed`.
    pub train: TrainConfig,
    pub ece_bins: usize,
    pub seed: u64,
    pub workers: usize,
    pub perspectives: Vec<Perspective>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_path: None,
            corpus_path: None,
            cache_path: None,
            refined_path: None,
            checkpoint_path: None,
            report_path: None,
            provider: Backend::Mock,
            providers: ProviderSet::default(),
            mock: MockSettings::default(),
            filter: FilterConfig::default(),
            train: TrainConfig::default(),
            ece_bins: DEFAULT_ECE_BINS,
            seed: 0,
            workers: 4,
            perspectives: Perspective::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.train.validate()?;
        if self.ece_bins == 0 {
            return Err(Error::invalid("ece_bins must be positive"));
        }
        if self.perspectives.is_empty() {
            return Err(Error::invalid("at least one perspective is required"));
        }
        let distinct: HashSet<_> = self.perspectives.iter().collect();
        if distinct.len() != self.perspectives.len() {
            return Err(Error::invalid("perspectives must not repeat"));
        }
        if self.mock.fusion_dim == 0 || self.mock.relevance_dim == 0 {
            return Err(Error::invalid("mock embedding dimensions must be positive"));
        }
        if self.provider == Backend::Http {
            let p = &self.providers;
            for c in [&p.chat, &p.fusion_embedding, &p.relevance_embedding, &p.stance, &p.summary] {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// Training settings with the seed taken from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.seed, "train"),
            ..self.train
        }
    }

    pub fn fold_seed(&self) -> u64 {
        sub_seed(self.seed, "folds")
    }

    /// Perspectives in canonical order.
    pub fn canonical_perspectives(&self) -> Vec<Perspective> {
        let mut ps = self.perspectives.clone();
        ps.sort();
        ps
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::invalid(format!("no {what} path configured")))
}

fn existing<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = required(path, what)?;
    if !p.is_file() {
        return Err(Error::invalid(format!("{what} file not found: {}", p.display())));
    }
    Ok(p)
}

/// The external services a run talks to.
pub struct Services {
    pub chat: Box<dyn ChatModel>,
    pub fusion: Box<dyn Embedder>,
    pub relevance: Box<dyn Embedder>,
    pub stance: Box<dyn SupportScorer>,
    pub summary: Box<dyn SupportScorer>,
}

impl Services {
    pub fn from_config(cfg: &RunConfig) -> Result<Services> {
        Ok(match cfg.provider {
            Backend::Mock => Services {
                chat: Box::new(MockChat::new(cfg.mock.chat_model.clone())),
                fusion: Box::new(MockEmbedder::new("fusion", cfg.mock.fusion_dim)?),
                relevance: Box::new(MockEmbedder::new("relevance", cfg.mock.relevance_dim)?),
                stance: Box::new(MockStance),
                summary: Box::new(MockSummary),
            },
            Backend::Http => {
                let p = &cfg.providers;
                Services {
                    chat: Box::new(HttpChat::new(p.chat.clone())?),
                    fusion: Box::new(HttpEmbedder::new(p.fusion_embedding.clone())?),
                    relevance: Box::new(HttpEmbedder::new(p.relevance_embedding.clone())?),
                    stance: Box::new(HttpScorer::new(p.stance.clone())?),
                    summary: Box::new(HttpScorer::new(p.summary.clone())?),
                }
            }
        })
    }

    fn scorers(&self) -> EvidenceScorers<'_> {
        EvidenceScorers {
            stance: self.stance.as_ref(),
            summary: self.summary.as_ref(),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], append: bool) -> Result<()> {
    create_parent(path)?;
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(path, rows, false)
}

pub fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(path, rows, true)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Validated instances without a fold assignment.
pub fn load_instances(cfg: &RunConfig) -> Result<Vec<NewsInstance>> {
    let path = existing(&cfg.dataset_path, "dataset")?;
    let rows: Vec<NewsInstance> = read_jsonl(path)?;
    Dataset::validate_all(&rows).map_err(|e| e.with_context(&path.display().to_string()))?;
    Ok(rows)
}

/// Instances split into folds from the root seed.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let rows = load_instances(cfg)?;
    let path = existing(&cfg.dataset_path, "dataset")?;
    Dataset::new(rows, cfg.fold_seed()).map_err(|e| e.with_context(&path.display().to_string()))
}

fn load_index(cfg: &RunConfig) -> Result<InvertedIndex> {
    let path = existing(&cfg.corpus_path, "corpus")?;
    let docs: Vec<CorpusDoc> = read_jsonl(path)?;
    InvertedIndex::build(docs).map_err(|e| e.with_context(&path.display().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateSummary {
    pub new_rows: usize,
    pub existing_rows: usize,
}

type CacheKey = (String, Perspective, String);

fn cache_key(r: &CacheRow) -> CacheKey {
    (r.instance_id.clone(), r.perspective, r.model.clone())
}

/// Fills the rationale cache for `perspectives`, skipping rows already
/// present. Rows for an instance are appended only when all of its missing
/// perspectives succeeded.
pub fn generate_into_cache(
    cfg: &RunConfig,
    services: &Services,
    instances: &[NewsInstance],
    perspectives: &[Perspective],
) -> Result<GenerateSummary> {
    let cache = required(&cfg.cache_path, "cache")?;
    let existing_rows: Vec<CacheRow> = if cache.is_file() { read_jsonl(cache)? } else { Vec::new() };
    let model = services.chat.model_name().to_string();
    let have: HashSet<CacheKey> = existing_rows.iter().map(cache_key).collect();

    let mut perspectives = perspectives.to_vec();
    perspectives.sort();
    let jobs: Vec<(&NewsInstance, Vec<Perspective>)> = instances
        .iter()
        .map(|inst| {
            let missing = perspectives
                .iter()
                .copied()
                .filter(|&p| !have.contains(&(inst.id.clone(), p, model.clone())))
                .collect::<Vec<_>>();
            (inst, missing)
        })
        .filter(|(_, missing)| !missing.is_empty())
        .collect();

    let results = generate_many(&jobs, services.chat.as_ref(), cfg.workers)?;
    let mut new_rows = Vec::new();
    let mut first_err = None;
    let mut failed = 0usize;
    for ((inst, _), res) in jobs.iter().zip(results) {
        match res {
            Ok(rats) => new_rows.extend(rats.iter().map(|r| CacheRow::new(&inst.id, &model, r))),
            Err(e) => {
                failed += 1;
                warn!(instance = %inst.id, error = %e, "generation failed");
                first_err.get_or_insert(e);
            }
        }
    }
    if !new_rows.is_empty() {
        append_jsonl(cache, &new_rows)?;
    }
    info!(new = new_rows.len(), existing = existing_rows.len(), "rationale cache updated");
    if let Some(e) = first_err {
        return Err(e.with_context(&format!("{failed} instance(s) failed; completed rows were saved")));
    }
    Ok(GenerateSummary {
        new_rows: new_rows.len(),
        existing_rows: existing_rows.len(),
    })
}

pub fn cmd_generate(cfg: &RunConfig, services: &Services) -> Result<GenerateSummary> {
    cfg.validate()?;
    let instances = load_instances(cfg)?;
    generate_into_cache(cfg, services, &instances, &cfg.perspectives)
}

/// Cached rationales per instance, in canonical perspective order.
fn cached_rationales(
    cfg: &RunConfig,
    instances: &[NewsInstance],
    model: &str,
    perspectives: &[Perspective],
) -> Result<Vec<Vec<Rationale>>> {
    let path = existing(&cfg.cache_path, "cache")?;
    let rows: Vec<CacheRow> = read_jsonl(path)?;
    let by_key: HashMap<CacheKey, &CacheRow> = rows.iter().map(|r| (cache_key(r), r)).collect();
    let mut perspectives = perspectives.to_vec();
    perspectives.sort();
    instances
        .iter()
        .map(|inst| {
            perspectives
                .iter()
                .map(|&p| {
                    by_key
                        .get(&(inst.id.clone(), p, model.to_string()))
                        .map(|r| r.to_rationale())
                        .ok_or_else(|| {
                            Error::Precondition(format!(
                                "cache {} has no {p} rationale for instance {} (model {model})",
                                path.display(),
                                inst.id
                            ))
                        })
                })
                .collect()
        })
        .collect()
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Scores and filters every cached rationale.
pub fn refine_dataset(
    cfg: &RunConfig,
    services: &Services,
    instances: &[NewsInstance],
    rationales: &[Vec<Rationale>],
) -> Result<Vec<Vec<RefinedRationale>>> {
    let index = load_index(cfg)?;
    let retriever = Retriever::new(&index, cfg.filter.retrieval_p)?;
    let deps = RefineDeps {
        retriever: &retriever,
        scorers: services.scorers(),
        embedder: services.relevance.as_ref(),
    };
    let pool = worker_pool(cfg.workers)?;
    pool.install(|| {
        instances
            .par_iter()
            .zip(rationales)
            .map(|(inst, rats)| {
                refine_all(rats, &inst.text, &cfg.filter, deps)
                    .map_err(|e| e.with_context(&format!("instance {}", inst.id)))
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedSentenceRow {
    pub text: String,
    pub factuality: f64,
    pub relevance: f64,
    pub kept: bool,
}

/// One line of the refined-rationale file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRow {
    pub instance_id: String,
    pub perspective: Perspective,
    pub sentences: Vec<RefinedSentenceRow>,
}

impl RefinedRow {
    pub fn from_refined(instance_id: &str, r: &RefinedRationale) -> Result<RefinedRow> {
        let sentences = r
            .sentences
            .iter()
            .zip(&r.kept)
            .map(|(s, &kept)| {
                Ok(RefinedSentenceRow {
                    text: s.text.clone(),
                    factuality: s.factuality.ok_or_else(|| Error::invalid("unscored sentence"))?,
                    relevance: s.relevance.ok_or_else(|| Error::invalid("unscored sentence"))?,
                    kept,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RefinedRow {
            instance_id: instance_id.to_string(),
            perspective: r.perspective,
            sentences,
        })
    }

    /// Rebuilds the in-memory form. The file stores only the final keep
    /// decision, so both per-filter pass vectors mirror it.
    pub fn to_refined(&self) -> Result<RefinedRationale> {
        let texts = self.sentences.iter().map(|s| s.text.clone());
        let mut sentences = Sentence::indexed(texts)
            .map_err(|e| e.with_context(&format!("instance {} / {}", self.instance_id, self.perspective)))?;
        for (s, row) in sentences.iter_mut().zip(&self.sentences) {
            s.factuality = Some(row.factuality);
            s.relevance = Some(row.relevance);
        }
        let kept: Vec<bool> = self.sentences.iter().map(|s| s.kept).collect();
        Ok(RefinedRationale {
            perspective: self.perspective,
            sentences,
            factuality_pass: kept.clone(),
            relevance_pass: kept.clone(),
            kept,
        })
    }
}

pub fn cmd_refine(cfg: &RunConfig, services: &Services) -> Result<usize> {
    cfg.validate()?;
    let out = required(&cfg.refined_path, "refined output")?;
    let instances = load_instances(cfg)?;
    let rationales = cached_rationales(cfg, &instances, services.chat.model_name(), &cfg.perspectives)?;
    let refined = refine_dataset(cfg, services, &instances, &rationales)?;
    let mut rows = Vec::new();
    for (inst, rs) in instances.iter().zip(&refined) {
        for r in rs {
            rows.push(RefinedRow::from_refined(&inst.id, r)?);
        }
    }
    write_jsonl(out, &rows)?;
    info!(rows = rows.len(), path = %out.display(), "refined rationales written");
    Ok(rows.len())
}

/// Refined rationales per instance from the refined file, canonical order.
pub fn load_refined(path: &Path, dataset: &Dataset) -> Result<Vec<Vec<RefinedRationale>>> {
    let rows: Vec<RefinedRow> = read_jsonl(path)?;
    let mut by_instance: HashMap<&str, BTreeMap<Perspective, &RefinedRow>> = HashMap::new();
    for r in &rows {
        if by_instance
            .entry(r.instance_id.as_str())
            .or_default()
            .insert(r.perspective, r)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "{}: duplicate {} rationale for instance {}",
                path.display(),
                r.perspective,
                r.instance_id
            )));
        }
    }
    dataset
        .instances()
        .iter()
        .map(|inst| match by_instance.get(inst.id.as_str()) {
            Some(m) => m.values().map(|r| r.to_refined()).collect(),
            None => Ok(Vec::new()),
        })
        .collect()
}

/// Detector inputs for every instance, in dataset order.
pub fn build_examples(
    dataset: &Dataset,
    refined: &[Vec<RefinedRationale>],
    embedder: &dyn Embedder,
    workers: usize,
) -> Result<Vec<Example>> {
    if refined.len() != dataset.len() {
        return Err(Error::invalid("refined rationales do not align with the dataset"));
    }
    let pool = worker_pool(workers)?;
    pool.install(|| {
        dataset
            .instances()
            .par_iter()
            .zip(refined)
            .map(|(inst, rs)| to_example(&build_augmented_input(inst, rs), inst.label, embedder))
            .collect()
    })
}

fn attach_diversity(report: &mut CvReport, refined: &[Vec<RefinedRationale>], embedder: &dyn Embedder) -> Result<()> {
    let per_instance: Vec<Vec<Rationale>> = refined
        .iter()
        .map(|rs| rs.iter().map(RefinedRationale::to_rationale).collect())
        .collect();
    report.diversity = diversity_stats(&per_instance, embedder)?;
    Ok(())
}

/// Cross-validates on prepared rationales and returns the report with the
/// per-fold models.
pub fn train_and_report(
    cfg: &RunConfig,
    services: &Services,
    dataset: &Dataset,
    refined: &[Vec<RefinedRationale>],
) -> Result<(CvReport, Vec<FoldOutcome>)> {
    let examples = build_examples(dataset, refined, services.fusion.as_ref(), cfg.workers)?;
    let (mut report, outcomes) = cross_validate(dataset, &examples, &cfg.train_config(), cfg.ece_bins)?;
    attach_diversity(&mut report, refined, services.fusion.as_ref())?;
    Ok((report, outcomes))
}

pub fn checkpoint_file(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold-{fold}.json"))
}

/// Trains one detector per fold, writes each checkpoint and the report.
/// Without a refined file the detector sees the article text alone.
pub fn cmd_train_eval(cfg: &RunConfig, services: &Services) -> Result<CvReport> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let refined = match &cfg.refined_path {
        Some(_) => load_refined(existing(&cfg.refined_path, "refined rationale")?, &dataset)?,
        None => vec![Vec::new(); dataset.len()],
    };
    let (report, outcomes) = train_and_report(cfg, services, &dataset, &refined)?;
    if let Some(dir) = &cfg.checkpoint_path {
        for o in &outcomes {
            write_json(&checkpoint_file(dir, o.fold), &Checkpoint::new(o.model.clone(), o.init_seed, Some(o.fold)))?;
        }
    }
    if let Some(path) = &cfg.report_path {
        write_json(path, &report)?;
    }
    info!(
        micro_f1 = report.aggregate.micro_f1.mean,
        macro_f1 = report.aggregate.macro_f1.mean,
        "cross-validation finished"
    );
    Ok(report)
}

/// Scores a saved checkpoint on the held-out split of fold `fold`.
pub fn cmd_evaluate(cfg: &RunConfig, services: &Services, checkpoint: &Path, fold: usize) -> Result<EvalReport> {
    cfg.validate()?;
    if !checkpoint.is_file() {
        return Err(Error::invalid(format!("checkpoint file not found: {}", checkpoint.display())));
    }
    let ckpt: Checkpoint = read_json(checkpoint)?;
    ckpt.validate()?;
    if ckpt.fold.is_some_and(|k| k != fold) {
        warn!(trained_on = ?ckpt.fold, fold, "checkpoint was trained for a different fold");
    }
    let dataset = load_dataset(cfg)?;
    let refined = match &cfg.refined_path {
        Some(_) => load_refined(existing(&cfg.refined_path, "refined rationale")?, &dataset)?,
        None => vec![Vec::new(); dataset.len()],
    };
    let (_, test_idx) = dataset.split(fold)?;
    let examples = build_examples(&dataset, &refined, services.fusion.as_ref(), cfg.workers)?;
    let test: Vec<&Example> = test_idx.iter().map(|&i| &examples[i]).collect();
    let report = evaluate_model(&ckpt.model, &test, cfg.ece_bins)?;
    if let Some(path) = &cfg.report_path {
        write_json(path, &report)?;
    }
    Ok(report)
}

/// One ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// All configured perspectives, filtered.
    Full,
    /// All configured perspectives, every sentence kept.
    NoFilter,
    /// One perspective, filtered.
    Single(Perspective),
    /// Article text only.
    NoRationale,
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoFilter => "no-filter".into(),
            Variant::Single(p) => format!("single:{p}"),
            Variant::NoRationale => "no-rationale".into(),
        }
    }

    fn perspectives(&self, all: &[Perspective]) -> Vec<Perspective> {
        match self {
            Variant::Full | Variant::NoFilter => all.to_vec(),
            Variant::Single(p) => vec![*p],
            Variant::NoRationale => Vec::new(),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-filter" => Ok(Variant::NoFilter),
            "no-rationale" => Ok(Variant::NoRationale),
            other => match other.strip_prefix("single:") {
                Some(p) => Ok(Variant::Single(p.parse()?)),
                None => Err(Error::invalid(format!(
                    "unknown variant '{other}' (expected full|no-filter|single:<perspective>|no-rationale)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: String,
    pub micro_f1: MeanStd,
    pub macro_f1: MeanStd,
    pub ece: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub reports: Vec<CvReport>,
}

impl CompareReport {
    /// Fixed-width side-by-side table.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut out = format!("{:<width$}  {:>15}  {:>15}  {:>15}\n", "variant", "micro_f1", "macro_f1", "ece");
        for r in &self.rows {
            let cell = |m: &MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
            let _ = writeln!(
                out,
                "{:<width$}  {:>15}  {:>15}  {:>15}",
                r.variant,
                cell(&r.micro_f1),
                cell(&r.macro_f1),
                cell(&r.ece)
            );
        }
        out
    }
}

/// Runs each variant under the same folds and seeds. Generation is limited
/// to the perspectives some variant needs; sentences are scored once and
/// shared by every filtered variant.
pub fn cmd_compare(cfg: &RunConfig, services: &Services, variants: &[Variant]) -> Result<CompareReport> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::invalid("no variants requested"));
    }
    let dataset = load_dataset(cfg)?;
    let configured = cfg.canonical_perspectives();
    let needed: Vec<Perspective> = {
        let set: HashSet<Perspective> = variants.iter().flat_map(|v| v.perspectives(&configured)).collect();
        let mut v: Vec<_> = set.into_iter().collect();
        v.sort();
        v
    };

    let scored: Vec<Vec<RefinedRationale>> = if needed.is_empty() {
        vec![Vec::new(); dataset.len()]
    } else {
        generate_into_cache(cfg, services, dataset.instances(), &needed)?;
        let rationales = cached_rationales(cfg, dataset.instances(), services.chat.model_name(), &needed)?;
        refine_dataset(cfg, services, dataset.instances(), &rationales)?
    };

    let mut rows = Vec::with_capacity(variants.len());
    let mut reports = Vec::with_capacity(variants.len());
    for v in variants {
        let wanted = v.perspectives(&configured);
        let refined: Vec<Vec<RefinedRationale>> = scored
            .iter()
            .map(|rs| {
                rs.iter()
                    .filter(|r| wanted.contains(&r.perspective))
                    .map(|r| match v {
                        Variant::NoFilter => RefinedRationale { kept: vec![true; r.kept.len()], ..r.clone() },
                        _ => r.clone(),
                    })
                    .collect()
            })
            .collect();
        let (report, _) = train_and_report(cfg, services, &dataset, &refined)
            .map_err(|e| e.with_context(&format!("variant {}", v.name())))?;
        info!(variant = %v.name(), micro_f1 = report.aggregate.micro_f1.mean, "variant finished");
        rows.push(CompareRow {
            variant: v.name(),
            micro_f1: report.aggregate.micro_f1,
            macro_f1: report.aggregate.macro_f1,
            ece: report.aggregate.ece,
        });
        reports.push(report);
    }
    let out = CompareReport { rows, reports };
    if let Some(path) = &cfg.report_path {
        write_json(path, &out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{self, SyntheticConfig};

    fn setup(dir: &Path, n: usize) -> RunConfig {
        let syn = SyntheticConfig { n_instances: n, ..SyntheticConfig::default() };
        let ds = dir.join("data.jsonl");
        let corpus = dir.join("corpus.jsonl");
        write_jsonl(&ds, &synthetic::dataset(&syn).unwrap()).unwrap();
        write_jsonl(&corpus, &synthetic::corpus(&syn)).unwrap();
        RunConfig {
            dataset_path: Some(ds),
            corpus_path: Some(corpus),
            cache_path: Some(dir.join("cache.jsonl")),
            refined_path: Some(dir.join("refined.jsonl")),
            train: TrainConfig { epochs: 3, d_h: 8, ..TrainConfig::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn generate_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), 10);
        let services = Services::from_config(&cfg).unwrap();
        let first = cmd_generate(&cfg, &services).unwrap();
        assert_eq!(first.new_rows, 50);
        let again = cmd_generate(&cfg, &services).unwrap();
        assert_eq!((again.new_rows, again.existing_rows), (0, 50));
    }

    #[test]
    fn missing_dataset_names_path() {
        let cfg = RunConfig {
            dataset_path: Some("/nonexistent/data.jsonl".into()),
            cache_path: Some("/tmp/unused.jsonl".into()),
            ..RunConfig::default()
        };
        let services = Services::from_config(&cfg).unwrap();
        let err = cmd_generate(&cfg, &services).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(err.to_string().contains("/nonexistent/data.jsonl"));
    }

    #[test]
    fn keep_all_marks_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path(), 10);
        cfg.filter = FilterConfig::keep_all();
        let services = Services::from_config(&cfg).unwrap();
        cmd_generate(&cfg, &services).unwrap();
        assert_eq!(cmd_refine(&cfg, &services).unwrap(), 50);
        let rows: Vec<RefinedRow> = read_jsonl(cfg.refined_path.as_ref().unwrap()).unwrap();
        assert!(rows.iter().flat_map(|r| &r.sentences).all(|s| s.kept));
    }

    #[test]
    fn refine_requires_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), 10);
        let services = Services::from_config(&cfg).unwrap();
        assert!(matches!(cmd_refine(&cfg, &services), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn refined_row_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), 10);
        let services = Services::from_config(&cfg).unwrap();
        cmd_generate(&cfg, &services).unwrap();
        cmd_refine(&cfg, &services).unwrap();
        let rows: Vec<RefinedRow> = read_jsonl(cfg.refined_path.as_ref().unwrap()).unwrap();
        for row in &rows {
            assert_eq!(&RefinedRow::from_refined(&row.instance_id, &row.to_refined().unwrap()).unwrap(), row);
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in [
            Variant::Full,
            Variant::NoFilter,
            Variant::NoRationale,
            Variant::Single(Perspective::Object),
        ] {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("single:mood".parse::<Variant>().is_err());
        assert!("partial".parse::<Variant>().is_err());
    }

    #[test]
    fn config_rejects_zero_fraction() {
        let cfg: RunConfig = serde_json::from_str(r#"{"filter": {"factuality_keep_fraction": 0.0}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn compare_single_generates_one_perspective() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), 10);
        let services = Services::from_config(&cfg).unwrap();
        let out = cmd_compare(&cfg, &services, &[Variant::Single(Perspective::Propaganda), Variant::NoRationale]).unwrap();
        assert_eq!(out.rows.len(), 2);
        let cache: Vec<CacheRow> = read_jsonl(cfg.cache_path.as_ref().unwrap()).unwrap();
        assert_eq!(cache.len(), 10);
        assert!(cache.iter().all(|r| r.perspective == Perspective::Propaganda));
        assert_eq!(out.to_table().lines().count(), 3);
    }
}
