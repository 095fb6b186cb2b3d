//! The refine stage on a four-instance fixture: every score is rechecked
//! against independent recomputation, then the file is compared with the
//! recorded golden copy. Set `MMD_UPDATE_GOLDEN=1` to re-record it.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::PathBuf;

use mmd_core::domain::tokenize;
use mmd_core::pipeline::{self, RefinedRow, RunConfig, Services};
use mmd_core::providers::{Embedder, MockEmbedder};
use mmd_core::retrieval::CorpusDoc;
use mmd_core::synthetic::{self, SyntheticConfig};

mod common;

fn overlap_support(sentence: &str, doc: &str) -> f64 {
    let s: HashSet<String> = tokenize(sentence).into_iter().collect();
    let d: HashSet<String> = tokenize(doc).into_iter().collect();
    let common = s.intersection(&d).count() as f64;
    let stance = if s.is_empty() { 0.0 } else { common / s.len() as f64 };
    let summary = if d.is_empty() { 0.0 } else { (common / d.len() as f64).min(1.0) };
    (stance + summary) / 2.0
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[test]
fn refined_file_matches_oracle_and_golden() {
    let dir = tempfile::tempdir().unwrap();
    let syn = SyntheticConfig { n_instances: 4, topic_docs: 12, ..SyntheticConfig::default() };
    let instances = synthetic::dataset(&syn).unwrap();
    let docs: Vec<CorpusDoc> = synthetic::corpus(&syn);
    pipeline::write_jsonl(&dir.path().join("dataset.jsonl"), &instances).unwrap();
    pipeline::write_jsonl(&dir.path().join("corpus.jsonl"), &docs).unwrap();
    let cfg = RunConfig {
        dataset_path: Some(dir.path().join("dataset.jsonl")),
        corpus_path: Some(dir.path().join("corpus.jsonl")),
        cache_path: Some(dir.path().join("cache.jsonl")),
        refined_path: Some(dir.path().join("refined.jsonl")),
        ..RunConfig::default()
    };
    let services = Services::from_config(&cfg).unwrap();
    assert_eq!(pipeline::cmd_generate(&cfg, &services).unwrap().new_rows, 20);
    assert_eq!(pipeline::cmd_refine(&cfg, &services).unwrap(), 20);

    let rows: Vec<RefinedRow> = pipeline::read_jsonl(cfg.refined_path.as_ref().unwrap()).unwrap();
    let articles: HashMap<&str, &str> = instances.iter().map(|i| (i.id.as_str(), i.text.as_str())).collect();
    let bodies: HashMap<&str, &str> = docs.iter().map(|d| (d.doc_id.as_str(), d.body.as_str())).collect();
    let embedder = MockEmbedder::new("relevance", cfg.mock.relevance_dim).unwrap();
    for row in &rows {
        let article = embedder.embed(articles[row.instance_id.as_str()]).unwrap();
        assert!(row.sentences.iter().any(|s| s.kept));
        for s in &row.sentences {
            let expected_f = common::naive_bm25(&docs, &s.text)
                .iter()
                .take(cfg.filter.retrieval_p)
                .map(|(id, _)| overlap_support(&s.text, bodies[id.as_str()]))
                .fold(0.0f64, f64::max);
            assert!((s.factuality - expected_f).abs() <= 1e-12, "{}: {} vs {expected_f}", s.text, s.factuality);
            let expected_r = cosine(article.values(), embedder.embed(&s.text).unwrap().values());
            assert!((s.relevance - expected_r).abs() <= 1e-12, "{}: {} vs {expected_r}", s.text, s.relevance);
        }
    }

    let produced = fs::read_to_string(cfg.refined_path.as_ref().unwrap()).unwrap();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/refined_golden.jsonl");
    if std::env::var("MMD_UPDATE_GOLDEN").is_ok_and(|v| v == "1") {
        fs::write(&golden, &produced).unwrap();
    }
    let recorded = fs::read_to_string(&golden).expect("golden file missing; run with MMD_UPDATE_GOLDEN=1");
    assert_eq!(produced, recorded);
}
