//! The iterative annotation loop: pick a random unannotated record, find the
//! objects it uses, fetch their documentation, annotate, checkpoint.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::annotate::{annotate_card, AnnotateError, CardSource};
use super::{extract_apps, lookup_docs, CorpusManifest, DocStore, KbError, KbPaths};
use crate::hit;
use crate::llm::LlmClient;
use crate::templates::Templates;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowOptions {
    pub seed: u64,
    /// Maximum number of records to attempt in this invocation.
    pub budget: Option<usize>,
    /// Records annotated concurrently per batch.
    pub batch_size: usize,
    pub max_attempts: usize,
}

impl Default for WorkflowOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: None,
            batch_size: 1,
            max_attempts: super::DEFAULT_ANNOTATION_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkflowReport {
    /// Record ids annotated in this invocation, in processing order.
    pub annotated: Vec<String>,
    /// (record id, reason) for records that could not be annotated.
    pub failed: Vec<(String, String)>,
    /// Unannotated records left in the manifest.
    pub remaining: usize,
    pub interrupted: bool,
}

/// The seeded visiting order over all records. Drawing from the unannotated
/// records in this order is a uniform random choice at every step, and it
/// is the same order across interrupted and resumed invocations.
pub fn selection_order(manifest: &CorpusManifest, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = manifest.records.iter().map(|r| r.record_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

fn card_name(source_path: &str) -> String {
    Path::new(source_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| source_path.to_string())
}

fn annotate_record(
    manifest: &CorpusManifest,
    record_id: &str,
    store: &DocStore,
    llm: &LlmClient,
    templates: &Templates,
    max_attempts: usize,
) -> Result<super::AnnotatedCard, String> {
    let rec = manifest.get(record_id).ok_or("record vanished from manifest")?;
    let path = Path::new(&manifest.root).join(&rec.source_path);
    let content = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc = hit::parse(&content).map_err(|d| format!("source does not parse: {} diagnostics", d.len()))?;
    let apps = extract_apps(&doc);
    let docs = lookup_docs(&apps, store);
    if !docs.unknown.is_empty() {
        log::info!("{}: no documentation for {:?}", rec.source_path, docs.unknown);
    }
    let source = CardSource {
        record_id: record_id.to_string(),
        name: card_name(&rec.source_path),
        source_path: rec.source_path.clone(),
        content,
    };
    annotate_card(&source, &docs.found, llm, templates, max_attempts).map_err(|e: AnnotateError| e.to_string())
}

/// Annotates unannotated records until none remain, the budget is spent or
/// `stop` is raised. The manifest is checkpointed after every record.
pub fn run_annotation_workflow(
    kb: &KbPaths,
    manifest: &mut CorpusManifest,
    store: &DocStore,
    llm: &LlmClient,
    templates: &Templates,
    options: &WorkflowOptions,
    stop: &AtomicBool,
) -> Result<WorkflowReport, KbError> {
    if manifest.reconcile(kb) > 0 {
        manifest.save(&kb.manifest())?;
    }
    let mut queue: Vec<String> = selection_order(manifest, options.seed)
        .into_iter()
        .filter(|id| manifest.get(id).is_some_and(|r| !r.annotated))
        .collect();
    queue.reverse();

    let mut report = WorkflowReport::default();
    let mut budget = options.budget.unwrap_or(usize::MAX);
    let batch_size = options.batch_size.max(1);
    while budget > 0 && !queue.is_empty() {
        if stop.load(Ordering::SeqCst) {
            report.interrupted = true;
            break;
        }
        let take = batch_size.min(budget).min(queue.len());
        let batch: Vec<String> = (0..take).filter_map(|_| queue.pop()).collect();
        budget -= take;

        let snapshot: &CorpusManifest = manifest;
        let results: Vec<Result<super::AnnotatedCard, String>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|id| s.spawn(move || annotate_record(snapshot, id, store, llm, templates, options.max_attempts)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("annotation worker panicked".into())))
                .collect()
        });

        // single writer: persist in selection order
        for (id, result) in batch.into_iter().zip(results) {
            match result {
                Ok(card) => {
                    kb.save_card(&id, &card)?;
                    manifest.mark_annotated(&id)?;
                    manifest.save(&kb.manifest())?;
                    report.annotated.push(id);
                }
                Err(reason) => {
                    log::warn!("record {id} left unannotated: {reason}");
                    report.failed.push((id, reason));
                }
            }
        }
    }
    if !queue.is_empty() && stop.load(Ordering::SeqCst) {
        report.interrupted = true;
    }
    report.remaining = manifest.unannotated().count();
    Ok(report)
}
