use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};

use hitforge::agents::{run_pipeline, Interaction, NonInteractive, PipelineDeps, PipelineStatus, Terminal};
use hitforge::eval::{
    compute_metrics, report, run_suite, CaseId, PipelineTrials, ReplayDir, TestCase, TrialDeps,
};
use hitforge::kb::{
    ingest_docs, run_annotation_workflow, scan_repository, AnnotatedCard, CorpusManifest, DocStore, KbPaths,
    WorkflowOptions,
};
use hitforge::llm::{HttpBackend, HttpBackendConfig, LlmClient, ReplayBackend};
use hitforge::retrieval::{
    build_card_index, build_doc_index, CardRetriever, Embedder, HashingEmbedder, HttpEmbedder, HttpEmbedderConfig,
    ReplayEmbedder, VectorIndex,
};
use hitforge::runner::{MarkerTable, MockRunner, ProcessRunner, Runner};
use hitforge::templates::Templates;

use crate::config::{Config, EmbeddingProvider};

/// Why a command did not succeed, mapped onto the documented exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, flags or missing inputs: exit 2.
    Config(anyhow::Error),
    /// Any other error: exit 1.
    Error(anyhow::Error),
    /// The pipeline ended without working cards: exit 3, 4, 5 or 1.
    Pipeline(PipelineStatus),
    /// Some case completed no trial: exit 6.
    EvalIncomplete(Vec<CaseId>),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Error(_) => 1,
            Failure::Config(_) => 2,
            Failure::Pipeline(PipelineStatus::FailedMaxIterations) => 3,
            Failure::Pipeline(PipelineStatus::FailedStalledUnrecovered) => 4,
            Failure::Pipeline(PipelineStatus::Aborted) => 5,
            Failure::Pipeline(_) => 1,
            Failure::EvalIncomplete(_) => 6,
        }
    }

    pub fn message(&self) -> Option<String> {
        match self {
            Failure::Config(e) | Failure::Error(e) => Some(format!("{e:#}")),
            Failure::Pipeline(_) => None,
            Failure::EvalIncomplete(cases) => Some(format!(
                "no completed trial for {}",
                cases.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
            )),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Error(e.into())
}

fn templates(config: &Config) -> Result<Templates, Failure> {
    Templates::load(config.paths.templates.as_deref())
        .context("loading prompt templates")
        .map_err(config_err)
}

fn markers(config: &Config) -> Result<MarkerTable, Failure> {
    match &config.paths.markers {
        Some(p) => MarkerTable::load(p).map_err(config_err),
        None => Ok(MarkerTable::default()),
    }
}

fn embedder(config: &Config) -> Result<Arc<dyn Embedder>, Failure> {
    let e = &config.embedding;
    Ok(match e.provider {
        EmbeddingProvider::Hashing => Arc::new(HashingEmbedder::new(e.dim)),
        EmbeddingProvider::Replay => {
            let file = e.replay_file.as_ref().expect("validated");
            Arc::new(ReplayEmbedder::from_file(file).map_err(config_err)?)
        }
        EmbeddingProvider::Http => Arc::new(
            HttpEmbedder::new(HttpEmbedderConfig {
                endpoint: e.endpoint.clone(),
                api_key: e.api_key.clone(),
                model: e.model.clone(),
                timeout_seconds: e.timeout_seconds,
            })
            .map_err(config_err)?,
        ),
    })
}

fn live_llm(config: &Config) -> Result<LlmClient, Failure> {
    let l = &config.llm;
    if l.api_key.is_empty() {
        return Err(config_err(anyhow!(
            "no model API key: set llm.api_key or HITFORGE_LLM_API_KEY, or pass --replay"
        )));
    }
    let backend = HttpBackend::new(HttpBackendConfig {
        endpoint: l.endpoint.clone(),
        api_key: l.api_key.clone(),
        reasoning_model: l.reasoning_model.clone(),
        general_model: l.general_model.clone(),
        timeout_seconds: l.timeout_seconds,
    })
    .map_err(config_err)?;
    Ok(LlmClient::new(Arc::new(backend)))
}

fn llm(config: &Config, replay: Option<&Path>) -> Result<LlmClient, Failure> {
    match replay {
        Some(dir) => {
            let file = dir.join("llm.json");
            let backend = ReplayBackend::from_file(&file)
                .with_context(|| format!("loading replay script {}", file.display()))
                .map_err(config_err)?;
            Ok(LlmClient::new(Arc::new(backend)))
        }
        None => live_llm(config),
    }
}

fn mock_runner(script: &Path, markers: &MarkerTable) -> Result<MockRunner, Failure> {
    MockRunner::from_file(script)
        .map(|m| m.with_markers(markers.clone()))
        .map_err(config_err)
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(error)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// A new directory `<parent>/<prefix>-<n>` with the smallest free `n`.
fn fresh_dir(parent: &Path, prefix: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(parent)
        .with_context(|| format!("creating {}", parent.display()))
        .map_err(error)?;
    for n in 1.. {
        let dir = parent.join(format!("{prefix}-{n}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(error(anyhow!("creating {}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn require_kb(config: &Config) -> Result<(KbPaths, CorpusManifest), Failure> {
    let kb = KbPaths::new(&config.paths.kb_dir);
    if !kb.manifest().is_file() {
        return Err(config_err(anyhow!(
            "no knowledge base at {} (run `hitforge build-kb` first)",
            config.paths.kb_dir.display()
        )));
    }
    let manifest = CorpusManifest::load(&kb.manifest()).map_err(config_err)?;
    Ok((kb, manifest))
}

fn annotated_cards(kb: &KbPaths, manifest: &CorpusManifest) -> Result<BTreeMap<String, AnnotatedCard>, Failure> {
    let wanted: BTreeSet<&str> = manifest
        .records
        .iter()
        .filter(|r| r.annotated)
        .map(|r| r.record_id.as_str())
        .collect();
    let mut cards = kb.load_cards().map_err(error)?;
    cards.retain(|id, _| wanted.contains(id.as_str()));
    Ok(cards)
}

/// Rebuilds and persists the card-summary index; returns its entry count.
fn write_card_index(config: &Config, kb: &KbPaths, manifest: &CorpusManifest) -> Result<usize, Failure> {
    let cards = annotated_cards(kb, manifest)?;
    let index = build_card_index(&cards, embedder(config)?.as_ref(), config.embedding.embed_text).map_err(error)?;
    index.persist(&kb.card_index()).map_err(error)?;
    Ok(index.len())
}

fn retriever(config: &Config) -> Result<CardRetriever, Failure> {
    let (kb, manifest) = require_kb(config)?;
    let cards = annotated_cards(&kb, &manifest)?;
    let index = if kb.card_index().is_file() {
        VectorIndex::load(&kb.card_index()).map_err(error)?
    } else {
        VectorIndex::new()
    };
    Ok(CardRetriever::new(embedder(config)?, index, cards))
}

pub fn build_kb(config: &Config, root: &Path, dump: &Path) -> Result<(), Failure> {
    let root = root
        .canonicalize()
        .with_context(|| format!("card repository {}", root.display()))
        .map_err(error)?;
    if !dump.is_file() {
        return Err(error(anyhow!("documentation dump {} not found", dump.display())));
    }
    let kb = KbPaths::new(&config.paths.kb_dir);
    let mut manifest = scan_repository(&root).map_err(error)?;
    if kb.manifest().is_file() {
        let previous = CorpusManifest::load(&kb.manifest()).map_err(error)?;
        manifest.merge_from(&previous);
    }
    manifest.reconcile(&kb);
    let docs = ingest_docs(dump, Some(&root)).map_err(error)?;
    docs.store.save(&kb.docs()).map_err(error)?;
    manifest.save(&kb.manifest()).map_err(error)?;

    let cards = write_card_index(config, &kb, &manifest)?;
    let doc_index = build_doc_index(&docs.store, embedder(config)?.as_ref()).map_err(error)?;
    doc_index.persist(&kb.doc_index()).map_err(error)?;

    println!("records: {} ({} annotated)", manifest.records.len(), manifest.annotated_count());
    println!("docs: {} ({} enriched from the repository)", docs.store.len(), docs.enriched.len());
    println!("card index: {cards} entries, sha256 {}", sha256_file(&kb.card_index())?);
    println!("doc index: {} entries, sha256 {}", doc_index.len(), sha256_file(&kb.doc_index())?);
    Ok(())
}

pub fn annotate(config: &Config, budget: Option<usize>, replay: Option<&Path>) -> Result<(), Failure> {
    let (kb, mut manifest) = require_kb(config)?;
    let store = if kb.docs().is_file() {
        DocStore::load(&kb.docs()).map_err(error)?
    } else {
        DocStore::new()
    };
    let client = llm(config, replay)?;
    let templates = templates(config)?;
    let options = WorkflowOptions {
        seed: config.seed,
        budget,
        batch_size: config.annotate.batch_size,
        max_attempts: config.annotate.max_attempts,
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("interrupt handler not installed: {e}");
    }
    let report = run_annotation_workflow(&kb, &mut manifest, &store, &client, &templates, &options, &stop)
        .map_err(error)?;
    let entries = write_card_index(config, &kb, &manifest)?;
    for (id, reason) in &report.failed {
        eprintln!("failed {id}: {reason}");
    }
    println!(
        "annotated: {}, failed: {}, remaining: {}{}",
        report.annotated.len(),
        report.failed.len(),
        report.remaining,
        if report.interrupted { " (interrupted)" } else { "" }
    );
    println!("card index: {entries} entries");
    if report.annotated.is_empty() && !report.failed.is_empty() {
        return Err(error(anyhow!("no record could be annotated")));
    }
    Ok(())
}

fn request_text(request: &str) -> Result<String, Failure> {
    let path = Path::new(request);
    if path.is_file() {
        return std::fs::read_to_string(path)
            .with_context(|| format!("reading request {}", path.display()))
            .map_err(config_err);
    }
    Ok(request.to_string())
}

pub fn run(
    config: &Config,
    request: &str,
    interactive: bool,
    replay: Option<&Path>,
    mock: Option<&Path>,
) -> Result<(), Failure> {
    let request = request_text(request)?;
    let retrieval = retriever(config)?;
    let client = llm(config, replay)?;
    let templates = templates(config)?;
    let markers = markers(config)?;
    let replay_runner = replay.map(|d| d.join("runner.json")).filter(|p| p.is_file());
    let runner: Box<dyn Runner> = match mock.map(Path::to_path_buf).or(replay_runner) {
        Some(script) => Box::new(mock_runner(&script, &markers)?),
        None => Box::new(ProcessRunner::new(config.runner.clone(), markers.clone())),
    };
    let run_dir = fresh_dir(&config.paths.work_dir, "run")?;

    let stdin = std::io::stdin();
    let mut terminal;
    let mut batch = NonInteractive;
    let interaction: &mut dyn Interaction = if interactive {
        terminal = Terminal::new(stdin.lock(), std::io::stderr());
        &mut terminal
    } else {
        &mut batch
    };
    let state = run_pipeline(
        &request,
        PipelineDeps {
            llm: &client,
            retrieval: &retrieval,
            runner: runner.as_ref(),
            interaction,
            templates: &templates,
            markers: &markers,
            config: &config.pipeline,
        },
        &run_dir,
    );
    println!("status: {}", state.status);
    if let Some(cause) = &state.cause {
        println!("cause: {cause}");
    }
    println!("iterations: {}, escalations: {}", state.iteration, state.escalations);
    println!("tokens: {}", state.token_usage);
    println!("run log: {}", run_dir.display());
    match state.status {
        PipelineStatus::Success => Ok(()),
        other => Err(Failure::Pipeline(other)),
    }
}

pub fn eval(
    config: &Config,
    case_names: &[String],
    trials: Option<usize>,
    replay: Option<&Path>,
    mock: Option<&Path>,
) -> Result<(), Failure> {
    let ids: Vec<CaseId> = if case_names.is_empty() {
        CaseId::ALL.to_vec()
    } else {
        case_names
            .iter()
            .map(|n| n.parse::<CaseId>())
            .collect::<Result<_, _>>()
            .map_err(config_err)?
    };
    let trials = trials.unwrap_or(config.eval.trials);
    if trials == 0 {
        return Err(config_err(anyhow!("--trials must be at least 1")));
    }
    let cases: Vec<TestCase> = ids.iter().map(|&c| TestCase::fixture(c, trials)).collect();
    let retrieval = retriever(config)?;
    let templates = templates(config)?;
    let markers = markers(config)?;
    if let Some(m) = mock {
        mock_runner(m, &markers)?;
    }
    let out = fresh_dir(&config.paths.work_dir, "eval")?;

    let replay_dir = replay.map(|root| ReplayDir {
        root: root.to_path_buf(),
        runner_override: mock.map(Path::to_path_buf),
        markers: markers.clone(),
    });
    if let Some(r) = &replay_dir {
        if let Some(missing) = cases.iter().find(|c| !r.has_case(c)) {
            return Err(config_err(anyhow!(
                "no replay scripts for {} under {}",
                missing.case_id,
                r.root.display()
            )));
        }
    }
    let factory = |case: &TestCase, trial: usize| -> Result<TrialDeps, String> {
        if let Some(r) = &replay_dir {
            return r.deps(case, trial);
        }
        let llm = live_llm(config).map_err(|f| f.message().unwrap_or_default())?;
        let runner: Box<dyn Runner> = match mock {
            Some(m) => Box::new(mock_runner(m, &markers).map_err(|f| f.message().unwrap_or_default())?),
            None => Box::new(ProcessRunner::new(config.runner.clone(), markers.clone())),
        };
        Ok(TrialDeps { llm, runner })
    };
    let runner = PipelineTrials {
        deps: &factory,
        retrieval: &retrieval,
        templates: &templates,
        markers: &markers,
        config: &config.pipeline,
    };
    let records = run_suite(&cases, &runner, &out, config.eval.concurrency);
    let records_path = out.join("records.json");
    std::fs::write(&records_path, serde_json::to_string_pretty(&records).expect("records serialize"))
        .with_context(|| format!("writing {}", records_path.display()))
        .map_err(error)?;
    let metrics = compute_metrics(&records, config.eval.token_aggregate).map_err(error)?;
    let table = report(&metrics);
    let (json, text) = table.write(&out).map_err(error)?;
    print!("{}", table.to_text());
    println!("report: {}", json.display());
    println!("table: {}", text.display());

    let incomplete: Vec<CaseId> = records
        .iter()
        .filter(|c| !c.trials.iter().any(|t| t.completed))
        .map(|c| c.case_id)
        .collect();
    if !incomplete.is_empty() {
        return Err(Failure::EvalIncomplete(incomplete));
    }
    Ok(())
}
