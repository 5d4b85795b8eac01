//! End-to-end orchestration: configuration, resource loading, backend
//! selection and per-trace translation with stable artifact names.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    request_hash, BackendConfig, BackendError, ChatRequest, HttpBackend, LlmBackend, MockBackend, RecordingBackend,
    ReplayBackend, Throttled, DEFAULT_IN_FLIGHT, INFORMALIZE_TEMPERATURE, SUMMARIZE_TEMPERATURE,
};
use crate::informalize::{
    by_step_id, informalize_statement, informalize_trace, statement_premises, FewshotPool, InformalizeConfig,
    InformalizeError, StepExplanation,
};
use crate::premise::{PremiseLibrary, PremiseRecord};
use crate::summarize::{summarize_tree, Mode, SummarizeConfig, SummarizeError, Summary, DEFAULT_CHILD_BUDGET};
use crate::template::Catalog;
use crate::trace::{load_trace, ProofTrace};
use crate::tree::{attach_explanations, build_tree, ProofTreeNode};

/// Failure classes with distinct process exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("validation error: {0}")]
    Validation(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Backend(_) => 2,
            PipelineError::Validation(_) => 3,
        }
    }
}

impl From<InformalizeError> for PipelineError {
    fn from(e: InformalizeError) -> Self {
        match e.backend_error() {
            Some(_) => PipelineError::Backend(e.to_string()),
            None => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<SummarizeError> for PipelineError {
    fn from(e: SummarizeError) -> Self {
        match e.backend_error() {
            Some(_) => PipelineError::Backend(e.to_string()),
            None => PipelineError::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> PipelineError {
    PipelineError::Config(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    /// Deterministic offline backend that shapes replies from the prompt.
    Mock,
}

/// Every pipeline setting. Mirrors the command-line flags and can be read
/// from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub traces: Vec<PathBuf>,
    pub library: Option<PathBuf>,
    pub modules: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub fewshots: Option<PathBuf>,
    pub statement_fewshots: Option<PathBuf>,
    pub backend: BackendConfig,
    pub backend_kind: BackendKind,
    pub record: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub mode: Mode,
    pub informalize_temperature: f64,
    pub summarize_temperature: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub in_flight: usize,
    pub child_budget: usize,
    pub concurrent_siblings: bool,
    pub dry_run: bool,
    pub emit_tree: bool,
    pub emit_subproofs: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            traces: Vec::new(),
            library: None,
            modules: None,
            catalog: None,
            fewshots: None,
            statement_fewshots: None,
            backend: BackendConfig::default(),
            backend_kind: BackendKind::Http,
            record: None,
            replay: None,
            mode: Mode::Recursive,
            informalize_temperature: INFORMALIZE_TEMPERATURE,
            summarize_temperature: SUMMARIZE_TEMPERATURE,
            seed: 0,
            output_dir: PathBuf::from("out"),
            in_flight: DEFAULT_IN_FLIGHT,
            child_budget: DEFAULT_CHILD_BUDGET,
            concurrent_siblings: false,
            dry_run: false,
            emit_tree: false,
            emit_subproofs: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("malformed config {}: {e}", path.display())))
    }

    /// Checks every input path and numeric setting before any backend call.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let inputs = self
            .traces
            .iter()
            .chain(&self.library)
            .chain(&self.modules)
            .chain(&self.catalog)
            .chain(&self.fewshots)
            .chain(&self.statement_fewshots)
            .chain(&self.replay);
        for p in inputs {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("no such file: {}", p.display())));
            }
        }
        if self.fewshots.is_some() != self.statement_fewshots.is_some() {
            return Err(PipelineError::Config("few-shot and statement few-shot files must be given together".into()));
        }
        for (name, t) in [
            ("informalize_temperature", self.informalize_temperature),
            ("summarize_temperature", self.summarize_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(PipelineError::Config(format!("{name} {t} outside [0, 2]")));
            }
        }
        if self.in_flight == 0 {
            return Err(PipelineError::Config("in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn informalize_config(&self) -> InformalizeConfig {
        InformalizeConfig {
            model: self.backend.model.clone(),
            temperature: self.informalize_temperature,
            // Dry runs dump prompts in call order, so keep that order fixed.
            parallelism: if self.dry_run { 1 } else { self.in_flight },
            ..InformalizeConfig::default()
        }
    }

    pub fn summarize_config(&self) -> SummarizeConfig {
        SummarizeConfig {
            model: self.backend.model.clone(),
            temperature: self.summarize_temperature,
            mode: self.mode,
            child_budget: self.child_budget,
            concurrent_siblings: self.concurrent_siblings && !self.dry_run,
        }
    }
}

/// Catalog, premise library and few-shot pool for a run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub catalog: Catalog,
    pub library: PremiseLibrary,
    pub pool: FewshotPool,
}

impl Resources {
    /// Loads configured files, falling back to the built-in catalog and
    /// few-shots and to an empty library.
    pub fn load(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let catalog = match &config.catalog {
            Some(p) => Catalog::load(p).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => Catalog::builtin(),
        };
        let library = match &config.library {
            Some(p) => PremiseLibrary::load(p, config.modules.as_deref())
                .map_err(|e| PipelineError::Config(e.to_string()))?,
            None => PremiseLibrary::new(Vec::new(), Vec::new()).expect("empty library is valid"),
        };
        let pool = match (&config.fewshots, &config.statement_fewshots) {
            (Some(s), Some(t)) => FewshotPool::load(s, t).map_err(|e| PipelineError::Config(e.to_string()))?,
            _ => FewshotPool::builtin(),
        };
        Ok(Resources { catalog, library, pool })
    }
}

/// Answers every request with a placeholder and keeps the requests, so a
/// dry run can assemble and dump every prompt without a model.
#[derive(Default)]
pub struct PromptCollector {
    requests: Mutex<Vec<ChatRequest>>,
}

impl PromptCollector {
    pub fn take(&self) -> Vec<ChatRequest> {
        std::mem::take(&mut *self.requests.lock().unwrap())
    }
}

impl LlmBackend for PromptCollector {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        Ok(format!("[pending {}]", &request_hash(request)[..12]))
    }
}

/// Builds the backend chain: replay, or the configured backend optionally
/// recorded, capped at `in_flight` concurrent requests.
pub fn make_backend(config: &PipelineConfig) -> Result<Box<dyn LlmBackend>, PipelineError> {
    if let Some(path) = &config.replay {
        let replay = ReplayBackend::load(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        return Ok(Box::new(replay));
    }
    let base: Box<dyn LlmBackend> = match config.backend_kind {
        BackendKind::Http => Box::new(HttpBackend::from_env(config.backend.clone())),
        BackendKind::Mock => Box::new(MockBackend::structured()),
    };
    let base: Box<dyn LlmBackend> = match &config.record {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            Box::new(RecordingBackend::open(base, path).map_err(|e| io_error(path, e))?)
        }
        None => base,
    };
    Ok(Box::new(Throttled::new(base, config.in_flight)))
}

pub fn load_traces(config: &PipelineConfig) -> Result<Vec<(String, ProofTrace)>, PipelineError> {
    config
        .traces
        .iter()
        .map(|p| {
            let trace = load_trace(p).map_err(|e| PipelineError::Validation(e.to_string()))?;
            Ok((artifact_stem(p), trace))
        })
        .collect()
}

/// File stem used to name a trace's artifacts (`even_add_even.trace` gives
/// `even_add_even`).
pub fn artifact_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into())
}

/// Everything produced for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub theorem_name: String,
    pub statement_nl: String,
    pub explanations: Vec<StepExplanation>,
    pub tree: ProofTreeNode,
    pub summary: Summary,
}

pub fn informalize_steps<B: LlmBackend + ?Sized>(
    trace: &ProofTrace,
    resources: &Resources,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Vec<StepExplanation>, PipelineError> {
    Ok(informalize_trace(
        trace,
        &resources.library,
        &resources.catalog,
        &resources.pool,
        backend,
        &config.informalize_config(),
    )?)
}

/// Informalize, build and annotate the tree, informalize the statement,
/// summarize.
pub fn translate<B: LlmBackend + ?Sized>(
    trace: &ProofTrace,
    resources: &Resources,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Translation, PipelineError> {
    let tree = build_tree(trace).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let explanations = informalize_steps(trace, resources, backend, config)?;
    let annotated = attach_explanations(&tree, &by_step_id(explanations.clone()))
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    let premises: Vec<&PremiseRecord> = statement_premises(trace, &resources.library);
    let statement_nl = informalize_statement(
        &trace.theorem_statement,
        &premises,
        &resources.pool,
        backend,
        &config.informalize_config(),
    )?;
    let summary = summarize_tree(&annotated, &statement_nl, backend, &config.summarize_config())?;
    Ok(Translation {
        theorem_name: trace.theorem_name.clone(),
        statement_nl,
        explanations,
        tree: annotated,
        summary,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Writes `<stem>.steps.json`.
pub fn write_explanations(dir: &Path, stem: &str, explanations: &[StepExplanation]) -> Result<PathBuf, PipelineError> {
    let path = dir.join(format!("{stem}.steps.json"));
    write(&path, &pretty(&explanations))?;
    Ok(path)
}

/// Writes `<stem>.tree.txt`, `<stem>.tree.dot` and `<stem>.tree.json`.
pub fn write_tree(dir: &Path, stem: &str, tree: &ProofTreeNode) -> Result<(), PipelineError> {
    write(&dir.join(format!("{stem}.tree.txt")), &tree.to_text())?;
    write(&dir.join(format!("{stem}.tree.dot")), &tree.to_dot())?;
    write(&dir.join(format!("{stem}.tree.json")), &pretty(tree))
}

/// Writes the artifacts of a translation and returns the proof file path.
pub fn write_translation(
    config: &PipelineConfig,
    stem: &str,
    translation: &Translation,
) -> Result<PathBuf, PipelineError> {
    let dir = &config.output_dir;
    let proof_path = dir.join(format!("{stem}.proof.txt"));
    write(&proof_path, &format!("{}\n", translation.summary.proof.trim_end()))?;
    write_explanations(dir, stem, &translation.explanations)?;
    write(&dir.join(format!("{stem}.statement.txt")), &format!("{}\n", translation.statement_nl.trim_end()))?;
    if config.emit_tree {
        write_tree(dir, stem, &translation.tree)?;
    }
    if let Some(sub_dir) = &config.emit_subproofs {
        for (i, sp) in translation.summary.subproofs.iter().enumerate() {
            let body = format!("# {}\n{}\n", sp.goal_text.trim(), sp.body.trim_end());
            write(&sub_dir.join(stem).join(format!("{:02}-{}.txt", i + 1, sp.subtree_root)), &body)?;
        }
    }
    Ok(proof_path)
}

/// Writes each collected prompt as `<stem>/NN.prompt.txt` under
/// `<output>/prompts`.
pub fn write_prompts(config: &PipelineConfig, stem: &str, requests: &[ChatRequest]) -> Result<(), PipelineError> {
    let dir = config.output_dir.join("prompts").join(stem);
    for (i, r) in requests.iter().enumerate() {
        write(&dir.join(format!("{:02}.prompt.txt", i + 1)), &r.transcript())?;
    }
    Ok(())
}

/// Premise-library generation settings taken from a pipeline config.
pub fn generation_config(config: &PipelineConfig) -> crate::premise::GenerationConfig {
    crate::premise::GenerationConfig {
        model: config.backend.model.clone(),
        temperature: config.informalize_temperature,
        seed: config.seed,
        parallelism: config.in_flight,
    }
}

/// Number of translations per theorem name, used to reject duplicate stems.
pub fn duplicate_stems(traces: &[(String, ProofTrace)]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (stem, _) in traces {
        *counts.entry(stem).or_default() += 1;
    }
    counts.into_iter().filter(|(_, n)| *n > 1).map(|(s, _)| s.to_string()).collect()
}
