//! Premise library: natural-language explanations of theorems and
//! definitions, generated module level by module level.
//!
//! Modules are leveled by longest import path from an import-free module, so
//! every module sits strictly above everything it imports. Generation walks
//! the levels in ascending order; inside a level, records are processed in
//! dependency waves so that an explanation a record depends on is always
//! finished before the record's own prompt is assembled.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    BackendError, ChatRequest, LlmBackend, Message, DEFAULT_IN_FLIGHT, DEFAULT_MODEL, INFORMALIZE_TEMPERATURE,
};
use crate::text::identifiers;

/// Number of few-shot records placed in each explanation prompt.
pub const PREMISE_FEWSHOTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleNode {
    #[serde(rename = "module")]
    pub module_path: String,
    #[serde(default)]
    pub imports: Vec<String>,
    /// Assigned by [`level_modules`]; ignored on input.
    #[serde(default)]
    pub level: usize,
}

impl ModuleNode {
    pub fn new(module_path: impl Into<String>, imports: &[&str]) -> Self {
        ModuleNode {
            module_path: module_path.into(),
            imports: imports.iter().map(|s| s.to_string()).collect(),
            level: 0,
        }
    }
}

/// An import cycle, listed from its first module back to that module.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct CycleError {
    pub cycle: Vec<String>,
}

impl fmt::Display for CycleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "import cycle: {}", self.cycle.join(" -> "))
    }
}

/// Assigns each module its longest-path distance from an import-free module.
///
/// Imports that name no listed module are treated as external import-free
/// modules and appear in the result at level 0.
pub fn level_modules(modules: &[ModuleNode]) -> Result<BTreeMap<String, usize>, CycleError> {
    let mut imports: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for m in modules {
        let entry = imports.entry(m.module_path.as_str()).or_default();
        entry.extend(m.imports.iter().map(String::as_str));
    }
    let externals: Vec<&str> = imports
        .values()
        .flatten()
        .copied()
        .filter(|i| !imports.contains_key(i))
        .collect();
    for e in externals {
        imports.entry(e).or_default();
    }

    let mut importers: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut pending: HashMap<&str, usize> = HashMap::new();
    for (&m, deps) in &imports {
        pending.insert(m, deps.len());
        for &d in deps {
            importers.entry(d).or_default().push(m);
        }
    }
    let mut levels: BTreeMap<String, usize> = BTreeMap::new();
    let mut ready: Vec<&str> = imports.iter().filter(|(_, d)| d.is_empty()).map(|(&m, _)| m).collect();
    while let Some(m) = ready.pop() {
        let level = imports[m].iter().map(|d| levels[*d] + 1).max().unwrap_or(0);
        levels.insert(m.to_string(), level);
        for &up in importers.get(m).map(Vec::as_slice).unwrap_or_default() {
            let n = pending.get_mut(up).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.push(up);
            }
        }
    }
    if levels.len() < imports.len() {
        return Err(CycleError { cycle: cycle_witness(&imports, &levels) });
    }
    Ok(levels)
}

fn cycle_witness(imports: &BTreeMap<&str, BTreeSet<&str>>, leveled: &BTreeMap<String, usize>) -> Vec<String> {
    // Every unleveled module imports at least one unleveled module, so walking
    // such imports must revisit a module.
    let start = imports.keys().find(|m| !leveled.contains_key(**m)).copied().unwrap();
    let mut path = vec![start];
    loop {
        let cur = *path.last().unwrap();
        let next = imports[cur].iter().copied().find(|d| !leveled.contains_key(*d)).unwrap();
        if let Some(pos) = path.iter().position(|p| *p == next) {
            let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
            cycle.push(next.to_string());
            return cycle;
        }
        path.push(next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PremiseKind {
    Theorem,
    Definition,
}

impl PremiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PremiseKind::Theorem => "theorem",
            PremiseKind::Definition => "definition",
        }
    }
}

/// One line of a library file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseRecord {
    pub name: String,
    pub kind: PremiseKind,
    #[serde(rename = "type")]
    pub statement_type: String,
    #[serde(rename = "module")]
    pub defining_module: String,
    #[serde(rename = "fields", default)]
    pub field_tags: Vec<String>,
    #[serde(default)]
    pub depends_on: Vec<String>,
    /// Empty until generated.
    #[serde(default)]
    pub explanation: String,
}

impl PremiseRecord {
    pub fn is_explained(&self) -> bool {
        !self.explanation.trim().is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("duplicate premise record `{0}`")]
    DuplicateRecord(String),
    #[error("premise record `{name}` has an empty `{field}`")]
    EmptyField { name: String, field: &'static str },
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// Records keyed by name plus the leveled module graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PremiseLibrary {
    records: BTreeMap<String, PremiseRecord>,
    modules: BTreeMap<String, ModuleNode>,
}

/// Result of [`PremiseLibrary::lookup`]: found records in request order and
/// the names that were not found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup<'a> {
    pub records: Vec<&'a PremiseRecord>,
    pub missing: Vec<String>,
}

impl PremiseLibrary {
    /// Builds a library and levels its modules. Modules that records live in
    /// but that `modules` does not list are added without imports.
    pub fn new(records: Vec<PremiseRecord>, modules: Vec<ModuleNode>) -> Result<Self, LibraryError> {
        let mut by_name = BTreeMap::new();
        for r in records {
            for (field, value) in [("name", &r.name), ("type", &r.statement_type), ("module", &r.defining_module)] {
                if value.trim().is_empty() {
                    return Err(LibraryError::EmptyField { name: r.name.clone(), field });
                }
            }
            if by_name.contains_key(&r.name) {
                return Err(LibraryError::DuplicateRecord(r.name));
            }
            by_name.insert(r.name.clone(), r);
        }
        let mut graph: BTreeMap<String, ModuleNode> =
            modules.into_iter().map(|m| (m.module_path.clone(), m)).collect();
        for r in by_name.values() {
            graph
                .entry(r.defining_module.clone())
                .or_insert_with(|| ModuleNode::new(r.defining_module.clone(), &[]));
        }
        let nodes: Vec<ModuleNode> = graph.values().cloned().collect();
        let levels = level_modules(&nodes)?;
        for (path, level) in levels {
            graph.entry(path.clone()).or_insert_with(|| ModuleNode::new(path, &[])).level = level;
        }
        Ok(PremiseLibrary { records: by_name, modules: graph })
    }

    /// Reads a JSON-lines record file and an optional JSON array of modules.
    pub fn load(records_path: impl AsRef<Path>, modules_path: Option<&Path>) -> Result<Self, LibraryError> {
        let records_path = records_path.as_ref();
        let text = read(records_path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| LibraryError::Parse {
                path: records_path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let modules = match modules_path {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| LibraryError::Parse {
                path: p.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?,
            None => Vec::new(),
        };
        PremiseLibrary::new(records, modules)
    }

    /// One record per line, sorted by name.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.to_jsonl())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&PremiseRecord> {
        self.records.get(name)
    }

    pub fn records(&self) -> impl Iterator<Item = &PremiseRecord> {
        self.records.values()
    }

    pub fn modules(&self) -> &BTreeMap<String, ModuleNode> {
        &self.modules
    }

    pub fn level_of(&self, record: &PremiseRecord) -> usize {
        self.modules.get(&record.defining_module).map(|m| m.level).unwrap_or(0)
    }

    pub fn lookup<S: AsRef<str>>(&self, names: &[S]) -> Lookup<'_> {
        let mut lookup = Lookup { records: Vec::new(), missing: Vec::new() };
        for n in names {
            match self.records.get(n.as_ref()) {
                Some(r) => lookup.records.push(r),
                None => lookup.missing.push(n.as_ref().to_string()),
            }
        }
        lookup
    }

    /// Explained records whose names occur as identifiers in `text`, in
    /// order of first occurrence.
    pub fn mentioned_in(&self, text: &str) -> Vec<&PremiseRecord> {
        let mut seen = BTreeSet::new();
        identifiers(text)
            .into_iter()
            .filter(|id| seen.insert(*id))
            .filter_map(|id| self.records.get(id))
            .filter(|r| r.is_explained())
            .collect()
    }

    /// `depends_on` names that resolve to no record, as (record, dependency).
    pub fn external_dependencies(&self) -> Vec<(&str, &str)> {
        self.records
            .values()
            .flat_map(|r| {
                r.depends_on
                    .iter()
                    .filter(|d| !self.records.contains_key(*d))
                    .map(move |d| (r.name.as_str(), d.as_str()))
            })
            .collect()
    }
}

fn read(path: &Path) -> Result<String, LibraryError> {
    fs::read_to_string(path).map_err(|source| LibraryError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    /// Seed for few-shot sampling.
    pub seed: u64,
    /// Records explained concurrently within one dependency wave.
    pub parallelism: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: DEFAULT_MODEL.into(),
            temperature: INFORMALIZE_TEMPERATURE,
            seed: 0,
            parallelism: DEFAULT_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationWarning {
    /// Fewer than [`PREMISE_FEWSHOTS`] candidates existed for this record.
    InsufficientFewshot { name: String, available: usize },
}

impl fmt::Display for GenerationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerationWarning::InsufficientFewshot { name, available } => {
                write!(f, "only {available} few-shot candidate(s) for `{name}`")
            }
        }
    }
}

#[derive(Debug, Error)]
#[error("explaining `{name}`: {source}")]
pub struct GenerateError {
    pub name: String,
    #[source]
    pub source: BackendError,
}

const PREMISE_INSTRUCTIONS: &str = "\
You are an expert in Lean4 and Mathlib.
Explain the given Lean4 theorem or definition in one or two natural-language sentences, as it would be described in a mathematics textbook.
# Notes
- State what the theorem asserts or what the definition introduces, including the setting it applies to.
- Do not include Lean syntax, Lean names, or the symbol ↑ in the output.
- Explanations of the definitions and theorems it depends on are given for reference when available.
- Follow the style of the examples.";

/// Builds the explanation prompt for one record.
pub fn assemble_premise_prompt(
    record: &PremiseRecord,
    dependencies: &[&PremiseRecord],
    fewshots: &[&PremiseRecord],
    config: &GenerationConfig,
) -> ChatRequest {
    let mut user = String::new();
    if !fewshots.is_empty() {
        user.push_str("# Examples\n");
        for (i, ex) in fewshots.iter().enumerate() {
            user.push_str(&format!("### Example {}\n", i + 1));
            push_record_fields(&mut user, ex);
            user.push_str(&format!("**Output**:\n{}\n", ex.explanation.trim()));
        }
    }
    if !dependencies.is_empty() {
        user.push_str("# Explanations Of Dependencies\n");
        for d in dependencies {
            user.push_str(&format!("- {}: {}\n", d.name, d.explanation.trim()));
        }
    }
    user.push_str("# Input\n");
    push_record_fields(&mut user, record);
    user.push_str("**Output**:\n");
    ChatRequest::new(
        config.model.clone(),
        config.temperature,
        vec![Message::system(PREMISE_INSTRUCTIONS), Message::user(user)],
    )
}

fn push_record_fields(out: &mut String, r: &PremiseRecord) {
    out.push_str(&format!("**Kind**: {}\n**Name**: {}\n**Type**: {}\n", r.kind.as_str(), r.name, r.statement_type));
}

/// Per-record RNG so a record's few-shot draw does not depend on processing
/// order.
fn record_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let salt = u64::from_le_bytes(digest[..8].try_into().unwrap());
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Explains every record that lacks an explanation, lowest module level
/// first. Returns the completed library and any few-shot warnings.
///
/// Few-shot candidates for a record are the already explained records that
/// share its module or one of its field tags; [`PREMISE_FEWSHOTS`] of them
/// are drawn with a generator seeded from `config.seed` and the record name.
pub fn generate_explanations<B: LlmBackend + ?Sized>(
    library: &PremiseLibrary,
    backend: &B,
    config: &GenerationConfig,
) -> Result<(PremiseLibrary, Vec<GenerationWarning>), GenerateError> {
    let mut lib = library.clone();
    let mut warnings = Vec::new();
    let mut by_level: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for r in lib.records.values().filter(|r| !r.is_explained()) {
        by_level.entry(lib.level_of(r)).or_default().push(r.name.clone());
    }
    for (_, names) in by_level {
        for wave in dependency_waves(&lib, names) {
            let jobs: Vec<(String, ChatRequest)> = wave
                .iter()
                .map(|name| {
                    let record = &lib.records[name];
                    let deps: Vec<&PremiseRecord> = record
                        .depends_on
                        .iter()
                        .filter_map(|d| lib.records.get(d))
                        .filter(|d| d.is_explained())
                        .collect();
                    let mut candidates: Vec<&PremiseRecord> = lib
                        .records
                        .values()
                        .filter(|c| c.is_explained() && c.name != record.name)
                        .filter(|c| {
                            c.defining_module == record.defining_module
                                || c.field_tags.iter().any(|t| record.field_tags.contains(t))
                        })
                        .collect();
                    if candidates.len() < PREMISE_FEWSHOTS {
                        let w = GenerationWarning::InsufficientFewshot {
                            name: name.clone(),
                            available: candidates.len(),
                        };
                        log::warn!("{w}");
                        warnings.push(w);
                    }
                    let mut rng = record_rng(config.seed, name);
                    candidates.shuffle(&mut rng);
                    candidates.truncate(PREMISE_FEWSHOTS);
                    (name.clone(), assemble_premise_prompt(record, &deps, &candidates, config))
                })
                .collect();
            for (name, text) in run_jobs(backend, jobs, config.parallelism)? {
                lib.records.get_mut(&name).unwrap().explanation = text.trim().to_string();
            }
        }
    }
    Ok((lib, warnings))
}

/// Splits same-level records so each record comes after the records it
/// depends on. Dependency cycles inside a level end up in one final wave.
fn dependency_waves(lib: &PremiseLibrary, mut remaining: Vec<String>) -> Vec<Vec<String>> {
    let mut waves = Vec::new();
    while !remaining.is_empty() {
        let (ready, blocked): (Vec<String>, Vec<String>) = remaining.iter().cloned().partition(|name| {
            lib.records[name].depends_on.iter().all(|d| d == name || !remaining.contains(d))
        });
        if ready.is_empty() {
            waves.push(blocked);
            break;
        }
        waves.push(ready);
        remaining = blocked;
    }
    waves
}

fn run_jobs<B: LlmBackend + ?Sized>(
    backend: &B,
    jobs: Vec<(String, ChatRequest)>,
    parallelism: usize,
) -> Result<Vec<(String, String)>, GenerateError> {
    let call = |(name, req): &(String, ChatRequest)| {
        backend
            .complete(req)
            .map(|text| (name.clone(), text))
            .map_err(|source| GenerateError { name: name.clone(), source })
    };
    if parallelism <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(call).collect();
    }
    let chunk = jobs.len().div_ceil(parallelism);
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(call).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("generation worker panicked")?);
        }
        Ok(out)
    })
}
