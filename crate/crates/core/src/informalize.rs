//! Step-wise informalization: one natural-language sentence per tactic step,
//! plus the natural-language rendering of the theorem statement.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, ChatRequest, LlmBackend, Message, DEFAULT_IN_FLIGHT, DEFAULT_MODEL, INFORMALIZE_TEMPERATURE,
};
use crate::premise::{PremiseLibrary, PremiseRecord};
use crate::template::{derive_usage_facts, Catalog, CatalogError, FALLBACK_KIND};
use crate::text::{identifiers, looks_formal_name};
use crate::trace::{ProofTrace, StepId, TacticStep};

/// Statement few-shots every statement prompt carries.
pub const STATEMENT_FEWSHOTS: usize = 3;
/// Default number of step few-shots per prompt.
pub const DEFAULT_STEP_FEWSHOTS: usize = 2;

const DEFAULT_STEP_POOL: &str = include_str!("../assets/fewshots.json");
const DEFAULT_STATEMENT_POOL: &str = include_str!("../assets/statement_fewshots.json");

const STEP_INSTRUCTIONS: &str = "\
You are an expert in Lean4 and formal mathematics.
Transform the given Lean4 tactic into a clear and concise natural language explanation, accurately conveying the operation performed as a step in a mathematical proof without using the format of the formal language.
Ensure that any predicates from the formal language are not included in the explanation.
# Steps
1. **Understand the Applied Tactic**:
- Analyze the `Applied Tactic` to comprehend its function within the proof.
  - If a tactic involves using one or more theorems or definitions, read the theorems listed under `Using Definitions and Theorems` and ensure you understand their content.
2. **Examine Hypotheses and Goals**:
- Compare `Hypotheses And Goals Before Tactic Application` with `Hypotheses And Goals After Tactic Application` to understand what changes in objectives occurred.
  - Hypotheses and goals are separated with the symbol '⊢'.
3. **Formulate the Explanation**:
- Describe what action the tactic took, referring only to what was altered based on the changes observed in the hypotheses and goals.
- Avoid directly referencing predicates from the formal language.
  - When referring to variables, be sure to explicitly use these variable names in the output.
    - (ex) Set $ A $ is Empty.
  - **Do not** include the names of theorems or definitions in formal languages, or variables used as aliases to specific expressions (like h : x = 2 * y) in the output. Instead, explain the content in natural language.
# Output Format
- Provide a natural language explanation summarizing the operation of the tactic and the immediate effects on the hypotheses and goals.
  - Provide all necessary information for the explanation in precise and detailed terms.
- Write the explanation by filling the slots of the given template, following the slot descriptions.
# Notes
- Always determine what assumptions or definitions are brought into effect or altered.
- Make sure explanations are precise to maintain clarity and avoid unnecessary details.
- Do not include expressions written in Lean's formal language in the output.
  - In formal proofs, casts such as from natural numbers to integers are represented by ↑. Therefore, ensure that the output does not contain ↑ representing a cast.
- If you use explanations or citations to output formulas, please use TeX formatting for citations if the formulas are not complex, or use explanations written in natural language if the formulas are complex.";

const STATEMENT_INSTRUCTIONS: &str = "\
You are an expert in Lean4 and formal mathematics.
Translate the given Lean4 theorem statement into a single natural-language sentence stating what is to be proven, as it would appear in a mathematics textbook.
# Notes
- Name every variable the statement quantifies over and say what kind of object it is.
- Do not include Lean syntax, Lean names, or the symbol ↑ in the output.
- Use the explanations of the definitions and theorems listed under `Using Definitions and Theorems` to describe the notions involved.
- Use TeX formatting for simple formulas.";

/// A premise name with its explanation, as shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseNote {
    pub name: String,
    pub explanation: String,
}

impl From<&PremiseRecord> for PremiseNote {
    fn from(r: &PremiseRecord) -> Self {
        PremiseNote { name: r.name.clone(), explanation: r.explanation.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewshotExample {
    #[serde(rename = "tactic")]
    pub tactic_kind: String,
    pub applied_tactic: String,
    pub goals_before: String,
    pub goals_after: String,
    #[serde(default)]
    pub premises: Vec<PremiseNote>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementFewshot {
    pub statement: String,
    #[serde(default)]
    pub premises: Vec<PremiseNote>,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LintFlag {
    /// `⊢`, `↑` or a `fun ... =>` lambda leaked into the text.
    ContainsFormalSyntax,
    /// A premise name was copied verbatim.
    ContainsPremiseName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExplanation {
    pub step_id: StepId,
    pub text: String,
    pub template_id: String,
    #[serde(default)]
    pub flags: BTreeSet<LintFlag>,
}

#[derive(Debug, Error)]
pub enum FewshotError {
    #[error("cannot read few-shot file {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed few-shot file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{found} statement few-shot(s) configured, {STATEMENT_FEWSHOTS} required")]
    TooFewStatementExamples { found: usize },
}

/// Step few-shots and the statement few-shots, checked at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotPool {
    steps: Vec<FewshotExample>,
    statements: Vec<StatementFewshot>,
}

impl FewshotPool {
    /// Fails unless at least [`STATEMENT_FEWSHOTS`] statement examples exist;
    /// only the first three are used.
    pub fn new(steps: Vec<FewshotExample>, mut statements: Vec<StatementFewshot>) -> Result<Self, FewshotError> {
        if statements.len() < STATEMENT_FEWSHOTS {
            return Err(FewshotError::TooFewStatementExamples { found: statements.len() });
        }
        statements.truncate(STATEMENT_FEWSHOTS);
        Ok(FewshotPool { steps, statements })
    }

    pub fn builtin() -> Self {
        let steps = serde_json::from_str(DEFAULT_STEP_POOL).expect("builtin step few-shots parse");
        let statements = serde_json::from_str(DEFAULT_STATEMENT_POOL).expect("builtin statement few-shots parse");
        FewshotPool::new(steps, statements).expect("builtin pool is complete")
    }

    pub fn load(steps_path: impl AsRef<Path>, statements_path: impl AsRef<Path>) -> Result<Self, FewshotError> {
        FewshotPool::new(read_json(steps_path.as_ref())?, read_json(statements_path.as_ref())?)
    }

    pub fn steps(&self) -> &[FewshotExample] {
        &self.steps
    }

    pub fn statements(&self) -> &[StatementFewshot] {
        &self.statements
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FewshotError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| FewshotError::Io { path: display.clone(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| FewshotError::Parse { path: display, message: e.to_string() })
}

/// The first `k` examples of `tactic_kind` in pool order, or the first `k`
/// fallback examples when the kind has none.
pub fn select_fewshots<'a>(pool: &'a [FewshotExample], tactic_kind: &str, k: usize) -> Vec<&'a FewshotExample> {
    let pick = |kind: &str| pool.iter().filter(|e| e.tactic_kind == kind).take(k).collect::<Vec<_>>();
    let exact = pick(tactic_kind);
    if !exact.is_empty() {
        return exact;
    }
    let fallback = pick(FALLBACK_KIND);
    if fallback.is_empty() {
        log::warn!("no few-shot examples for `{tactic_kind}` and no fallback examples");
    }
    fallback
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformalizeConfig {
    pub model: String,
    pub temperature: f64,
    pub fewshots_per_step: usize,
    /// Steps informalized concurrently.
    pub parallelism: usize,
}

impl Default for InformalizeConfig {
    fn default() -> Self {
        InformalizeConfig {
            model: DEFAULT_MODEL.into(),
            temperature: INFORMALIZE_TEMPERATURE,
            fewshots_per_step: DEFAULT_STEP_FEWSHOTS,
            parallelism: DEFAULT_IN_FLIGHT,
        }
    }
}

fn push_state(out: &mut String, label: &str, state: &str) {
    out.push_str(&format!("- Hypotheses And Goals {label} Tactic Application:\n"));
    for line in state.lines() {
        out.push_str(&format!("  {line}\n"));
    }
}

fn push_premises(out: &mut String, premises: &[PremiseNote]) {
    if premises.is_empty() {
        return;
    }
    out.push_str("**Using Definitions and Theorems**:\n");
    for p in premises {
        out.push_str(&format!("- {}: {}\n", p.name, p.explanation.trim()));
    }
}

/// Builds the step prompt: instructions as the system message; examples,
/// the input, the template and its slot descriptions as the user message.
pub fn assemble_informalize_prompt(
    step: &TacticStep,
    template: &crate::template::Template,
    catalog: &Catalog,
    premises: &[&PremiseRecord],
    fewshots: &[&FewshotExample],
    config: &InformalizeConfig,
) -> ChatRequest {
    let mut user = String::new();
    if !fewshots.is_empty() {
        user.push_str("# Examples\n");
        for (i, ex) in fewshots.iter().enumerate() {
            user.push_str(&format!("### Example {}\n**Input Information**:\n", i + 1));
            user.push_str(&format!("- Applied Tactic: {}\n", ex.applied_tactic));
            push_state(&mut user, "Before", &ex.goals_before);
            push_state(&mut user, "After", &ex.goals_after);
            push_premises(&mut user, &ex.premises);
            user.push_str(&format!("**Output**:\n- {}\n\n", ex.output.trim()));
        }
        user.push_str(
            "Using the example above as a reference, please explain the following input in natural language as one operation in a mathematical proof.\n",
        );
    } else {
        user.push_str("Please explain the following input in natural language as one operation in a mathematical proof.\n");
    }
    user.push_str("**Input Information**:\n");
    user.push_str(&format!("- Applied Tactic: {}\n", step.tactic_text));
    push_state(&mut user, "Before", &step.state_before.render());
    push_state(&mut user, "After", &step.state_after.render());
    let notes: Vec<PremiseNote> = premises.iter().map(|p| PremiseNote::from(*p)).collect();
    push_premises(&mut user, &notes);
    user.push_str(&format!("**Template**:\n{}\n", template.body));
    let slots = template.slots();
    if !slots.is_empty() {
        user.push_str("**Slot Descriptions**:\n");
        for s in slots {
            let description = catalog.slot(s).map(|d| d.description.as_str()).unwrap_or_default();
            user.push_str(&format!("- [{s}]: {description}\n"));
        }
    }
    user.push_str("**Output**:\n");
    ChatRequest::new(
        config.model.clone(),
        config.temperature,
        vec![Message::system(STEP_INSTRUCTIONS), Message::user(user)],
    )
}

/// Everything decided before the backend call for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStep {
    pub step_id: StepId,
    pub template_id: String,
    pub premise_names: Vec<String>,
    pub request: ChatRequest,
}

/// Runs the deterministic half of step informalization: usage facts,
/// template, premise lookup, few-shots, prompt.
pub fn prepare_step(
    step: &TacticStep,
    trace: &ProofTrace,
    library: &PremiseLibrary,
    catalog: &Catalog,
    pool: &FewshotPool,
    config: &InformalizeConfig,
) -> Result<PreparedStep, CatalogError> {
    let facts = derive_usage_facts(step, trace);
    let template = catalog.select(&step.tactic_kind, &facts)?;
    let lookup = library.lookup(&step.premise_refs);
    for m in &lookup.missing {
        log::warn!("step {}: premise `{m}` is not in the library", step.step_id);
    }
    let premises: Vec<&PremiseRecord> = lookup.records.into_iter().filter(|r| r.is_explained()).collect();
    let fewshots = select_fewshots(pool.steps(), &step.tactic_kind, config.fewshots_per_step);
    Ok(PreparedStep {
        step_id: step.step_id.clone(),
        template_id: template.template_id.clone(),
        premise_names: step.premise_refs.clone(),
        request: assemble_informalize_prompt(step, template, catalog, &premises, &fewshots, config),
    })
}

#[derive(Debug, Error)]
pub enum InformalizeError {
    #[error("step {step_id}: {source}")]
    Backend { step_id: StepId, source: BackendError },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("statement: {0}")]
    Statement(BackendError),
}

impl InformalizeError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            InformalizeError::Backend { source, .. } | InformalizeError::Statement(source) => Some(source),
            InformalizeError::Catalog(_) => None,
        }
    }
}

/// Sends a prepared step and lints the reply.
pub fn complete_step<B: LlmBackend + ?Sized>(
    prepared: &PreparedStep,
    backend: &B,
) -> Result<StepExplanation, InformalizeError> {
    let reply = backend
        .complete(&prepared.request)
        .and_then(non_empty)
        .map_err(|source| InformalizeError::Backend { step_id: prepared.step_id.clone(), source })?;
    let names: Vec<&str> = prepared.premise_names.iter().map(String::as_str).collect();
    Ok(StepExplanation {
        step_id: prepared.step_id.clone(),
        flags: lint_explanation(&reply, &names),
        text: reply,
        template_id: prepared.template_id.clone(),
    })
}

fn non_empty(reply: String) -> Result<String, BackendError> {
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        return Err(BackendError::MalformedResponse("empty explanation".into()));
    }
    Ok(trimmed.to_string())
}

pub fn informalize_step<B: LlmBackend + ?Sized>(
    step: &TacticStep,
    trace: &ProofTrace,
    library: &PremiseLibrary,
    catalog: &Catalog,
    pool: &FewshotPool,
    backend: &B,
    config: &InformalizeConfig,
) -> Result<StepExplanation, InformalizeError> {
    complete_step(&prepare_step(step, trace, library, catalog, pool, config)?, backend)
}

/// Informalizes every step of a trace, up to `config.parallelism` at a time.
/// Results come back in step order.
pub fn informalize_trace<B: LlmBackend + ?Sized>(
    trace: &ProofTrace,
    library: &PremiseLibrary,
    catalog: &Catalog,
    pool: &FewshotPool,
    backend: &B,
    config: &InformalizeConfig,
) -> Result<Vec<StepExplanation>, InformalizeError> {
    let prepared = trace
        .steps
        .iter()
        .map(|s| prepare_step(s, trace, library, catalog, pool, config))
        .collect::<Result<Vec<_>, _>>()?;
    if config.parallelism <= 1 || prepared.len() <= 1 {
        return prepared.iter().map(|p| complete_step(p, backend)).collect();
    }
    let chunk = prepared.len().div_ceil(config.parallelism);
    std::thread::scope(|s| {
        let handles: Vec<_> = prepared
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|p| complete_step(p, backend)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(prepared.len());
        for h in handles {
            out.extend(h.join().expect("informalization worker panicked")?);
        }
        Ok(out)
    })
}

/// Flags formal-syntax leakage. Only flags; never rewrites.
pub fn lint_explanation(text: &str, premise_names: &[&str]) -> BTreeSet<LintFlag> {
    let mut flags = BTreeSet::new();
    if text.contains('⊢') || text.contains('↑') || has_lambda(text) {
        flags.insert(LintFlag::ContainsFormalSyntax);
    }
    let idents: BTreeSet<&str> = identifiers(text).into_iter().collect();
    if premise_names.iter().any(|n| looks_formal_name(n) && idents.contains(n)) {
        flags.insert(LintFlag::ContainsFormalSyntax);
        flags.insert(LintFlag::ContainsPremiseName);
    }
    flags
}

fn has_lambda(text: &str) -> bool {
    identifiers(text).contains(&"fun")
        && text.split("fun").skip(1).any(|rest| rest.starts_with(char::is_whitespace) && rest.contains("=>"))
}

/// Builds the statement prompt with exactly the pool's three statement
/// examples and the explanations of premises mentioned in the statement.
pub fn assemble_statement_prompt(
    statement: &str,
    premises: &[&PremiseRecord],
    fewshots: &[StatementFewshot],
    config: &InformalizeConfig,
) -> ChatRequest {
    let mut user = String::from("# Examples\n");
    for (i, ex) in fewshots.iter().enumerate() {
        user.push_str(&format!("### Example {}\n**Theorem Statement**: {}\n", i + 1, ex.statement));
        push_premises(&mut user, &ex.premises);
        user.push_str(&format!("**Output**:\n{}\n\n", ex.output.trim()));
    }
    user.push_str(&format!("# Input\n**Theorem Statement**: {statement}\n"));
    let notes: Vec<PremiseNote> = premises.iter().map(|p| PremiseNote::from(*p)).collect();
    push_premises(&mut user, &notes);
    user.push_str("**Output**:\n");
    ChatRequest::new(
        config.model.clone(),
        config.temperature,
        vec![Message::system(STATEMENT_INSTRUCTIONS), Message::user(user)],
    )
}

/// Renders the theorem statement in natural language. Premise explanations
/// are taken from the trace's premises and from any library record whose
/// name occurs in the statement.
pub fn informalize_statement<B: LlmBackend + ?Sized>(
    statement: &str,
    premises: &[&PremiseRecord],
    pool: &FewshotPool,
    backend: &B,
    config: &InformalizeConfig,
) -> Result<String, InformalizeError> {
    let request = assemble_statement_prompt(statement, premises, pool.statements(), config);
    backend.complete(&request).and_then(non_empty).map_err(InformalizeError::Statement)
}

/// Explained library records whose names occur in the trace's statement.
pub fn statement_premises<'a>(trace: &ProofTrace, library: &'a PremiseLibrary) -> Vec<&'a PremiseRecord> {
    library.mentioned_in(&trace.theorem_statement)
}

/// Explanations keyed by step id.
pub fn by_step_id(explanations: Vec<StepExplanation>) -> BTreeMap<StepId, StepExplanation> {
    explanations.into_iter().map(|e| (e.step_id.clone(), e)).collect()
}
