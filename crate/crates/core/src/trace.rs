//! Canonical interchange format for extracted proof traces.
//!
//! A trace file is a single UTF-8 JSON document with the top-level keys
//! `theorem_name`, `theorem_statement`, `steps`, `premises` and `ast`. Field
//! names are normative: the extraction adapter emits exactly this shape and all
//! fixtures share it. Formal text (`⊢`, `∀`, `ℕ`, ...) is kept verbatim.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::is_ident_char;

/// Identifier of one tactic step, unique within a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(pub String);

impl StepId {
    pub fn new(id: impl Into<String>) -> Self {
        StepId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StepId {
    fn from(s: &str) -> Self {
        StepId(s.to_string())
    }
}

/// A named hypothesis in a proof state. Serialized as `[label, statement]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Hypothesis {
    pub label: String,
    pub statement: String,
}

impl Hypothesis {
    pub fn new(label: impl Into<String>, statement: impl Into<String>) -> Self {
        Hypothesis { label: label.into(), statement: statement.into() }
    }
}

impl From<(String, String)> for Hypothesis {
    fn from((label, statement): (String, String)) -> Self {
        Hypothesis { label, statement }
    }
}

impl From<Hypothesis> for (String, String) {
    fn from(h: Hypothesis) -> Self {
        (h.label, h.statement)
    }
}

/// Hypotheses and remaining goals at one point of a proof. No goals means the
/// proof is closed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofState {
    #[serde(rename = "hyps")]
    pub hypotheses: Vec<Hypothesis>,
    pub goals: Vec<String>,
}

impl ProofState {
    pub fn hypothesis(&self, label: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.label == label)
    }

    /// Renders the state the way the prover prints it: one hypothesis per
    /// line, then each goal behind `⊢`.
    pub fn render(&self) -> String {
        if self.goals.is_empty() && self.hypotheses.is_empty() {
            return "No goals".to_string();
        }
        let mut lines: Vec<String> =
            self.hypotheses.iter().map(|h| format!("{} : {}", h.label, h.statement)).collect();
        if self.goals.is_empty() {
            lines.push("No goals".to_string());
        }
        lines.extend(self.goals.iter().map(|g| format!("⊢ {g}")));
        lines.join("\n")
    }
}

/// Line/column position in the original script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

impl Position {
    pub fn new(line: u32, column: u32) -> Self {
        Position { line, column }
    }
}

impl From<(u32, u32)> for Position {
    fn from((line, column): (u32, u32)) -> Self {
        Position { line, column }
    }
}

impl From<Position> for (u32, u32) {
    fn from(p: Position) -> Self {
        (p.line, p.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub start: Position,
    pub end: Position,
}

impl SourceSpan {
    pub fn new(start: (u32, u32), end: (u32, u32)) -> Self {
        SourceSpan { start: start.into(), end: end.into() }
    }
}

/// One applied tactic with the states around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TacticStep {
    #[serde(rename = "id")]
    pub step_id: StepId,
    #[serde(rename = "tactic")]
    pub tactic_text: String,
    #[serde(rename = "kind")]
    pub tactic_kind: String,
    #[serde(rename = "before")]
    pub state_before: ProofState,
    #[serde(rename = "after")]
    pub state_after: ProofState,
    #[serde(rename = "premises", default)]
    pub premise_refs: Vec<String>,
    #[serde(rename = "span")]
    pub source_span: SourceSpan,
}

/// A theorem or definition referenced by the proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseRef {
    pub name: String,
    #[serde(rename = "type")]
    pub statement_type: String,
    #[serde(rename = "module")]
    pub defining_module: String,
}

/// One node of the proof's syntax tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub node_id: String,
    pub kind: String,
    pub children: Vec<String>,
    pub owning_step: Option<StepId>,
    pub introduces: Vec<String>,
    pub mentions: Vec<String>,
}

/// Syntax tree stored as an arena in pre-order; `nodes[0]` is the root.
///
/// On the wire the tree is nested (`{id, kind, children: [...], step?,
/// introduces, mentions}`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    nodes: Vec<AstNode>,
    index: HashMap<String, usize>,
}

impl Ast {
    /// Flattens a nested node document. Duplicate ids are kept (the first one
    /// wins the index) so that validation can report them.
    pub fn from_nested(root: AstNodeDoc) -> Self {
        let mut nodes = Vec::new();
        flatten(root, &mut nodes);
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            index.entry(n.node_id.clone()).or_insert(i);
        }
        Ast { nodes, index }
    }

    /// A root-only tree, used for statement-only traces.
    pub fn empty(root_id: &str) -> Self {
        Ast::from_nested(AstNodeDoc {
            id: root_id.to_string(),
            kind: "proof".to_string(),
            children: Vec::new(),
            step: None,
            introduces: Vec::new(),
            mentions: Vec::new(),
        })
    }

    pub fn root(&self) -> &AstNode {
        &self.nodes[0]
    }

    pub fn get(&self, id: &str) -> Option<&AstNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn children<'a>(&'a self, node: &'a AstNode) -> impl Iterator<Item = &'a AstNode> + 'a {
        node.children.iter().filter_map(move |c| self.get(c))
    }

    /// Nodes in pre-order.
    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn to_nested(&self) -> AstNodeDoc {
        self.nest(&mut 0)
    }

    // Rebuilds by arena position rather than by id so that duplicate ids
    // survive a round trip unchanged.
    fn nest(&self, cursor: &mut usize) -> AstNodeDoc {
        let node = &self.nodes[*cursor];
        *cursor += 1;
        let children = (0..node.children.len()).map(|_| self.nest(cursor)).collect();
        AstNodeDoc {
            id: node.node_id.clone(),
            kind: node.kind.clone(),
            children,
            step: node.owning_step.as_ref().map(|s| s.0.clone()),
            introduces: node.introduces.clone(),
            mentions: node.mentions.clone(),
        }
    }
}

fn flatten(doc: AstNodeDoc, out: &mut Vec<AstNode>) {
    let AstNodeDoc { id, kind, children, step, introduces, mentions } = doc;
    out.push(AstNode {
        node_id: id,
        kind,
        children: children.iter().map(|c| c.id.clone()).collect(),
        owning_step: step.map(StepId),
        introduces,
        mentions,
    });
    for child in children {
        flatten(child, out);
    }
}

/// Wire shape of one AST node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNodeDoc {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub children: Vec<AstNodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    #[serde(default)]
    pub introduces: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<String>,
}

impl Serialize for Ast {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Ast {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        AstNodeDoc::deserialize(deserializer).map(Ast::from_nested)
    }
}

/// The extracted data for one theorem: tactic steps, referenced premises and
/// the syntax tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTrace {
    pub theorem_name: String,
    pub theorem_statement: String,
    pub steps: Vec<TacticStep>,
    pub premises: Vec<PremiseRef>,
    pub ast: Ast,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("field `{0}` must not be empty")]
    EmptyField(String),
    #[error("duplicate step id `{0}`")]
    DuplicateStepId(StepId),
    #[error("step `{step}` references premise `{name}` which is not in the premise list")]
    DanglingPremise { step: StepId, name: String },
    #[error("step `{step}` declares kind `{declared}` but its tactic text classifies as `{derived}`")]
    KindMismatch { step: StepId, declared: String, derived: String },
    #[error("step `{0}` has a source span whose start is after its end")]
    InvertedSpan(StepId),
    #[error("step `{0}` starts before the preceding step; steps must follow source order")]
    OutOfOrder(StepId),
    #[error("step `{step}`: hypothesis label `{label}` is bound twice in one state")]
    DuplicateHypothesis { step: StepId, label: String },
    #[error("step `{0}`: proof state contains an empty statement or goal")]
    EmptyStatement(StepId),
    #[error("duplicate premise `{0}`")]
    DuplicatePremise(String),
    #[error("AST node `{0}` appears more than once")]
    DuplicateAstNode(String),
    #[error("AST is cyclic: node `{0}` is its own ancestor")]
    CyclicAst(String),
    #[error("AST node `{node}` is owned by unknown step `{step}`")]
    UnknownOwner { node: String, step: StepId },
    #[error("step `{0}` is owned by more than one AST node")]
    DuplicateOwner(StepId),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read trace {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed trace at line {line}, column {column}, field `{field}`: {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("invalid trace: {0}")]
    Validation(#[from] ValidationError),
}

/// Reads and validates a canonical trace file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<ProofTrace, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
    parse_trace(&text)
}

/// Parses and validates canonical trace text.
pub fn parse_trace(text: &str) -> Result<ProofTrace, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let trace: ProofTrace = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        LoadError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    trace.validate()?;
    Ok(trace)
}

/// Serializes a trace in the canonical format (pretty-printed, trailing newline).
pub fn to_canonical_json(trace: &ProofTrace) -> String {
    let mut s = serde_json::to_string_pretty(trace).expect("trace serialization is infallible");
    s.push('\n');
    s
}

impl ProofTrace {
    pub fn step(&self, id: &StepId) -> Option<&TacticStep> {
        self.steps.iter().find(|s| &s.step_id == id)
    }

    pub fn premise(&self, name: &str) -> Option<&PremiseRef> {
        self.premises.iter().find(|p| p.name == name)
    }

    /// Checks every structural invariant of the interchange format.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.theorem_name.trim().is_empty() {
            return Err(ValidationError::EmptyField("theorem_name".into()));
        }
        if self.theorem_statement.trim().is_empty() {
            return Err(ValidationError::EmptyField("theorem_statement".into()));
        }

        let mut premise_names = HashSet::new();
        for p in &self.premises {
            if p.name.is_empty() {
                return Err(ValidationError::EmptyField("premises[].name".into()));
            }
            if p.defining_module.is_empty() {
                return Err(ValidationError::EmptyField("premises[].module".into()));
            }
            if !premise_names.insert(p.name.as_str()) {
                return Err(ValidationError::DuplicatePremise(p.name.clone()));
            }
        }

        let mut step_ids = HashSet::new();
        let mut prev_start = None;
        for step in &self.steps {
            if step.step_id.0.is_empty() {
                return Err(ValidationError::EmptyField("steps[].id".into()));
            }
            if !step_ids.insert(&step.step_id) {
                return Err(ValidationError::DuplicateStepId(step.step_id.clone()));
            }
            if step.tactic_text.trim().is_empty() {
                return Err(ValidationError::EmptyField(format!("steps[{}].tactic", step.step_id)));
            }
            let derived = classify_tactic_kind(&step.tactic_text);
            if derived != step.tactic_kind {
                return Err(ValidationError::KindMismatch {
                    step: step.step_id.clone(),
                    declared: step.tactic_kind.clone(),
                    derived,
                });
            }
            if step.source_span.start > step.source_span.end {
                return Err(ValidationError::InvertedSpan(step.step_id.clone()));
            }
            if prev_start.is_some_and(|p| step.source_span.start < p) {
                return Err(ValidationError::OutOfOrder(step.step_id.clone()));
            }
            prev_start = Some(step.source_span.start);
            for state in [&step.state_before, &step.state_after] {
                check_state(&step.step_id, state)?;
            }
            if let Some(name) = step.premise_refs.iter().find(|n| !premise_names.contains(n.as_str())) {
                return Err(ValidationError::DanglingPremise {
                    step: step.step_id.clone(),
                    name: name.clone(),
                });
            }
        }

        self.validate_ast(&step_ids)
    }

    fn validate_ast(&self, step_ids: &HashSet<&StepId>) -> Result<(), ValidationError> {
        // Walk the pre-order arena with an explicit ancestor stack; the arena
        // is positional so duplicates and self-ancestry are both visible.
        let nodes = self.ast.nodes();
        let mut seen = HashSet::new();
        let mut owners = HashSet::new();
        // (node index, children still to visit)
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for (idx, node) in nodes.iter().enumerate() {
            while let Some(top) = stack.last_mut() {
                if top.1 == 0 {
                    stack.pop();
                } else {
                    top.1 -= 1;
                    break;
                }
            }
            if stack.iter().any(|&(i, _)| nodes[i].node_id == node.node_id) {
                return Err(ValidationError::CyclicAst(node.node_id.clone()));
            }
            if !seen.insert(node.node_id.as_str()) {
                return Err(ValidationError::DuplicateAstNode(node.node_id.clone()));
            }
            if let Some(step) = &node.owning_step {
                if !step_ids.contains(step) {
                    return Err(ValidationError::UnknownOwner {
                        node: node.node_id.clone(),
                        step: step.clone(),
                    });
                }
                if !owners.insert(step) {
                    return Err(ValidationError::DuplicateOwner(step.clone()));
                }
            }
            stack.push((idx, node.children.len()));
        }
        Ok(())
    }
}

fn check_state(step: &StepId, state: &ProofState) -> Result<(), ValidationError> {
    let mut labels = HashSet::new();
    for h in &state.hypotheses {
        if h.label.is_empty() || h.statement.trim().is_empty() {
            return Err(ValidationError::EmptyStatement(step.clone()));
        }
        if !labels.insert(h.label.as_str()) {
            return Err(ValidationError::DuplicateHypothesis {
                step: step.clone(),
                label: h.label.clone(),
            });
        }
    }
    if state.goals.iter().any(|g| g.trim().is_empty()) {
        return Err(ValidationError::EmptyStatement(step.clone()));
    }
    Ok(())
}

const COMBINATORS: &[&str] = &["focus", "all_goals", "any_goals"];

/// Returns the tactic kind of a tactic invocation: its leading token, after
/// dropping focus bullets (`·`, `.`), `case _ =>`/`next _ =>` prefixes and goal
/// combinators. A trailing `!` or `?` variant marker is dropped
/// (`by_contra!` is `by_contra`). Unknown tactics return their head token.
pub fn classify_tactic_kind(tactic_text: &str) -> String {
    let mut rest = tactic_text.trim_start();
    loop {
        let before = rest;
        for bullet in ["·", "."] {
            if let Some(r) = rest.strip_prefix(bullet) {
                if r.starts_with(char::is_whitespace) {
                    rest = r.trim_start();
                }
            }
        }
        let head = head_token(rest);
        if COMBINATORS.contains(&head) {
            rest = rest[head.len()..].trim_start();
        } else if (head == "case" || head == "next") && rest.contains("=>") {
            let arrow = rest.find("=>").unwrap();
            rest = rest[arrow + 2..].trim_start();
        }
        if rest == before {
            break;
        }
    }
    let head = head_token(rest).trim_end_matches(['!', '?']);
    if head.is_empty() {
        rest.split_whitespace().next().unwrap_or("").to_string()
    } else {
        head.to_string()
    }
}

fn head_token(text: &str) -> &str {
    let end = text.find(|c: char| !is_ident_char(c)).unwrap_or(text.len());
    &text[..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_tactic_heads() {
        assert_eq!(classify_tactic_kind("rw [Nat.add_assoc, Nat.add_comm r2]"), "rw");
        assert_eq!(classify_tactic_kind("exact ⟨(r1 + r2), this⟩"), "exact");
        assert_eq!(classify_tactic_kind("intro ⟨⟨r1, h1⟩, ⟨r2, h2⟩⟩"), "intro");
        assert_eq!(classify_tactic_kind("have : a + b = (r1 + r2) + (r1 + r2)"), "have");
    }

    #[test]
    fn strips_focus_markers_and_combinators() {
        assert_eq!(classify_tactic_kind("· exact h.left"), "exact");
        assert_eq!(classify_tactic_kind(". rw [closedBall_eq_empty.2 hr]"), "rw");
        assert_eq!(classify_tactic_kind("all_goals simp"), "simp");
        assert_eq!(classify_tactic_kind("case inl h => linarith"), "linarith");
        assert_eq!(classify_tactic_kind("by_contra! hneg"), "by_contra");
        assert_eq!(classify_tactic_kind("cases' hr.lt_or_lt with hr hr"), "cases'");
        assert_eq!(classify_tactic_kind("rw [h]<;> simp"), "rw");
        assert_eq!(classify_tactic_kind("simp[f]"), "simp");
    }

    #[test]
    fn unknown_tactics_keep_their_head() {
        assert_eq!(classify_tactic_kind("frobnicate x y"), "frobnicate");
        assert_eq!(classify_tactic_kind("Nat.rec_on x"), "Nat.rec_on");
        assert_eq!(classify_tactic_kind("⟨1, h⟩"), "⟨1,");
    }

    #[test]
    fn renders_states_with_turnstile() {
        let s = ProofState {
            hypotheses: vec![Hypothesis::new("a", "ℕ"), Hypothesis::new("h1", "a = r1 + r1")],
            goals: vec!["Even (a + b)".into()],
        };
        assert_eq!(s.render(), "a : ℕ\nh1 : a = r1 + r1\n⊢ Even (a + b)");
        let closed = ProofState { hypotheses: vec![], goals: vec![] };
        assert_eq!(closed.render(), "No goals");
    }
}
