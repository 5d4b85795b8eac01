//! Per-tactic generation templates and their deterministic retrieval.
//!
//! A template is keyed by tactic kind and guarded by a conjunction of
//! [`UsageFacts`]. Retrieval picks the most specific satisfied template, ties
//! broken by the lowest template id, and falls back to the catalog's `*`
//! template when nothing matches.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::identifiers;
use crate::trace::{ProofState, ProofTrace, TacticStep};

/// Tactic kind of the generic fallback template.
pub const FALLBACK_KIND: &str = "*";

const DEFAULT_CATALOG: &str = include_str!("../assets/catalog.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    #[serde(rename = "name")]
    pub slot_name: String,
    pub description: String,
}

/// Boolean discriminators of how a tactic was used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UsageFacts {
    pub rewrites_goal: bool,
    pub rewrites_hypothesis: bool,
    pub uses_theorems: bool,
    pub uses_hypotheses: bool,
    pub introduces_goal: bool,
    pub closes_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fact {
    RewritesGoal,
    RewritesHypothesis,
    UsesTheorems,
    UsesHypotheses,
    IntroducesGoal,
    ClosesGoal,
}

impl UsageFacts {
    pub fn get(&self, fact: Fact) -> bool {
        match fact {
            Fact::RewritesGoal => self.rewrites_goal,
            Fact::RewritesHypothesis => self.rewrites_hypothesis,
            Fact::UsesTheorems => self.uses_theorems,
            Fact::UsesHypotheses => self.uses_hypotheses,
            Fact::IntroducesGoal => self.introduces_goal,
            Fact::ClosesGoal => self.closes_goal,
        }
    }
}

/// Conjunction of required fact values.
pub type Guard = BTreeMap<Fact, bool>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    #[serde(rename = "id")]
    pub template_id: String,
    #[serde(rename = "tactic")]
    pub tactic_kind: String,
    #[serde(default)]
    pub guard: Guard,
    pub body: String,
}

impl Template {
    /// Number of facts the guard constrains.
    pub fn specificity(&self) -> usize {
        self.guard.len()
    }

    pub fn matches(&self, facts: &UsageFacts) -> bool {
        self.guard.iter().all(|(&f, &want)| facts.get(f) == want)
    }

    /// Slot names referenced by the body, first occurrence order, no repeats.
    pub fn slots(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        slot_refs(&self.body).into_iter().filter(|s| seen.insert(*s)).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed catalog: {0}")]
    Parse(String),
    #[error("template `{template}` references undeclared slot `[{slot}]`")]
    UnknownSlot { template: String, slot: String },
    #[error("slot `{0}` is declared more than once")]
    DuplicateSlot(String),
    #[error("slot `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("template id `{0}` is used more than once")]
    DuplicateTemplate(String),
    #[error("catalog has no `*` fallback template")]
    MissingFallback,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no value supplied for slot `[{0}]`")]
pub struct MissingSlot(pub String);

#[derive(Debug, Deserialize)]
struct CatalogDoc {
    slots: Vec<SlotSpec>,
    templates: Vec<Template>,
}

/// An immutable, lint-checked template catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    slots: Vec<SlotSpec>,
    templates: Vec<Template>,
}

impl Catalog {
    pub fn new(slots: Vec<SlotSpec>, templates: Vec<Template>) -> Result<Self, CatalogError> {
        let mut names = HashSet::new();
        for s in &slots {
            if !names.insert(s.slot_name.as_str()) {
                return Err(CatalogError::DuplicateSlot(s.slot_name.clone()));
            }
            if s.description.trim().is_empty() {
                return Err(CatalogError::EmptyDescription(s.slot_name.clone()));
            }
        }
        let mut ids = HashSet::new();
        for t in &templates {
            if !ids.insert(t.template_id.as_str()) {
                return Err(CatalogError::DuplicateTemplate(t.template_id.clone()));
            }
            if let Some(slot) = slot_refs(&t.body).into_iter().find(|r| !names.contains(r)) {
                return Err(CatalogError::UnknownSlot {
                    template: t.template_id.clone(),
                    slot: slot.to_string(),
                });
            }
        }
        if !templates.iter().any(|t| t.tactic_kind == FALLBACK_KIND) {
            return Err(CatalogError::MissingFallback);
        }
        Ok(Catalog { slots, templates })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDoc =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        Catalog::new(doc.slots, doc.templates)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Catalog::from_json(&text)
    }

    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Catalog::from_json(DEFAULT_CATALOG).expect("built-in catalog passes lint")
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.slot_name == name)
    }

    pub fn template(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.template_id == id)
    }

    pub fn has_kind(&self, tactic_kind: &str) -> bool {
        self.templates.iter().any(|t| t.tactic_kind == tactic_kind)
    }

    /// Picks the most specific template of `tactic_kind` whose guard holds.
    pub fn select(&self, tactic_kind: &str, facts: &UsageFacts) -> Result<&Template, CatalogError> {
        best_match(&self.templates, tactic_kind, facts)
            .or_else(|| best_match(&self.templates, FALLBACK_KIND, facts))
            .ok_or(CatalogError::MissingFallback)
    }
}

fn best_match<'a>(templates: &'a [Template], kind: &str, facts: &UsageFacts) -> Option<&'a Template> {
    templates
        .iter()
        .filter(|t| t.tactic_kind == kind && t.matches(facts))
        .min_by(|a, b| {
            b.specificity()
                .cmp(&a.specificity())
                .then_with(|| a.template_id.cmp(&b.template_id))
        })
}

/// See [`Catalog::select`].
pub fn select_template<'a>(
    catalog: &'a Catalog,
    tactic_kind: &str,
    facts: &UsageFacts,
) -> Result<&'a Template, CatalogError> {
    catalog.select(tactic_kind, facts)
}

/// Bracketed slot references in a body, in order of appearance.
pub fn slot_refs(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find(']') {
            let name = &after[..close];
            if is_slot_name(name) {
                let start = offset + open + 1;
                out.push(&body[start..start + name.len()]);
            }
        }
        offset += open + 1;
        rest = &body[offset..];
    }
    out
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Substitutes every `[slot]` in the template body; all other text is kept
/// byte for byte.
pub fn render_skeleton(
    template: &Template,
    slot_values: &BTreeMap<String, String>,
) -> Result<String, MissingSlot> {
    let body = &template.body;
    let mut out = String::with_capacity(body.len());
    let mut i = 0;
    while i < body.len() {
        let rest = &body[i..];
        if let Some(stripped) = rest.strip_prefix('[') {
            if let Some(close) = stripped.find(']') {
                let name = &stripped[..close];
                if is_slot_name(name) {
                    let value = slot_values.get(name).ok_or_else(|| MissingSlot(name.to_string()))?;
                    out.push_str(value);
                    i += close + 2;
                    continue;
                }
            }
        }
        let c = rest.chars().next().unwrap();
        out.push(c);
        i += c.len_utf8();
    }
    Ok(out)
}

/// Derives the usage discriminators of a step from its states and arguments.
///
/// Goal and hypothesis changes are detected by comparing state text: the main
/// goal is rewritten when it no longer appears among the goals afterwards, and
/// a hypothesis is rewritten when its label survives with a different
/// statement.
pub fn derive_usage_facts(step: &TacticStep, trace: &ProofTrace) -> UsageFacts {
    let before = &step.state_before;
    let after = &step.state_after;
    let rewrites_goal = before.goals.first().is_some_and(|g| !after.goals.contains(g));
    let rewrites_hypothesis = before.hypotheses.iter().any(|h| {
        after.hypothesis(&h.label).is_some_and(|a| a.statement != h.statement)
    });
    UsageFacts {
        rewrites_goal,
        rewrites_hypothesis,
        uses_theorems: !step.premise_refs.is_empty(),
        uses_hypotheses: !assumptions_used(step, trace).is_empty(),
        introduces_goal: after.goals.len() > before.goals.len(),
        closes_goal: after.goals.len() < before.goals.len(),
    }
}

/// Labels of assumptions (propositional hypotheses of the state before) that
/// the tactic's arguments name, in argument order.
pub fn assumptions_used<'a>(step: &'a TacticStep, trace: &ProofTrace) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    tactic_arguments(&step.tactic_text)
        .into_iter()
        .filter(|tok| trace.premise(tok).is_none())
        .filter(|tok| is_assumption(&step.state_before, tok))
        .filter(|tok| seen.insert(*tok))
        .collect()
}

fn tactic_arguments(tactic_text: &str) -> Vec<&str> {
    let mut toks = identifiers(tactic_text);
    if !toks.is_empty() {
        toks.remove(0);
    }
    toks
}

fn is_assumption(state: &ProofState, label: &str) -> bool {
    state.hypothesis(label).is_some_and(|h| looks_like_proposition(&h.statement))
}

const RELATION_SYMBOLS: &[char] =
    &['=', '≠', '<', '>', '≤', '≥', '∧', '∨', '¬', '↔', '∀', '∃', '∈', '∉', '⊆', '⊂', '∣'];

/// Distinguishes propositions (`a = r1 + r1`, `Even a`) from the types of
/// bound variables (`ℕ`, `Set ℝ`, `ℝ → E`) by surface form: a relation or
/// quantifier symbol, the constants `True`/`False`, or a predicate applied to a
/// lowercase argument.
pub fn looks_like_proposition(statement: &str) -> bool {
    if statement.contains(RELATION_SYMBOLS) {
        return true;
    }
    let toks = identifiers(statement);
    if toks.iter().any(|t| *t == "True" || *t == "False") {
        return true;
    }
    if matches!(toks.first(), Some(&("Type" | "Sort" | "Prop"))) {
        return false;
    }
    toks.len() > 1 && toks[1..].iter().any(|t| t.starts_with(|c: char| c.is_lowercase()))
}
