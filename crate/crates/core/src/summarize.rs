//! Summarization of an annotated proof tree into one natural-language proof.
//!
//! Recursive mode works bottom-up: every internal step node gets a sub-proof
//! built from its children's texts, and the root prompt merges the top-level
//! texts, where an internal child contributes its sub-proof body. Flat mode
//! sends every step explanation in one prompt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, LlmBackend, Message, DEFAULT_MODEL, SUMMARIZE_TEMPERATURE};
use crate::tree::ProofTreeNode;

/// Default cap on the total characters of child texts in one prompt.
pub const DEFAULT_CHILD_BUDGET: usize = 6000;

const SUMMARIZE_INSTRUCTIONS: &str = "\
You are an expert mathematician writing proofs for a textbook.
Combine the given proof steps into a single proof written in flowing mathematical prose.
# Notes
- Preserve the logical order of the steps; every step must be reflected in the result.
- When an intermediate goal is given, write a proof of exactly that goal.
- Connect the steps with words such as \"since\", \"hence\" and \"therefore\" instead of listing them.
- Do not include expressions written in Lean's formal language, Lean names, or the symbol ↑.
- Use TeX formatting for simple formulas.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Recursive,
    Flat,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Recursive => "recursive",
            Mode::Flat => "flat",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recursive" => Ok(Mode::Recursive),
            "flat" => Ok(Mode::Flat),
            other => Err(format!("unknown mode `{other}` (expected recursive or flat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizeConfig {
    pub model: String,
    pub temperature: f64,
    pub mode: Mode,
    pub child_budget: usize,
    /// Summarize sibling subtrees on separate threads.
    pub concurrent_siblings: bool,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            model: DEFAULT_MODEL.into(),
            temperature: SUMMARIZE_TEMPERATURE,
            mode: Mode::Recursive,
            child_budget: DEFAULT_CHILD_BUDGET,
            concurrent_siblings: false,
        }
    }
}

/// Natural-language proof of one intermediate goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubProof {
    pub subtree_root: String,
    pub goal_text: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub proof: String,
    /// Sub-proofs in the order they were produced (post-order).
    pub subproofs: Vec<SubProof>,
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("node {node_id}: {source}")]
    Backend { node_id: String, source: BackendError },
    #[error("node {node_id}: child texts total {chars} characters, over the budget of {budget}")]
    Budget { node_id: String, chars: usize, budget: usize },
    #[error("node {0} has no explanation attached")]
    Unannotated(String),
}

impl SummarizeError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            SummarizeError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Builds one summarization prompt. `goal` is the intermediate goal's
/// explanation, absent for the root.
pub fn assemble_summarize_prompt(
    goal: Option<&str>,
    child_texts: &[String],
    statement_nl: &str,
    config: &SummarizeConfig,
) -> ChatRequest {
    let mut user = format!("# Theorem\n{}\n", statement_nl.trim());
    match goal {
        Some(g) => {
            user.push_str(&format!("# Intermediate Goal\n{}\n", g.trim()));
            user.push_str("Write a proof of the intermediate goal from the following steps.\n");
        }
        None => user.push_str("Write a proof of the theorem from the following steps.\n"),
    }
    user.push_str("# Proof Steps\n");
    if child_texts.is_empty() {
        user.push_str("(no steps: the statement holds immediately)\n");
    }
    for (i, t) in child_texts.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, t.trim()));
    }
    user.push_str("# Output\n");
    ChatRequest::new(
        config.model.clone(),
        config.temperature,
        vec![Message::system(SUMMARIZE_INSTRUCTIONS), Message::user(user)],
    )
}

pub fn summarize_tree<B: LlmBackend + ?Sized>(
    tree: &ProofTreeNode,
    statement_nl: &str,
    backend: &B,
    config: &SummarizeConfig,
) -> Result<Summary, SummarizeError> {
    match config.mode {
        Mode::Recursive => {
            let mut subproofs = Vec::new();
            let texts = child_texts(tree, statement_nl, backend, config, &mut subproofs)?;
            let proof = call(tree, None, &texts, statement_nl, backend, config)?;
            Ok(Summary { proof, subproofs })
        }
        Mode::Flat => {
            let mut texts = Vec::new();
            flat_texts(tree, &mut texts)?;
            let proof = call(tree, None, &texts, statement_nl, backend, config)?;
            Ok(Summary { proof, subproofs: Vec::new() })
        }
    }
}

fn explanation(node: &ProofTreeNode) -> Result<&str, SummarizeError> {
    node.explanation.as_deref().ok_or_else(|| SummarizeError::Unannotated(node.node_id.clone()))
}

fn flat_texts(node: &ProofTreeNode, out: &mut Vec<String>) -> Result<(), SummarizeError> {
    for c in &node.children {
        out.push(explanation(c)?.to_string());
        flat_texts(c, out)?;
    }
    Ok(())
}

/// Texts standing for each child of `node`: the explanation of a leaf, the
/// sub-proof body of an internal step.
fn child_texts<B: LlmBackend + ?Sized>(
    node: &ProofTreeNode,
    statement_nl: &str,
    backend: &B,
    config: &SummarizeConfig,
    subproofs: &mut Vec<SubProof>,
) -> Result<Vec<String>, SummarizeError> {
    let one = |child: &ProofTreeNode| -> Result<(String, Vec<SubProof>), SummarizeError> {
        let goal = explanation(child)?;
        if child.children.is_empty() {
            return Ok((goal.to_string(), Vec::new()));
        }
        let mut below = Vec::new();
        let texts = child_texts(child, statement_nl, backend, config, &mut below)?;
        let body = call(child, Some(goal), &texts, statement_nl, backend, config)?;
        below.push(SubProof { subtree_root: child.node_id.clone(), goal_text: goal.to_string(), body: body.clone() });
        Ok((body, below))
    };
    let results: Vec<Result<(String, Vec<SubProof>), SummarizeError>> = if config.concurrent_siblings {
        std::thread::scope(|s| {
            let handles: Vec<_> = node.children.iter().map(|c| s.spawn(move || one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("summarizer worker panicked")).collect()
        })
    } else {
        node.children.iter().map(one).collect()
    };
    let mut texts = Vec::with_capacity(results.len());
    for r in results {
        let (text, below) = r?;
        subproofs.extend(below);
        texts.push(text);
    }
    Ok(texts)
}

fn call<B: LlmBackend + ?Sized>(
    node: &ProofTreeNode,
    goal: Option<&str>,
    texts: &[String],
    statement_nl: &str,
    backend: &B,
    config: &SummarizeConfig,
) -> Result<String, SummarizeError> {
    let chars: usize = texts.iter().map(|t| t.chars().count()).sum();
    if chars > config.child_budget {
        return Err(SummarizeError::Budget { node_id: node.node_id.clone(), chars, budget: config.child_budget });
    }
    let request = assemble_summarize_prompt(goal, texts, statement_nl, config);
    let reply = backend
        .complete(&request)
        .map_err(|source| SummarizeError::Backend { node_id: node.node_id.clone(), source })?;
    let reply = reply.trim();
    if reply.is_empty() {
        return Err(SummarizeError::Backend {
            node_id: node.node_id.clone(),
            source: BackendError::MalformedResponse("empty summary".into()),
        });
    }
    Ok(reply.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::tree::Payload;
    use crate::trace::StepId;

    fn leaf(id: &str, text: &str) -> ProofTreeNode {
        ProofTreeNode {
            node_id: id.into(),
            payload: Payload::Step { step_id: StepId::new(id), kind: "rw".into() },
            explanation: Some(text.into()),
            children: vec![],
        }
    }

    fn root(children: Vec<ProofTreeNode>) -> ProofTreeNode {
        ProofTreeNode {
            node_id: "r".into(),
            payload: Payload::Root { statement: "p".into() },
            explanation: None,
            children,
        }
    }

    #[test]
    fn root_only_makes_one_call() {
        let mock = MockBackend::structured();
        let s = summarize_tree(&root(vec![]), "Zero is zero.", &mock, &SummarizeConfig::default()).unwrap();
        assert_eq!(mock.call_count(), 1);
        assert!(s.proof.contains("trivial"));
        assert_eq!(mock.calls()[0].temperature, 1.0);
    }

    #[test]
    fn children_are_numbered_in_order() {
        let texts = vec!["First.".to_string(), "Second.".to_string(), "Third.".to_string()];
        let req = assemble_summarize_prompt(None, &texts, "S.", &SummarizeConfig::default());
        let user = &req.messages[1].content;
        let a = user.find("1. First.").unwrap();
        let b = user.find("2. Second.").unwrap();
        let c = user.find("3. Third.").unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn budget_overflow_is_an_error() {
        let big = "x".repeat(40);
        let cfg = SummarizeConfig { child_budget: 50, ..Default::default() };
        let err = summarize_tree(&root(vec![leaf("a", &big), leaf("b", &big)]), "S", &MockBackend::echo(), &cfg)
            .unwrap_err();
        assert!(matches!(err, SummarizeError::Budget { chars: 80, budget: 50, .. }));
    }

    #[test]
    fn unannotated_child_is_an_error() {
        let mut l = leaf("a", "t");
        l.explanation = None;
        let err = summarize_tree(&root(vec![l]), "S", &MockBackend::echo(), &SummarizeConfig::default()).unwrap_err();
        assert!(matches!(err, SummarizeError::Unannotated(id) if id == "a"));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("flat".parse::<Mode>().unwrap(), Mode::Flat);
        assert!("other".parse::<Mode>().is_err());
        assert_eq!(Mode::Recursive.to_string(), "recursive");
    }
}
