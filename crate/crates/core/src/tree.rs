//! Dependency tree of proof steps.
//!
//! The root holds the theorem statement. A step whose syntax node contains
//! further tactic steps (the proof block of a `have`, for instance) becomes an
//! internal node over those steps; every other step is a leaf under the
//! nearest enclosing goal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::informalize::StepExplanation;
use crate::trace::{AstNode, ProofTrace, StepId};

/// Tactic kinds expected to open an intermediate goal with its own proof
/// block.
pub const GOAL_OPENING_KINDS: &[&str] = &["have", "suffices"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Root { statement: String },
    Step { step_id: StepId, kind: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTreeNode {
    /// Id of the syntax node the tree node was built from.
    pub node_id: String,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default)]
    pub children: Vec<ProofTreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("step `{0}` is not owned by any syntax node")]
    Unowned(StepId),
    #[error("`{kind}` step `{step}` opens a goal but owns no nested steps")]
    DetachedGoal { step: StepId, kind: String },
    #[error("syntax node `{node}` owns unknown step `{step}`")]
    UnknownStep { node: String, step: StepId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no explanation for step(s): {}", .0.iter().map(StepId::as_str).collect::<Vec<_>>().join(", "))]
pub struct MissingExplanation(pub Vec<StepId>);

impl ProofTreeNode {
    pub fn is_root(&self) -> bool {
        matches!(self.payload, Payload::Root { .. })
    }

    pub fn step_id(&self) -> Option<&StepId> {
        match &self.payload {
            Payload::Step { step_id, .. } => Some(step_id),
            Payload::Root { .. } => None,
        }
    }

    /// True for the root and for steps with children; these are the nodes
    /// the summarizer issues a prompt for.
    pub fn is_internal(&self) -> bool {
        self.is_root() || !self.children.is_empty()
    }

    /// Step ids in pre-order, which is source order.
    pub fn steps_preorder(&self) -> Vec<&StepId> {
        let mut out = Vec::new();
        self.walk(&mut |n| out.extend(n.step_id()));
        out
    }

    /// Step ids of leaf steps, left to right.
    pub fn leaves(&self) -> Vec<&StepId> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if n.children.is_empty() {
                out.extend(n.step_id());
            }
        });
        out
    }

    pub fn internal_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |node| n += node.is_internal() as usize);
        n
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ProofTreeNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Compact structural form, e.g. `root[intro, have[rw, rw], exact]`.
    pub fn shape(&self) -> String {
        let head = match &self.payload {
            Payload::Root { .. } => "root",
            Payload::Step { kind, .. } => kind.as_str(),
        };
        if self.children.is_empty() {
            return head.to_string();
        }
        let kids: Vec<String> = self.children.iter().map(ProofTreeNode::shape).collect();
        format!("{head}[{}]", kids.join(", "))
    }

    /// Indented text dump, two spaces per level.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.text_into(0, &mut out);
        out
    }

    fn text_into(&self, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match &self.payload {
            Payload::Root { statement } => writeln!(out, "{pad}root: {statement}"),
            Payload::Step { step_id, kind } => writeln!(out, "{pad}{step_id} {kind}"),
        }
        .unwrap();
        if let Some(e) = &self.explanation {
            writeln!(out, "{pad}  | {e}").unwrap();
        }
        for c in &self.children {
            c.text_into(depth + 1, out);
        }
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph proof {\n  node [shape=box];\n");
        self.dot_into(&mut out);
        out.push_str("}\n");
        out
    }

    fn dot_into(&self, out: &mut String) {
        let label = match &self.payload {
            Payload::Root { statement } => statement.clone(),
            Payload::Step { step_id, kind } => format!("{step_id}: {kind}"),
        };
        writeln!(out, "  \"{}\" [label=\"{}\"];", self.node_id, escape(&label)).unwrap();
        for c in &self.children {
            writeln!(out, "  \"{}\" -> \"{}\";", self.node_id, c.node_id).unwrap();
            c.dot_into(out);
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Builds the dependency tree from the trace's syntax tree.
pub fn build_tree(trace: &ProofTrace) -> Result<ProofTreeNode, StructureError> {
    let position: HashMap<&StepId, usize> = trace.steps.iter().enumerate().map(|(i, s)| (&s.step_id, i)).collect();
    let root = trace.ast.root();
    let mut children = Vec::new();
    collect(trace, &position, root, &mut children)?;
    let tree = ProofTreeNode {
        node_id: root.node_id.clone(),
        payload: Payload::Root { statement: trace.theorem_statement.clone() },
        explanation: None,
        children,
    };
    let seen: HashSet<&StepId> = tree.steps_preorder().into_iter().collect();
    if let Some(missing) = trace.steps.iter().find(|s| !seen.contains(&s.step_id)) {
        return Err(StructureError::Unowned(missing.step_id.clone()));
    }
    Ok(tree)
}

/// Appends the tree nodes for the steps under `node` to `out`, in source
/// order. A node that owns a step becomes one tree node whose children are
/// the steps found beneath it; other nodes are transparent.
fn collect(
    trace: &ProofTrace,
    position: &HashMap<&StepId, usize>,
    node: &AstNode,
    out: &mut Vec<ProofTreeNode>,
) -> Result<(), StructureError> {
    for child in trace.ast.children(node) {
        match &child.owning_step {
            Some(step_id) => {
                let step = trace.step(step_id).ok_or_else(|| StructureError::UnknownStep {
                    node: child.node_id.clone(),
                    step: step_id.clone(),
                })?;
                let mut nested = Vec::new();
                collect(trace, position, child, &mut nested)?;
                let opens_goal = step.state_after.goals.len() > step.state_before.goals.len();
                if nested.is_empty() && opens_goal && GOAL_OPENING_KINDS.contains(&step.tactic_kind.as_str()) {
                    return Err(StructureError::DetachedGoal {
                        step: step_id.clone(),
                        kind: step.tactic_kind.clone(),
                    });
                }
                out.push(ProofTreeNode {
                    node_id: child.node_id.clone(),
                    payload: Payload::Step { step_id: step_id.clone(), kind: step.tactic_kind.clone() },
                    explanation: None,
                    children: nested,
                });
            }
            None => collect(trace, position, child, out)?,
        }
    }
    out.sort_by_key(|n| n.step_id().map(|s| position[s]));
    Ok(())
}

/// Copies each step's explanation text onto its node. The root stays
/// unannotated.
pub fn attach_explanations(
    tree: &ProofTreeNode,
    explanations: &BTreeMap<StepId, StepExplanation>,
) -> Result<ProofTreeNode, MissingExplanation> {
    let missing: Vec<StepId> = tree
        .steps_preorder()
        .into_iter()
        .filter(|id| !explanations.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MissingExplanation(missing));
    }
    Ok(annotate(tree, explanations))
}

fn annotate(node: &ProofTreeNode, explanations: &BTreeMap<StepId, StepExplanation>) -> ProofTreeNode {
    ProofTreeNode {
        node_id: node.node_id.clone(),
        payload: node.payload.clone(),
        explanation: node.step_id().map(|id| explanations[id].text.clone()),
        children: node.children.iter().map(|c| annotate(c, explanations)).collect(),
    }
}
