//! Shared helpers for the integration suites: fixture paths, random trace
//! and module-graph generators, and independent oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::{json, Value};

use proofnl::trace::{load_trace, parse_trace, ProofTrace};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn trace_fixture(name: &str) -> ProofTrace {
    load_trace(fixture(&format!("traces/{name}.trace"))).expect("fixture trace loads")
}

/// Compares `actual` with a checked-in golden file. With `UPDATE_GOLDEN=1`
/// the file is rewritten instead.
pub fn assert_golden(rel: &str, actual: &str) {
    let path = fixture(rel);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} differs from the assembled text:\n{actual}", path.display());
}

// ---------------------------------------------------------------- traces

/// Structure of a generated proof: leaves are plain tactics, blocks are
/// goal-opening tactics with their own nested steps.
#[derive(Debug, Clone)]
pub enum Shape {
    Leaf(&'static str),
    Block(&'static str, Vec<Shape>),
}

impl Shape {
    pub fn count(&self) -> usize {
        match self {
            Shape::Leaf(_) => 1,
            Shape::Block(_, kids) => 1 + kids.iter().map(Shape::count).sum::<usize>(),
        }
    }

    fn expected_shape(&self) -> String {
        match self {
            Shape::Leaf(k) => k.to_string(),
            Shape::Block(k, kids) => format!("{k}[{}]", kids.iter().map(Shape::expected_shape).collect::<Vec<_>>().join(", ")),
        }
    }
}

/// Shape string the tree builder should produce for `shapes`.
pub fn expected_shape(shapes: &[Shape]) -> String {
    if shapes.is_empty() {
        return "root".into();
    }
    format!("root[{}]", shapes.iter().map(Shape::expected_shape).collect::<Vec<_>>().join(", "))
}

pub fn total_steps(shapes: &[Shape]) -> usize {
    shapes.iter().map(Shape::count).sum()
}

fn max_depth(shapes: &[Shape]) -> usize {
    shapes
        .iter()
        .map(|s| match s {
            Shape::Leaf(_) => 0,
            Shape::Block(_, kids) => 1 + max_depth(kids),
        })
        .max()
        .unwrap_or(0)
}

/// Proof shapes with at most 30 steps and blocks nested at most 3 deep.
pub fn shapes_strategy() -> impl Strategy<Value = Vec<Shape>> {
    let leaf = prop::sample::select(vec!["rw", "exact", "simp", "intro", "apply", "linarith", "constructor"])
        .prop_map(Shape::Leaf);
    let node = leaf.prop_recursive(3, 30, 4, |inner| {
        (prop::sample::select(vec!["have", "suffices"]), prop::collection::vec(inner, 1..4))
            .prop_map(|(k, kids)| Shape::Block(k, kids))
    });
    prop::collection::vec(node, 0..6)
        .prop_filter("at most 30 steps, nesting at most 3", |s| total_steps(s) <= 30 && max_depth(s) <= 3)
}

struct Builder {
    steps: Vec<Value>,
    next_node: usize,
    reverse_children: bool,
}

impl Builder {
    fn node_id(&mut self) -> String {
        self.next_node += 1;
        format!("n{}", self.next_node)
    }

    fn emit(&mut self, shapes: &[Shape]) -> Vec<Value> {
        let mut nodes = Vec::new();
        for s in shapes {
            let idx = self.steps.len() + 1;
            let id = format!("s{idx}");
            let line = idx as u32 + 1;
            let (kind, kids) = match s {
                Shape::Leaf(k) => (*k, &[][..]),
                Shape::Block(k, kids) => (*k, kids.as_slice()),
            };
            let opens = matches!(s, Shape::Block(..));
            let goal = format!("p{idx} = p{idx}");
            let after: Vec<String> = if opens { vec![format!("q{idx}"), goal.clone()] } else { vec![] };
            let tactic = if opens { format!("{kind} h{idx} : q{idx}") } else { format!("{kind} x") };
            self.steps.push(json!({
                "id": id, "tactic": tactic, "kind": kind,
                "before": {"hyps": [["x", "ℕ"]], "goals": [goal]},
                "after": {"hyps": [["x", "ℕ"]], "goals": after},
                "premises": [],
                "span": {"start": [line, 2], "end": [line, 20]}
            }));
            let node = self.node_id();
            let mut children = Vec::new();
            if !kids.is_empty() {
                // nested steps sit under a transparent sequence node
                let seq = self.node_id();
                let inner = self.emit(kids);
                children.push(json!({"id": seq, "kind": "tacticSeq", "children": inner}));
            }
            nodes.push(json!({
                "id": node, "kind": "tactic", "step": id, "children": children,
                "introduces": if opens { vec![format!("h{idx}")] } else { vec![] },
                "mentions": []
            }));
        }
        if self.reverse_children {
            nodes.reverse();
        }
        nodes
    }
}

/// Canonical trace JSON for `shapes`. With `reverse_children` the syntax
/// children are listed in reverse source order.
pub fn trace_json(shapes: &[Shape], reverse_children: bool) -> Value {
    let mut b = Builder { steps: Vec::new(), next_node: 0, reverse_children };
    let top = b.emit(shapes);
    json!({
        "theorem_name": "generated",
        "theorem_statement": "∀ (x : ℕ), x = x",
        "steps": b.steps,
        "premises": [],
        "ast": {"id": "n0", "kind": "byTactic", "children": top}
    })
}

pub fn generated_trace(shapes: &[Shape], reverse_children: bool) -> ProofTrace {
    parse_trace(&trace_json(shapes, reverse_children).to_string()).expect("generated trace is valid")
}

// --------------------------------------------------------- module graphs

/// Random acyclic import graph over up to 50 modules, as (name, imports)
/// pairs in shuffled order. Some imports point outside the graph.
pub fn dag_strategy() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    (1usize..=50)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<u8>(), n * n),
                prop::collection::vec(0u8..8, n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(n, bits, external, order)| {
            // module i may only import modules with a smaller index
            let mut out: Vec<(String, Vec<String>)> = (0..n)
                .map(|i| {
                    let mut imports: Vec<String> =
                        (0..i).filter(|&j| bits[i * n + j] < 40).map(|j| format!("M{j}")).collect();
                    if external[i] == 0 {
                        imports.push(format!("Ext{}", i % 3));
                    }
                    (format!("M{i}"), imports)
                })
                .collect();
            let shuffled: Vec<_> = order.iter().map(|&k| out[k].clone()).collect();
            out = shuffled;
            out
        })
}

/// Longest-path levels by repeated relaxation until nothing changes.
/// Imports that name no module are level 0.
pub fn relaxation_levels(graph: &[(String, Vec<String>)]) -> BTreeMap<String, usize> {
    let mut level: BTreeMap<String, usize> = BTreeMap::new();
    for (m, imports) in graph {
        level.insert(m.clone(), 0);
        for i in imports {
            level.entry(i.clone()).or_insert(0);
        }
    }
    loop {
        let mut changed = false;
        for (m, imports) in graph {
            let want = imports.iter().map(|i| level[i] + 1).max().unwrap_or(0);
            if want > level[m] {
                level.insert(m.clone(), want);
                changed = true;
            }
        }
        if !changed {
            return level;
        }
    }
}

// --------------------------------------------------------------- McNemar

/// Continuity-corrected statistic computed directly.
pub fn chi_squared_oracle(b: u64, c: u64) -> f64 {
    let d = (b as f64 - c as f64).abs() - 1.0;
    d * d / (b + c) as f64
}

/// Two-sided normal tail at z = sqrt(chi2), via the Mills-ratio integral
/// 2 phi(z) * integral_0^inf exp(-z u - u^2 / 2) du, by composite Simpson.
pub fn p_value_oracle(chi2: f64) -> f64 {
    let z = chi2.sqrt();
    let phi = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper = 40.0;
    let n = 400_000usize;
    let h = upper / n as f64;
    let f = |u: f64| (-z * u - u * u / 2.0).exp();
    let mut sum = f(0.0) + f(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    2.0 * phi * sum * h / 3.0
}

/// Published McNemar rows: (A only, B only, chi-squared, p-value).
pub const PUBLISHED_ROWS: [(u64, u64, f64, f64); 6] = [
    (51, 123, 28.9713, 7.3460e-08),
    (40, 475, 365.7398, 1.5841e-81),
    (56, 418, 274.9388, 9.5181e-62),
    (42, 477, 362.9210, 6.5096e-81),
    (62, 423, 267.2165, 4.5875e-60),
    (115, 118, 0.0172, 8.9576e-01),
];
