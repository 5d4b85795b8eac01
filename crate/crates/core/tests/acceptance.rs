//! Acceptance suite: one check per primary criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use proofnl::backend::{ChatRequest, MockBackend, ReplayBackend, INFORMALIZE_TEMPERATURE, SUMMARIZE_TEMPERATURE};
use proofnl::eval::{autoflag_formal_syntax, classify_step, mcnemar, Score, ScopeIndex, StepFlags, StepLabel};
use proofnl::informalize::{prepare_step, InformalizeConfig};
use proofnl::pipeline::{translate, write_translation, PipelineConfig, Resources};
use proofnl::premise::{generate_explanations, level_modules, GenerationConfig, ModuleNode, PremiseLibrary};
use proofnl::template::{derive_usage_facts, Catalog};
use proofnl::trace::StepId;
use proofnl::tree::{build_tree, ProofTreeNode};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn pipeline_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        library: Some(fixture("library/library.jsonl")),
        modules: Some(fixture("library/modules.json")),
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn mcnemar_rows() -> Check {
    let start = Instant::now();
    for (b, c, chi2, p) in PUBLISHED_ROWS {
        let m = mcnemar(b, c).map_err(|e| e.to_string())?;
        ensure((m.chi_squared - chi2).abs() <= 1e-4, || format!("({b},{c}): chi2 {}", m.chi_squared))?;
        ensure(((m.p_value - p) / p).abs() < 0.01, || format!("({b},{c}): p {:e}", m.p_value))?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.3}s"))
}

fn scoring() -> Check {
    for ((c, p, m), want) in [((87, 11, 10), "0.857"), ((85, 10, 13), "0.833")] {
        let got = Score::new(c, p, m).map_err(|e| e.to_string())?.display();
        ensure(got == want, || format!("({c},{p},{m}) displayed {got}, expected {want}"))?;
    }
    Ok(())
}

fn classification() -> Check {
    for bits in 0u8..16 {
        let (f, mi, i, u) = (bits & 8 != 0, bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let want = if f {
            StepLabel::UntranslatedExpression
        } else if mi {
            StepLabel::Misinformation
        } else if i {
            StepLabel::InsufficientInformation
        } else if u {
            StepLabel::UnnecessaryMention
        } else {
            StepLabel::Correct
        };
        let got = classify_step(StepFlags::new(f, mi, i, u));
        ensure(got == want, || format!("flags {bits:04b}: {got:?}, expected {want:?}"))?;
    }
    Ok(())
}

fn tree_shape() -> Check {
    let tree = build_tree(&trace_fixture("even_add_even")).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(fixture("trees/even_add_even.tree.json")).map_err(|e| e.to_string())?;
    let expected: ProofTreeNode = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(tree == expected, || "tree differs from the checked-in tree".into())?;
    ensure(tree.shape() == "root[intro, have[rw, rw, rw], exact]", || tree.shape())?;
    runner(256)
        .run(&(shapes_strategy(), any::<bool>()), |(shapes, reverse)| {
            let trace = generated_trace(&shapes, reverse);
            let tree = build_tree(&trace).unwrap();
            let pre: Vec<&str> = tree.steps_preorder().into_iter().map(|s| s.as_str()).collect();
            let source: Vec<&str> = trace.steps.iter().map(|s| s.step_id.as_str()).collect();
            prop_assert_eq!(pre, source);
            prop_assert_eq!(tree.shape(), expected_shape(&shapes));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn template_retrieval() -> Check {
    let trace = trace_fixture("even_add_even");
    let pick = |catalog: &Catalog, id: &str| {
        let step = trace.step(&StepId::new(id)).unwrap();
        catalog.select(&step.tactic_kind, &derive_usage_facts(step, &trace)).map(|t| t.template_id.clone())
    };
    let builtin = Catalog::builtin();
    let s3 = pick(&builtin, "s3").map_err(|e| e.to_string())?;
    let s4 = pick(&builtin, "s4").map_err(|e| e.to_string())?;
    ensure(s3 == "rw.goal.theorems", || format!("s3 selected {s3}"))?;
    ensure(s4 == "rw.goal.assumptions", || format!("s4 selected {s4}"))?;
    let n = builtin.templates().len();
    runner(200)
        .run(&Just((0..n).collect::<Vec<_>>()).prop_shuffle(), |order| {
            let templates = order.iter().map(|&i| builtin.templates()[i].clone()).collect();
            let shuffled = Catalog::new(builtin.slots().to_vec(), templates).unwrap();
            for step in &trace.steps {
                prop_assert_eq!(pick(&shuffled, step.step_id.as_str()).ok(), pick(&builtin, step.step_id.as_str()).ok());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn read_golden(name: &str) -> Result<String, String> {
    std::fs::read_to_string(fixture(&format!("prompts/{name}"))).map_err(|e| format!("{name}: {e}"))
}

fn prompt_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = pipeline_config(dir.path());
    let res = Resources::load(&cfg).map_err(|e| e.to_string())?;
    let trace = trace_fixture("even_add_even");
    let step = trace.step(&StepId::new("s3")).unwrap();
    let prepared = prepare_step(step, &trace, &res.library, &res.catalog, &res.pool, &InformalizeConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(prepared.request.transcript() == read_golden("rw_theorems.golden")?, || "step prompt differs".into())?;
    ensure(prepared.request.temperature == INFORMALIZE_TEMPERATURE, || "step temperature".into())?;
    let mock = MockBackend::structured();
    translate(&trace, &res, &mock, &cfg).map_err(|e| e.to_string())?;
    let summaries: Vec<ChatRequest> =
        mock.calls().into_iter().filter(|c| c.temperature == SUMMARIZE_TEMPERATURE).collect();
    ensure(summaries.len() == 2, || format!("{} summarization prompts", summaries.len()))?;
    ensure(summaries[0].transcript() == read_golden("summarize_have.golden")?, || "have prompt differs".into())?;
    ensure(summaries[1].transcript() == read_golden("summarize_root.golden")?, || "root prompt differs".into())?;
    ensure(
        mock.calls().iter().all(|c| c.temperature == INFORMALIZE_TEMPERATURE || c.temperature == SUMMARIZE_TEMPERATURE),
        || "unexpected temperature".into(),
    )?;
    ensure(INFORMALIZE_TEMPERATURE == 0.4 && SUMMARIZE_TEMPERATURE == 1.0, || "temperature constants".into())
}

fn leveling() -> Check {
    runner(256)
        .run(&dag_strategy(), |graph| {
            let nodes: Vec<ModuleNode> = graph
                .iter()
                .map(|(m, i)| ModuleNode { module_path: m.clone(), imports: i.clone(), level: 0 })
                .collect();
            prop_assert_eq!(level_modules(&nodes).unwrap(), relaxation_levels(&graph));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let lib = PremiseLibrary::load(fixture("library/library_raw.jsonl"), Some(&fixture("library/modules.json")))
        .map_err(|e| e.to_string())?;
    let mock = MockBackend::structured();
    generate_explanations(&lib, &mock, &GenerationConfig::default()).map_err(|e| e.to_string())?;
    let levels: Vec<usize> = mock
        .calls()
        .iter()
        .map(|c| {
            let user = c.last_user_message().unwrap();
            let input = &user[user.rfind("# Input").unwrap()..];
            let name = input.lines().find_map(|l| l.strip_prefix("**Name**:")).unwrap().trim();
            lib.level_of(lib.get(name).unwrap())
        })
        .collect();
    ensure(levels.len() == lib.len(), || format!("{} of {} records prompted", levels.len(), lib.len()))?;
    ensure(levels.windows(2).all(|w| w[0] <= w[1]), || format!("levels out of order: {levels:?}"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Check {
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = PipelineConfig { emit_tree: true, ..pipeline_config(dir.path()) };
        let res = Resources::load(&cfg).map_err(|e| e.to_string())?;
        let replay = ReplayBackend::load(fixture("sessions/fig2.jsonl")).map_err(|e| e.to_string())?;
        let t = translate(&trace_fixture("even_add_even"), &res, &replay, &cfg).map_err(|e| e.to_string())?;
        write_translation(&cfg, "even_add_even", &t).map_err(|e| e.to_string())?;
        let snap = snapshot(dir.path());
        ensure(snap.contains_key("even_add_even.proof.txt"), || "no proof file".into())?;
        snapshots.push(snap);
    }
    ensure(snapshots[0] == snapshots[1], || "artifacts differ between runs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = pipeline_config(dir.path());
    let res = Resources::load(&cfg).map_err(|e| e.to_string())?;
    let mock = MockBackend::structured();
    let trace = trace_fixture("even_add_even");
    translate(&trace, &res, &mock, &cfg).map_err(|e| e.to_string())?;
    let summaries: Vec<ChatRequest> =
        mock.calls().into_iter().filter(|c| c.temperature == SUMMARIZE_TEMPERATURE).collect();
    let internal = build_tree(&trace).unwrap().internal_count();
    ensure(summaries.len() == 2 && internal == 2, || format!("{} calls, {internal} internal nodes", summaries.len()))?;
    let child_first = summaries[0].last_user_message().unwrap().contains("# Intermediate Goal")
        && !summaries[1].last_user_message().unwrap().contains("# Intermediate Goal");
    ensure(child_first, || "parent summarized before child".into())
}

fn autoflag() -> Check {
    let mut inf = ScopeIndex::from_trace(&trace_fixture("inf_pos_eq_zero"));
    inf.variables.extend(["P".to_string(), "a".to_string()]);
    let seq = ScopeIndex::new(Vec::<String>::new(), ["x", "n"]);
    ensure(autoflag_formal_syntax("the set's infimum sInf P is positive", &inf), || "sInf not flagged".into())?;
    ensure(autoflag_formal_syntax("the n-th element x n of the sequence", &seq), || "x n not flagged".into())?;
    ensure(autoflag_formal_syntax("it remains ⊢ 0 < a", &inf), || "turnstile not flagged".into())?;
    ensure(autoflag_formal_syntax("so ↑n is positive", &inf), || "cast arrow not flagged".into())?;
    let clean = std::fs::read_to_string(fixture("texts/inf_clean.txt")).map_err(|e| e.to_string())?;
    ensure(!autoflag_formal_syntax(&clean, &inf), || "clean infimum proof flagged".into())
}

#[test]
fn acceptance() {
    let checks: [Criterion; 9] = [
        ("mcnemar: six published rows reproduced", mcnemar_rows),
        ("scoring: published scores at 3 d.p.", scoring),
        ("classification: 16-case truth table", classification),
        ("tree shape: even_add_even tree and random-trace invariants", tree_shape),
        ("template retrieval: rw theorems/assumptions, order-free", template_retrieval),
        ("prompt determinism: goldens and temperatures", prompt_determinism),
        ("leveling: longest-path oracle and generation order", leveling),
        ("end-to-end determinism: replay and call order", end_to_end_determinism),
        ("autoflag: leakage cases and clean proof", autoflag),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(()) => println!("PASS  {name}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
