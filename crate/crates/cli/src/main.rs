use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use proofnl::backend::LlmBackend;
use proofnl::eval::{
    self, discordant_counts, mcnemar, mcnemar_report, read_jsonl, score_all, score_report, tally_all, tally_report,
    CriterionJudgment, EvalError, PairedOutcome, StepJudgment,
};
use proofnl::pipeline::{
    self, make_backend, BackendKind, PipelineConfig, PipelineError, PromptCollector, Resources,
};
use proofnl::premise::{generate_explanations, PremiseLibrary};
use proofnl::summarize::Mode;
use proofnl::trace::load_trace;
use proofnl::tree::build_tree;

/// Translate Lean tactic-proof traces into natural-language proofs.
#[derive(Parser)]
#[command(name = "proofnl", version)]
struct Cli {
    /// JSON file with pipeline settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Premise library maintenance.
    Library {
        #[command(subcommand)]
        command: LibraryCommand,
    },
    /// Explain every step of each trace; writes `<name>.steps.json`.
    Informalize(StageArgs),
    /// Check trace files against the canonical format; prints one line per file.
    Validate {
        #[command(flatten)]
        traces: TraceArgs,
    },
    /// Build dependency trees; writes `<name>.tree.{txt,dot,json}`.
    Tree {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline; writes `<name>.proof.txt` per trace.
    Translate {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Assemble and write all prompts without calling a model.
        #[arg(long)]
        dry_run: bool,
        /// Also write the dependency tree dumps.
        #[arg(long)]
        emit_tree: bool,
        /// Directory for one file per sub-proof.
        #[arg(long)]
        emit_subproofs: Option<PathBuf>,
        /// Summarize sibling subtrees concurrently.
        #[arg(long)]
        concurrent_siblings: bool,
    },
    /// Evaluation reports.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Subcommand)]
enum LibraryCommand {
    /// Generate missing explanations, lowest module level first.
    Build {
        /// Library records (JSON lines).
        #[arg(long)]
        library: PathBuf,
        /// Module import graph (JSON array of `{module, imports}`).
        #[arg(long)]
        modules: Option<PathBuf>,
        /// Output library file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Step-label percentages per configuration.
    Tally {
        /// Step judgments (JSON lines).
        #[arg(long, required = true, num_args = 1..)]
        judgments: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Report::Text)]
        report: Report,
    },
    /// Key-point scores per proof and pooled; one table per criteria file.
    Score {
        /// Criterion judgments (JSON lines).
        #[arg(long, required = true, num_args = 1..)]
        criteria: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Report::Text)]
        report: Report,
    },
    /// McNemar's test; one row per pairs file.
    Mcnemar {
        /// Paired outcomes (JSON lines).
        #[arg(long, num_args = 1.., required_unless_present = "counts")]
        pairs: Vec<PathBuf>,
        /// Discordant counts given directly: A-only B-only.
        #[arg(long, num_args = 2, value_names = ["B", "C"], conflicts_with = "pairs")]
        counts: Option<Vec<u64>>,
        #[arg(long, value_enum, default_value_t = Report::Text)]
        report: Report,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Recursive,
    Flat,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Args)]
struct TraceArgs {
    /// Canonical trace files.
    #[arg(long = "trace", num_args = 1..)]
    traces: Vec<PathBuf>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    traces: TraceArgs,
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    modules: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Step few-shot pool (JSON array).
    #[arg(long)]
    fewshots: Option<PathBuf>,
    /// Statement few-shots (JSON array, at least three).
    #[arg(long)]
    statement_fewshots: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Chat-completions endpoint or base URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Append every exchange to this session file.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Serve responses from this session file; no network.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Maximum concurrent requests.
    #[arg(long)]
    in_flight: Option<usize>,
    #[arg(long)]
    informalize_temperature: Option<f64>,
    #[arg(long)]
    summarize_temperature: Option<f64>,
    /// Seed for premise few-shot sampling.
    #[arg(long)]
    seed: Option<u64>,
}

impl BackendArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(b) = self.backend {
            cfg.backend_kind = match b {
                BackendArg::Http => BackendKind::Http,
                BackendArg::Mock => BackendKind::Mock,
            };
        }
        set(&mut cfg.backend.endpoint_url, self.endpoint.clone());
        set(&mut cfg.backend.model, self.model.clone());
        set(&mut cfg.backend.api_key_env, self.api_key_env.clone());
        set(&mut cfg.backend.max_retries, self.max_retries);
        set(&mut cfg.in_flight, self.in_flight);
        set(&mut cfg.informalize_temperature, self.informalize_temperature);
        set(&mut cfg.summarize_temperature, self.summarize_temperature);
        set(&mut cfg.seed, self.seed);
        if self.record.is_some() {
            cfg.record = self.record.clone();
        }
        if self.replay.is_some() {
            cfg.replay = self.replay.clone();
        }
    }
}

impl StageArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if !self.traces.traces.is_empty() {
            cfg.traces = self.traces.traces.clone();
        }
        for (slot, value) in [
            (&mut cfg.library, &self.library),
            (&mut cfg.modules, &self.modules),
            (&mut cfg.catalog, &self.catalog),
            (&mut cfg.fewshots, &self.fewshots),
            (&mut cfg.statement_fewshots, &self.statement_fewshots),
        ] {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        set(&mut cfg.output_dir, self.out.clone());
        self.backend.apply(cfg);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    match err.downcast_ref::<EvalError>() {
        Some(EvalError::Io { .. }) | None => 1,
        Some(_) => 3,
    }
}

fn base_config(cli_config: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match cli_config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Library { command: LibraryCommand::Build { library, modules, out, backend } } => {
            cfg.library = Some(library);
            if modules.is_some() {
                cfg.modules = modules;
            }
            backend.apply(&mut cfg);
            cfg.validate()?;
            let lib = PremiseLibrary::load(cfg.library.as_ref().unwrap(), cfg.modules.as_deref())
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let backend = make_backend(&cfg)?;
            let (built, warnings) = generate_explanations(&lib, &backend, &pipeline::generation_config(&cfg))
                .map_err(|e| PipelineError::Backend(e.to_string()))?;
            if !warnings.is_empty() {
                eprintln!("{} record(s) had fewer few-shot examples than requested", warnings.len());
            }
            for (record, dep) in built.external_dependencies() {
                eprintln!("note: `{record}` depends on `{dep}`, which is outside the library");
            }
            built.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", out.display());
        }
        Command::Informalize(stage) => {
            stage.apply(&mut cfg);
            let (resources, traces) = prepare(&cfg)?;
            let backend = make_backend(&cfg)?;
            for (stem, trace) in &traces {
                let explanations = pipeline::informalize_steps(trace, &resources, &backend, &cfg)?;
                let path = pipeline::write_explanations(&cfg.output_dir, stem, &explanations)?;
                println!("{}", path.display());
            }
        }
        Command::Validate { traces } => {
            if traces.traces.is_empty() {
                return Err(PipelineError::Config("no trace files given (use --trace)".into()).into());
            }
            let mut failed = 0;
            for path in &traces.traces {
                match load_trace(path) {
                    Ok(t) => println!("ok {} ({} steps)", path.display(), t.steps.len()),
                    Err(e) => {
                        failed += 1;
                        println!("invalid {}: {e}", path.display());
                    }
                }
            }
            if failed > 0 {
                return Err(PipelineError::Validation(format!("{failed} invalid trace file(s)")).into());
            }
        }
        Command::Tree { traces, out } => {
            if !traces.traces.is_empty() {
                cfg.traces = traces.traces;
            }
            set(&mut cfg.output_dir, out);
            cfg.validate()?;
            for (stem, trace) in pipeline::load_traces(&cfg)? {
                let tree = build_tree(&trace).map_err(|e| PipelineError::Validation(e.to_string()))?;
                pipeline::write_tree(&cfg.output_dir, &stem, &tree)?;
                println!("{}", cfg.output_dir.join(format!("{stem}.tree.txt")).display());
            }
        }
        Command::Translate { stage, mode, dry_run, emit_tree, emit_subproofs, concurrent_siblings } => {
            stage.apply(&mut cfg);
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Recursive => Mode::Recursive,
                    ModeArg::Flat => Mode::Flat,
                };
            }
            cfg.dry_run |= dry_run;
            cfg.emit_tree |= emit_tree;
            cfg.concurrent_siblings |= concurrent_siblings;
            if emit_subproofs.is_some() {
                cfg.emit_subproofs = emit_subproofs;
            }
            let (resources, traces) = prepare(&cfg)?;
            if cfg.dry_run {
                let collector = PromptCollector::default();
                for (stem, trace) in &traces {
                    pipeline::translate(trace, &resources, &collector, &cfg)?;
                    let prompts = collector.take();
                    pipeline::write_prompts(&cfg, stem, &prompts)?;
                    println!("{}: {} prompt(s)", stem, prompts.len());
                }
                return Ok(());
            }
            let backend = make_backend(&cfg)?;
            translate_all(&cfg, &resources, &traces, &backend)?;
        }
        Command::Eval { command } => run_eval(command)?,
    }
    Ok(())
}

fn prepare(cfg: &PipelineConfig) -> Result<(Resources, Vec<(String, proofnl::trace::ProofTrace)>)> {
    cfg.validate()?;
    if cfg.traces.is_empty() {
        return Err(PipelineError::Config("no trace files given (use --trace)".into()).into());
    }
    let resources = Resources::load(cfg)?;
    let traces = pipeline::load_traces(cfg)?;
    let dups = pipeline::duplicate_stems(&traces);
    if !dups.is_empty() {
        return Err(PipelineError::Config(format!("trace file names collide: {}", dups.join(", "))).into());
    }
    Ok((resources, traces))
}

fn translate_all(
    cfg: &PipelineConfig,
    resources: &Resources,
    traces: &[(String, proofnl::trace::ProofTrace)],
    backend: &dyn LlmBackend,
) -> Result<()> {
    for (stem, trace) in traces {
        let translation = pipeline::translate(trace, resources, backend, cfg)?;
        let path = pipeline::write_translation(cfg, stem, &translation)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn emit<T: Serialize>(report: Report, text: String, value: &T) -> Result<()> {
    match report {
        Report::Text => print!("{text}"),
        Report::Json => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn file_label(path: &Path) -> String {
    pipeline::artifact_stem(path)
}

fn run_eval(command: EvalCommand) -> Result<()> {
    match command {
        EvalCommand::Tally { judgments, report } => {
            let mut all: Vec<StepJudgment> = Vec::new();
            for p in &judgments {
                all.extend(read_jsonl::<StepJudgment>(p)?);
            }
            if all.is_empty() {
                return Err(EvalError::EmptyConfig("(any)".into()).into());
            }
            let tallies = tally_all(&all);
            #[derive(Serialize)]
            struct Row<'a> {
                config_id: &'a str,
                total: usize,
                counts: &'a std::collections::BTreeMap<eval::StepLabel, usize>,
                percentages: std::collections::BTreeMap<eval::StepLabel, String>,
            }
            let rows: Vec<Row> = tallies
                .iter()
                .map(|t| Row {
                    config_id: &t.config_id,
                    total: t.total,
                    counts: &t.counts,
                    percentages: eval::StepLabel::ALL.iter().map(|l| (*l, t.percent_display(*l))).collect(),
                })
                .collect();
            emit(report, tally_report(&tallies), &rows)
        }
        EvalCommand::Score { criteria, report } => {
            #[derive(Serialize)]
            struct Row<'a> {
                proof_id: &'a str,
                captured: usize,
                partial: usize,
                missed: usize,
                score: f64,
                display: String,
            }
            #[derive(Serialize)]
            struct FileRows<'a> {
                file: String,
                proofs: Vec<Row<'a>>,
            }
            // each file is one configuration, scored on its own
            let mut tables = Vec::new();
            for p in &criteria {
                let judgments: Vec<CriterionJudgment> = read_jsonl(p)?;
                let (mut rows, pooled) = score_all(&judgments)?;
                rows.push(("(pooled)".to_string(), pooled));
                tables.push((file_label(p), rows));
            }
            let text = tables
                .iter()
                .map(|(label, rows)| format!("{label}:\n{}", score_report(rows)))
                .collect::<Vec<_>>()
                .join("\n");
            let json: Vec<FileRows> = tables
                .iter()
                .map(|(label, rows)| FileRows {
                    file: label.clone(),
                    proofs: rows
                        .iter()
                        .map(|(id, s)| Row {
                            proof_id: id,
                            captured: s.captured,
                            partial: s.partial,
                            missed: s.missed,
                            score: s.value(),
                            display: s.display(),
                        })
                        .collect(),
                })
                .collect();
            emit(report, text, &json)
        }
        EvalCommand::Mcnemar { pairs, counts, report } => {
            let mut rows = Vec::new();
            if let Some(c) = counts {
                rows.push((format!("{} vs {}", c[0], c[1]), mcnemar(c[0], c[1])?));
            }
            for p in &pairs {
                let outcomes: Vec<PairedOutcome> = read_jsonl(p)?;
                let (b, c) = discordant_counts(&outcomes)?;
                rows.push((file_label(p), mcnemar(b, c)?));
            }
            let mut text = mcnemar_report(&rows);
            for (name, m) in &rows {
                text.push_str(&format!("{name}: {m}\n"));
            }
            #[derive(Serialize)]
            struct Row<'a> {
                comparison: &'a str,
                a_only: u64,
                b_only: u64,
                chi_squared: f64,
                p_value: f64,
                chi_squared_display: String,
                p_value_display: String,
            }
            let json: Vec<Row> = rows
                .iter()
                .map(|(name, m)| Row {
                    comparison: name,
                    a_only: m.b,
                    b_only: m.c,
                    chi_squared: m.chi_squared,
                    p_value: m.p_value,
                    chi_squared_display: m.chi_squared_display(),
                    p_value_display: m.p_value_display(),
                })
                .collect();
            emit(report, text, &json)
        }
    }
}
