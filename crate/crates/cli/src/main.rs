use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vicl_core::catalog::{Relation, TaskCatalog, TaskPair};
use vicl_core::corpus::{self, SampleTriple, SamplingSplits, Split};
use vicl_core::distill;
use vicl_core::diversity::{self, EmbeddedRecord};
use vicl_core::gateway::{BackendRole, Gateway, GatewayConfig};
use vicl_core::image::ImageBuffer;
use vicl_core::metrics::{self, ChannelPolicy};
use vicl_core::prompt::{lint_implicitness, PromptEngine, PromptGenerator, PromptKind, PromptRecord, TemplateSet};
use vicl_core::report::{self, ReportFormat};
use vicl_core::runner::{ReviewHook, RunConfig, RunMode, RunPaths, Runner};
use vicl_core::util;
use vicl_core::vie;

#[derive(Parser)]
#[command(name = "vicl", version, about = "Cross-task visual in-context learning harness")]
struct Cli {
    /// Task catalog file; defaults to the built-in twelve tasks.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Backend config (TOML); defaults to the deterministic mock backends.
    #[arg(long, global = true)]
    gateway: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the task catalog.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Manifests, splits and triple sampling.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Render, lint and elicit implicit prompts.
    #[command(subcommand)]
    Prompt(PromptCmd),
    /// Embedding-space deduplication of prompt records.
    #[command(subcommand)]
    Filter(FilterCmd),
    /// Student fine-tuning data.
    #[command(subcommand)]
    Distill(DistillCmd),
    /// Full-reference image quality.
    #[command(subcommand)]
    Iqa(IqaCmd),
    /// VIEScore evaluation.
    #[command(subcommand)]
    Vie(VieCmd),
    /// Best-of-k inference runs.
    #[command(subcommand)]
    Run(RunCmd),
    /// Fixed-vs-ours comparison table for a run.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CatalogCmd {
    List {
        #[arg(long)]
        json: bool,
    },
    Pairs {
        #[arg(long, value_enum)]
        relation: Option<RelationArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RelationArg {
    Intra,
    Inter,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Load a manifest and print per-task split counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Assign a seeded 70/30 split to unsplit pairs.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output manifest; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw demonstration/query triples for a pair.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small procedural corpus for smoke runs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        per_task: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum PromptCmd {
    /// Show the bundle of a given kind for one sampled triple.
    Render {
        #[arg(long)]
        kind: PromptKind,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Implicit description for the deployment kind.
        #[arg(long)]
        implicit: Option<String>,
    },
    /// Check a description for task-name leaks.
    Lint {
        #[arg(long)]
        pair: String,
        #[arg(long, conflicts_with = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Elicit teacher descriptions and embed them.
    Generate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pair: String,
        /// Triples to draw (from the train split on both sides).
        #[arg(long)]
        n: usize,
        /// Teacher samples per triple.
        #[arg(long, default_value_t = 1)]
        per_triple: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FilterCmd {
    Dedup {
        #[arg(long)]
        pair: String,
        #[arg(long, default_value_t = diversity::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = diversity::DEFAULT_CAP)]
        cap: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the cluster assignments.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DistillCmd {
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = diversity::DEFAULT_CAP)]
        cap: usize,
    },
    Validate {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Luma,
    Rgb,
}

#[derive(Subcommand)]
enum IqaCmd {
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        cand: PathBuf,
        #[arg(long, value_enum, default_value = "luma")]
        policy: PolicyArg,
        /// Fit the reference to the candidate's size first.
        #[arg(long)]
        fit: bool,
    },
}

#[derive(Subcommand)]
enum VieCmd {
    /// Score a generated image against a triple with the evaluator backend.
    Score {
        #[arg(long)]
        image: PathBuf,
        /// JSON file holding one triple, or a JSONL file with --sample-id.
        #[arg(long)]
        triple: PathBuf,
        #[arg(long)]
        sample_id: Option<String>,
        #[arg(long)]
        instruction: String,
    },
    /// Aggregate a saved evaluator answer carrying both sc and pq lists.
    Parse {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum RunCmd {
    Pair(RunPairArgs),
}

#[derive(Args)]
struct RunPairArgs {
    #[arg(long)]
    pair: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = vicl_core::runner::DEFAULT_K)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset manifest; without one a procedural corpus is synthesized.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Defaults to `s<seed>-k<k>`.
    #[arg(long)]
    run_id: Option<String>,
    /// Baseline: the fixed instruction instead of a student prompt.
    #[arg(long)]
    fixed_prompt: bool,
    /// Run the baseline and the student mode back to back.
    #[arg(long, conflicts_with = "fixed_prompt")]
    both: bool,
    /// Pause after each student prompt for approval or an edit on stdin.
    #[arg(long)]
    review: bool,
    #[arg(long)]
    vie_all: bool,
    #[arg(long)]
    resample_prompt: bool,
    #[arg(long)]
    allow_leaky: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Maximum generator calls for this invocation.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_id: String,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long, default_value = "md")]
    format: ReportFormat,
    /// TOML `[tiers]` table; defaults to the published grouping.
    #[arg(long)]
    tiers: Option<PathBuf>,
}

struct Ctx {
    catalog: &'static TaskCatalog,
    engine: PromptEngine,
    gateway_path: Option<PathBuf>,
}

impl Ctx {
    fn gateway(&self) -> Result<Gateway> {
        let cfg = match &self.gateway_path {
            Some(p) => GatewayConfig::load(p)?,
            None => GatewayConfig::mock(),
        };
        Ok(Gateway::new(cfg)?)
    }

    fn pair(&self, key: &str) -> Result<TaskPair> {
        Ok(self.catalog.parse_pair(key)?)
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    util::read_lines(path)
        .with_context(|| format!("reading {}", path.display()))?
        .into_iter()
        .map(|(n, line)| serde_json::from_str(&line).with_context(|| format!("{}:{n}", path.display())))
        .collect()
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let catalog: &'static TaskCatalog = match &cli.catalog {
        Some(p) => Box::leak(Box::new(TaskCatalog::load(p)?)),
        None => TaskCatalog::builtin(),
    };
    let templates = match &cli.templates {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    let ctx = Ctx {
        catalog,
        engine: PromptEngine::new(templates),
        gateway_path: cli.gateway,
    };
    match cli.command {
        Command::Catalog(c) => catalog_cmd(&ctx, c),
        Command::Corpus(c) => corpus_cmd(&ctx, c),
        Command::Prompt(c) => prompt_cmd(&ctx, c),
        Command::Filter(c) => filter_cmd(&ctx, c),
        Command::Distill(c) => distill_cmd(&ctx, c),
        Command::Iqa(c) => iqa_cmd(c),
        Command::Vie(c) => vie_cmd(&ctx, c),
        Command::Run(RunCmd::Pair(a)) => run_pair(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
    }
}

fn catalog_cmd(ctx: &Ctx, cmd: CatalogCmd) -> Result<()> {
    match cmd {
        CatalogCmd::List { json } => {
            if json {
                return print_json(&ctx.catalog.list_tasks());
            }
            for t in ctx.catalog.list_tasks() {
                println!("{:<20} {:<24} {:?}", t.id, t.display_name, t.category);
            }
        }
        CatalogCmd::Pairs { relation } => {
            let filter = relation.map(|r| match r {
                RelationArg::Intra => Relation::IntraCategory,
                RelationArg::Inter => Relation::InterCategory,
            });
            for p in ctx.catalog.enumerate_pairs(filter) {
                println!("{}\t{}", p.key(), p.relation);
            }
        }
    }
    Ok(())
}

fn corpus_cmd(ctx: &Ctx, cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate { manifest } => {
            let d = corpus::load_manifest(&manifest, ctx.catalog)?;
            print_json(&json!({ "pairs": d.pair_count(), "tasks": d.counts() }))
        }
        CorpusCmd::Split { manifest, seed, out } => {
            let d = corpus::load_manifest(&manifest, ctx.catalog)?;
            let split = corpus::split_dataset(&d, seed)?;
            let out = out.unwrap_or(manifest);
            split.save_manifest(&out)?;
            print_json(&split.counts())
        }
        CorpusCmd::Sample {
            manifest,
            pair,
            n,
            seed,
            out,
        } => {
            let d = corpus::load_manifest(&manifest, ctx.catalog)?;
            let triples = corpus::sample_triples(&d, &ctx.pair(&pair)?, n, seed, SamplingSplits::default())?;
            match out {
                Some(p) => {
                    util::write_jsonl(&p, triples.iter())?;
                    eprintln!("wrote {} triples to {}", triples.len(), p.display());
                }
                None => {
                    for t in &triples {
                        println!("{}", serde_json::to_string(t)?);
                    }
                }
            }
            Ok(())
        }
        CorpusCmd::Synth { out, per_task, seed } => {
            let m = corpus::synth::synthesize_corpus(&out, ctx.catalog, per_task, seed)?;
            println!("{}", m.display());
            Ok(())
        }
    }
}

fn first_triple(ctx: &Ctx, manifest: &Path, pair: &str, seed: u64) -> Result<SampleTriple> {
    let d = corpus::load_manifest(manifest, ctx.catalog)?;
    let mut t = corpus::sample_triples(&d, &ctx.pair(pair)?, 1, seed, SamplingSplits::default())?;
    Ok(t.remove(0))
}

fn prompt_cmd(ctx: &Ctx, cmd: PromptCmd) -> Result<()> {
    match cmd {
        PromptCmd::Render {
            kind,
            manifest,
            pair,
            seed,
            implicit,
        } => {
            let triple = first_triple(ctx, &manifest, &pair, seed)?;
            let bundle = match kind {
                PromptKind::FixedBaseline => ctx.engine.build_fixed_prompt(&triple)?,
                PromptKind::TeacherElicitation => ctx.engine.build_teacher_prompt(&triple)?,
                PromptKind::StudentOpenEnded => ctx.engine.build_student_prompt(&triple)?,
                PromptKind::Deployment => {
                    let text = implicit.context("--implicit is required for the deployment kind")?;
                    let rec = PromptRecord::new(text, triple.pair.clone(), &triple.sample_id, PromptGenerator::Human, ctx.catalog)?;
                    ctx.engine.build_deployment_prompt(&triple, &rec, false)?
                }
            };
            let slots: Vec<_> = bundle
                .images()
                .map(|s| {
                    let path = match &s.source {
                        vicl_core::prompt::ImageSource::Path(p) => p.display().to_string(),
                        vicl_core::prompt::ImageSource::Pixels(_) => "<pixels>".into(),
                    };
                    json!({ "label": s.label, "role": s.role, "path": path })
                })
                .collect();
            print_json(&json!({
                "kind": bundle.kind(),
                "sample_id": triple.sample_id,
                "system": bundle.system_text(),
                "slots": slots,
                "text": bundle.user_text(),
            }))
        }
        PromptCmd::Lint { pair, text, file } => {
            let text = match (text, file) {
                (Some(t), _) => t,
                (None, Some(f)) => std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?,
                (None, None) => bail!("give --text or --file"),
            };
            let lint = lint_implicitness(&text, &ctx.pair(&pair)?, ctx.catalog)?;
            print_json(&lint)?;
            if !lint.is_clean() {
                std::process::exit(2);
            }
            Ok(())
        }
        PromptCmd::Generate {
            manifest,
            pair,
            n,
            per_triple,
            seed,
            out,
        } => prompt_generate(ctx, &manifest, &pair, n, per_triple, seed, &out),
    }
}

fn prompt_generate(ctx: &Ctx, manifest: &Path, pair: &str, n: usize, per_triple: u32, seed: u64, out: &Path) -> Result<()> {
    let gateway = ctx.gateway()?;
    let d = corpus::load_manifest(manifest, ctx.catalog)?;
    let pair = ctx.pair(pair)?;
    let splits = SamplingSplits {
        demo: Split::Train,
        query: Split::Train,
    };
    let triples = corpus::sample_triples(&d, &pair, n, seed, splits)?;
    let mut records: Vec<PromptRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    let (mut failed, mut leaky) = (0, 0);
    for t in &triples {
        let bundle = ctx.engine.build_teacher_prompt(t)?.bind(|path, role| {
            corpus::load_preprocessed(path, role.resolution())
        })?;
        for a in 0..per_triple {
            let text = match gateway.complete_text(BackendRole::Teacher, &bundle, a) {
                Ok(r) => r.text().unwrap_or_default().trim().to_string(),
                Err(e) => {
                    log::warn!("{}: teacher attempt {a}: {e}", t.sample_id);
                    failed += 1;
                    continue;
                }
            };
            let rec = PromptRecord::new(text, pair.clone(), &t.sample_id, PromptGenerator::Teacher, ctx.catalog)?;
            if !rec.lint.is_clean() {
                leaky += 1;
            }
            if seen.insert(rec.id.clone()) {
                records.push(rec);
            }
        }
    }
    if !records.is_empty() {
        let texts: Vec<String> = records.iter().map(|r| r.text().to_string()).collect();
        for (r, v) in records.iter_mut().zip(gateway.embed_text(&texts)?) {
            r.embedding = Some(v);
        }
    }
    std::fs::create_dir_all(out)?;
    util::write_jsonl(&out.join("records.jsonl"), records.iter())?;
    util::write_jsonl(&out.join("triples.jsonl"), triples.iter())?;
    print_json(&json!({
        "triples": triples.len(),
        "records": records.len(),
        "leaky": leaky,
        "teacher_failures": failed,
        "out": out,
    }))
}

fn filter_cmd(ctx: &Ctx, cmd: FilterCmd) -> Result<()> {
    let FilterCmd::Dedup {
        pair,
        threshold,
        cap,
        input,
        out,
        clusters,
    } = cmd;
    let pair = ctx.pair(&pair)?;
    let records: Vec<PromptRecord> = read_jsonl(&input)?;
    let embedded = records
        .into_iter()
        .filter(|r| r.pair == pair)
        .map(EmbeddedRecord::from_record)
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = diversity::dedup(&embedded, threshold, cap)?;
    util::write_jsonl(&out, outcome.kept.iter())?;
    if let Some(p) = clusters {
        util::write_jsonl(&p, outcome.clusters.iter())?;
    }
    print_json(&json!({
        "pair": pair.key(),
        "records": embedded.len(),
        "clusters": outcome.clusters.len(),
        "kept": outcome.kept.len(),
        "over_cap": outcome.over_cap.len(),
    }))
}

fn distill_cmd(ctx: &Ctx, cmd: DistillCmd) -> Result<()> {
    match cmd {
        DistillCmd::Export {
            records,
            triples,
            out,
            cap,
        } => {
            let records: Vec<PromptRecord> = read_jsonl(&records)?;
            let triples: Vec<SampleTriple> = read_jsonl(&triples)?;
            let m = distill::export_training_set(&records, &triples, &ctx.engine, ctx.catalog, &out, cap)?;
            print_json(&m)
        }
        DistillCmd::Validate { path } => {
            let r = distill::validate_training_set(&path, ctx.catalog)?;
            print_json(&r)?;
            if !r.is_clean() {
                std::process::exit(2);
            }
            Ok(())
        }
    }
}

fn iqa_cmd(cmd: IqaCmd) -> Result<()> {
    let IqaCmd::Score {
        reference,
        cand,
        policy,
        fit,
    } = cmd;
    let r = ImageBuffer::open(&reference)?;
    let c = ImageBuffer::open(&cand)?;
    let r = if fit {
        r.fit_cover(c.width(), c.height(), (0.5, 0.5))?
    } else {
        r
    };
    let policy = match policy {
        PolicyArg::Luma => ChannelPolicy::LuminanceOnly,
        PolicyArg::Rgb => ChannelPolicy::MeanOverRgb,
    };
    print_json(&metrics::score_candidate_with(&r, &c, policy)?)
}

fn vie_cmd(ctx: &Ctx, cmd: VieCmd) -> Result<()> {
    match cmd {
        VieCmd::Score {
            image,
            triple,
            sample_id,
            instruction,
        } => {
            let triple: SampleTriple = match sample_id {
                Some(id) => read_jsonl::<SampleTriple>(&triple)?
                    .into_iter()
                    .find(|t| t.sample_id == id)
                    .with_context(|| format!("no triple {id} in {}", triple.display()))?,
                None => serde_json::from_str(&std::fs::read_to_string(&triple)?)
                    .with_context(|| format!("parsing {}", triple.display()))?,
            };
            let gateway = ctx.gateway()?;
            let img = Arc::new(ImageBuffer::open(&image)?);
            print_json(&vie::evaluate_output(&gateway, &ctx.engine, img, &triple, &instruction)?)
        }
        VieCmd::Parse { file } => {
            let raw = std::fs::read_to_string(&file)?;
            print_json(&vie::aggregate(&vie::parse_evaluator_output(&raw)?))
        }
    }
}

/// Reads review decisions from stdin: an empty line approves, anything else
/// replaces the prompt.
struct StdinReview;

impl ReviewHook for StdinReview {
    fn review(&self, triple: &SampleTriple, record: &PromptRecord, rejected: Option<&str>) -> Option<String> {
        let mut err = std::io::stderr();
        if let Some(why) = rejected {
            let _ = writeln!(err, "rejected: {why}");
        }
        let _ = writeln!(
            err,
            "[{}] {}\nprompt: {}\nenter to approve, or type a replacement:",
            triple.sample_id,
            triple.pair.key(),
            record.text()
        );
        let mut line = String::new();
        match std::io::stdin().lock().read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim().to_string()).filter(|l| !l.is_empty()),
        }
    }
}

fn run_pair(ctx: &Ctx, a: RunPairArgs) -> Result<()> {
    let pair = ctx.pair(&a.pair)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| format!("s{}-k{}", a.seed, a.k));
    let paths = RunPaths::new(&a.runs_dir, &run_id);
    let manifest = match &a.manifest {
        Some(m) => m.clone(),
        None => {
            let dir = paths.root.join("synthetic-corpus");
            let m = dir.join("manifest.jsonl");
            if !m.exists() {
                log::warn!("no --manifest given; synthesizing a procedural corpus in {}", dir.display());
                corpus::synth::synthesize_corpus(&dir, ctx.catalog, 6, a.seed)?;
            }
            m
        }
    };
    let descriptor = corpus::load_manifest(&manifest, ctx.catalog)?;
    let gateway = ctx.gateway()?;
    let modes: &[RunMode] = if a.both {
        &RunMode::ALL
    } else if a.fixed_prompt {
        &[RunMode::FixedBaseline]
    } else {
        &[RunMode::Ours]
    };
    let mut summary = Vec::new();
    for &mode in modes {
        let config = RunConfig {
            k: a.k,
            mode,
            workers: a.workers,
            vie_all: a.vie_all,
            resample_prompt: a.resample_prompt,
            allow_leaky: a.allow_leaky,
            generator_budget: a.budget,
            ..RunConfig::default()
        };
        let mut runner = Runner::new(&gateway, &ctx.engine, ctx.catalog, config, paths.clone());
        if a.review {
            runner = runner.with_review(Arc::new(StdinReview));
        }
        let result = runner.run_pair(&descriptor, &pair, a.n, a.seed)?;
        let ok = result
            .outcomes
            .iter()
            .filter(|o| o.status == vicl_core::runner::OutcomeStatus::Ok)
            .count();
        let leaks = result.outcomes.iter().filter(|o| o.has_leak()).count();
        summary.push(json!({
            "mode": mode,
            "outcomes": result.outcomes.len(),
            "ok": ok,
            "resumed": result.resumed,
            "executed": result.executed,
            "truncated": result.truncated,
            "lint_leaks": leaks,
            "store": paths.outcomes(&pair, mode),
        }));
    }
    let tiers = report::TierConfig::default();
    report::write_report(&paths, ctx.catalog, &tiers, ReportFormat::Markdown)?;
    print_json(&json!({
        "run_id": run_id,
        "run_dir": paths.root,
        "pair": pair.key(),
        "modes": summary,
        "report": paths.root.join("report.md"),
    }))
}

fn report_cmd(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let paths = RunPaths::new(&a.runs_dir, &a.run_id);
    if !paths.root.exists() {
        bail!("no run directory {}", paths.root.display());
    }
    let tiers = report::load_tiers(a.tiers.as_deref())?;
    print!("{}", report::write_report(&paths, ctx.catalog, &tiers, a.format)?);
    Ok(())
}
