use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mmskills::adapters::toy::{build_demo_library, scenarios, ToyPanelEnvironment, ToyTask};
use mmskills::adapters::{
    EmbeddingProvider, Environment, HashedBagOfTokens, HttpEmbedder, HttpModelProvider, ModelProvider,
    RecordedEnvironment, RuleProvider, ScriptedProvider,
};
use mmskills::generator::synthetic::{synthetic_config, synthetic_rules, write_synthetic_pool};
use mmskills::generator::{load_pool, run_pipeline, write_report, GeneratorConfig, Providers, REPORT_FILE};
use mmskills::library::{load_library, SkillLibrary, LIBRARY_FILE};
use mmskills::package::{load_package, validate_package, ViewType};
use mmskills::runtime::{
    replay_episode, run_episode_with, EpisodeOptions, FixedClock, RuntimeConfig, SkillCondition, SystemClock,
    TrajectoryLog,
};
use mmskills::telemetry::{render_table, rows_to_csv, stats_by_condition, usage_rows};

#[derive(Parser)]
#[command(name = "mmskills", version, about = "Multimodal skill packages for GUI agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    /// Ordered reply script (JSON list of `{"match": ..., "reply": ...}`).
    Scripted,
    /// Reusable reply rules (JSON list of `{"surface", "contains", "reply"}`).
    Rules,
    /// Chat-completions endpoint from MODEL_ENDPOINT / MODEL_API_KEY / MODEL_NAME.
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Toy,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedKind {
    Hashed,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Check a skill package or a library directory.
    Validate { path: PathBuf },
    /// Summarise a skill package.
    Inspect { path: PathBuf },
    /// Turn a trajectory pool into a skill library.
    Generate {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        domain: Option<String>,
        /// Generator config (JSON); flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rules")]
        model: ModelKind,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "hashed")]
        embed: EmbedKind,
        /// Where to write the phase report (default: <out>/pipeline_report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one episode and write its log.
    Run {
        #[arg(long)]
        condition: SkillCondition,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "toy")]
        env: EnvKind,
        /// Toy task name.
        #[arg(long, default_value = "panels")]
        task: String,
        /// Recorded environment directory (frames/*.png, feedback.json) for `--env external`.
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "scripted")]
        model: ModelKind,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Runtime config (JSON); `--condition` overrides its skill_condition.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        log: PathBuf,
        /// Store observation PNGs here and reference them from the log.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
        /// Stamp every record with 0.000 instead of wall-clock time.
        #[arg(long)]
        fixed_clock: bool,
    },
    /// Usage and behaviour table over episode logs, one row per condition.
    Stats {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Re-run a log with its own replies and check decisions and terminal state.
    Replay {
        log: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        /// Recorded environment directory when the log did not come from the toy board.
        #[arg(long)]
        recording: Option<PathBuf>,
    },
    /// Write a demo workspace: toy library, reply scripts, synthetic pool and generator rules.
    Demo { dir: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn model_provider(kind: ModelKind, script: Option<&Path>) -> Result<Box<dyn ModelProvider>> {
    let script_text = || -> Result<String> {
        let p = script.context("--script is required for scripted and rules models")?;
        read(p)
    };
    Ok(match kind {
        ModelKind::Scripted => Box::new(ScriptedProvider::from_json(&script_text()?).context("bad reply script")?),
        ModelKind::Rules => Box::new(RuleProvider::from_json(&script_text()?).context("bad rule file")?),
        ModelKind::Http => Box::new(HttpModelProvider::from_env()?),
    })
}

fn validate(path: &Path) -> Result<bool> {
    if path.join(LIBRARY_FILE).is_file() {
        let lib = load_library(path)?;
        let mut ok = true;
        for name in lib.names() {
            let report = validate_package(lib.get(name).expect("listed"), lib.root(name).expect("listed"));
            ok &= report.is_valid();
            for line in report.to_string().lines() {
                println!("{name}: {line}");
            }
        }
        if ok {
            println!("valid ({} skills)", lib.len());
        }
        return Ok(ok);
    }
    let pkg = load_package(path)?;
    let report = validate_package(&pkg, path);
    print!("{report}");
    if report.is_valid() {
        println!("valid");
    }
    Ok(report.is_valid())
}

fn inspect(path: &Path) -> Result<()> {
    let pkg = load_package(path)?;
    let d = &pkg.descriptor;
    println!("{} [{}] {}", d.skill_name, d.domain_tag, pkg.version);
    println!("  {}", d.short_description);
    println!("  sources: {}", d.source_task_ids.join(", "));
    println!("  procedure: {} lines", pkg.procedure.lines().count());
    println!("  cards: {}, views: {}", pkg.state_cards.len(), pkg.total_views());
    for card in &pkg.state_cards {
        let views: Vec<&str> = ViewType::ALL
            .iter()
            .filter(|v| pkg.view(&card.state_id, **v).is_some())
            .map(|v| v.as_str())
            .collect();
        println!("  - {}: {} [{}]", card.state_id, card.when_to_use, views.join(", "));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn generate(
    pool_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    clusters: Option<usize>,
    domain: Option<String>,
    config: Option<&Path>,
    model: ModelKind,
    script: Option<&Path>,
    embed: EmbedKind,
    report_path: Option<&Path>,
) -> Result<bool> {
    let mut cfg: GeneratorConfig = match config {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("bad generator config {}", p.display()))?,
        None => GeneratorConfig::default(),
    };
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.clusters = clusters.unwrap_or(cfg.clusters);
    cfg.domain_tag = domain.unwrap_or(cfg.domain_tag);
    let pool = load_pool(pool_dir)?;
    let model = model_provider(model, script)?;
    let embedder: Box<dyn EmbeddingProvider> = match embed {
        EmbedKind::Hashed => Box::new(HashedBagOfTokens::default()),
        EmbedKind::Http => Box::new(HttpEmbedder::from_env()?),
    };
    let providers = Providers { model: model.as_ref(), embedder: embedder.as_ref() };
    let report_path = report_path.map(Path::to_path_buf).unwrap_or_else(|| out.join(REPORT_FILE));
    match run_pipeline(&pool, &cfg, &providers, out) {
        Ok((lib, report)) => {
            write_report(&report, &report_path)?;
            for w in report.phase1.warnings.iter().chain(&report.phase3.warnings).chain(&report.phase4.warnings) {
                log::warn!("{w}");
            }
            let rejected = report.gate_records().filter(|g| !g.passed).count();
            println!("{} skills from {} trajectories ({rejected} gate rejections)", lib.len(), pool.len());
            for name in lib.names() {
                println!("  {name}");
            }
            Ok(true)
        }
        Err(e) => {
            fs::create_dir_all(out).ok();
            write_report(&e.report, &report_path)?;
            eprintln!("generation failed: {}", e.error);
            Ok(false)
        }
    }
}

fn open_library(path: Option<&Path>) -> Result<SkillLibrary> {
    match path {
        Some(p) => Ok(load_library(p)?),
        None => Ok(SkillLibrary::new("none")),
    }
}

fn environment(kind: EnvKind, task: &str, recording: Option<&Path>) -> Result<Box<dyn Environment>> {
    Ok(match kind {
        EnvKind::Toy => Box::new(ToyPanelEnvironment::from_descriptor(&format!("toy:{task}"))?),
        EnvKind::External => {
            let dir = recording.context("--recording is required for --env external")?;
            Box::new(RecordedEnvironment::from_dir(dir)?)
        }
    })
}

/// Log text with wall-clock fields and stored frame paths blanked, for comparing runs.
fn comparable(log: &TrajectoryLog) -> String {
    let mut log = log.clone();
    log.header.started_at.clear();
    for s in &mut log.steps {
        s.timestamp.clear();
        s.observation_ref.path = None;
    }
    if let Some(s) = &mut log.summary {
        s.finished_at.clear();
    }
    log.to_jsonl()
}

fn replay(log_path: &Path, library: Option<&Path>, recording: Option<&Path>) -> Result<bool> {
    let log = TrajectoryLog::read(log_path)?;
    if !log.is_complete() {
        bail!("{} is not a completed episode", log_path.display());
    }
    let lib = open_library(library)?;
    let desc = log.header.environment.as_str();
    let mut env: Box<dyn Environment> = if desc.starts_with("toy:") {
        Box::new(ToyPanelEnvironment::from_descriptor(desc)?)
    } else {
        let dir = match (recording, desc.strip_prefix("recorded:")) {
            (Some(d), _) => d.to_path_buf(),
            (None, Some(d)) => PathBuf::from(d),
            (None, None) => bail!("cannot rebuild environment `{desc}`; pass --recording"),
        };
        Box::new(RecordedEnvironment::from_dir(&dir)?)
    };
    let again = replay_episode(&log, env.as_mut(), &lib, &FixedClock::default())?;
    let same_decisions = again.decisions() == log.decisions();
    let same_terminal = again.terminal() == log.terminal();
    if same_decisions && same_terminal {
        let identical = comparable(&again) == comparable(&log);
        println!(
            "replay matches: {} steps, terminal {}{}",
            log.steps.len(),
            log.terminal(),
            if identical { "" } else { " (log text differs outside decisions)" }
        );
        return Ok(true);
    }
    println!("replay diverged: terminal {} vs {}", again.terminal(), log.terminal());
    for (i, (a, b)) in again.decisions().iter().zip(log.decisions()).enumerate() {
        if *a != b {
            println!("  first differing decision at step {}: {a:?} vs {b:?}", i + 1);
            break;
        }
    }
    Ok(false)
}

fn demo(dir: &Path) -> Result<()> {
    build_demo_library(&dir.join("library"))?;
    let scripts = dir.join("scripts");
    fs::create_dir_all(&scripts)?;
    write_json(&scripts.join("no_skill.json"), &scenarios::no_skill())?;
    write_json(&scripts.join("mmskills.json"), &scenarios::mmskills())?;
    write_json(&scripts.join("text_only.json"), &scenarios::text_only())?;
    write_json(&scripts.join("endless.json"), &scenarios::endless(20))?;
    write_synthetic_pool(&dir.join("pool"))?;
    write_json(&dir.join("generator_rules.json"), &synthetic_rules())?;
    write_json(&dir.join("generator_config.json"), &synthetic_config())?;
    println!("demo workspace written to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", error_text(&e));
            ExitCode::from(2)
        }
    }
}

// Library errors already inline their source; only append causes not yet shown.
fn error_text(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    text
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Validate { path } => validate(&path),
        Command::Inspect { path } => inspect(&path).map(|_| true),
        Command::Generate { pool, out, seed, clusters, domain, config, model, script, embed, report } => generate(
            &pool,
            &out,
            seed,
            clusters,
            domain,
            config.as_deref(),
            model,
            script.as_deref(),
            embed,
            report.as_deref(),
        ),
        Command::Run {
            condition,
            library,
            env,
            task,
            recording,
            model,
            script,
            config,
            instruction,
            log,
            frames_dir,
            fixed_clock,
        } => {
            let mut cfg = match config {
                Some(p) => RuntimeConfig::load(&p)?,
                None => RuntimeConfig::default(),
            };
            cfg.skill_condition = condition;
            if condition != SkillCondition::NoSkill && library.is_none() {
                bail!("--library is required for condition {condition}");
            }
            let lib = open_library(library.as_deref())?;
            let mut env = environment(env, &task, recording.as_deref())?;
            let instruction = match (instruction, ToyTask::by_name(&task)) {
                (Some(i), _) => i,
                (None, Some(t)) if matches!(env.descriptor().split(':').next(), Some("toy")) => t.instruction,
                _ => bail!("--instruction is required for this environment"),
            };
            let model = model_provider(model, script.as_deref())?;
            let (fixed, system) = (FixedClock::default(), SystemClock);
            let opts = EpisodeOptions {
                clock: if fixed_clock { &fixed } else { &system },
                frames_dir,
                candidates: None,
            };
            let out = run_episode_with(env.as_mut(), model.as_ref(), &lib, &cfg, &instruction, &opts)?;
            out.write(&log)?;
            println!("{}: {} steps, terminal {}", log.display(), out.steps.len(), out.terminal());
            if let Some(e) = out.summary.as_ref().and_then(|s| s.error.as_ref()) {
                eprintln!("episode error: {e}");
            }
            Ok(true)
        }
        Command::Stats { logs, csv } => {
            let logs = logs
                .iter()
                .map(|p| TrajectoryLog::read(p).with_context(|| format!("cannot read log {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let rows = usage_rows(&stats_by_condition(&logs)?);
            println!("{}", render_table(&rows).trim_end());
            if let Some(p) = csv {
                fs::write(&p, rows_to_csv(&rows)).with_context(|| format!("cannot write {}", p.display()))?;
            }
            Ok(true)
        }
        Command::Replay { log, library, recording } => replay(&log, library.as_deref(), recording.as_deref()),
        Command::Demo { dir } => demo(&dir).map(|_| true),
    }
}
