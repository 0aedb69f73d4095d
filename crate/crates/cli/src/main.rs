//! `icpl`: build personalized-summary prompts, collect completions, score them
//! with EGISES and probe the results for paradoxes.

mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use icpl_core::corpus::PerturbationTag;
use icpl_core::probes::RuleSet;
use icpl_core::promptforge::PromptStyle;

use commands::{AdapterChoice, CollectArgs};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "icpl",
    version,
    about = "Probe in-context personalization of summarization models"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML file with flat run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering, scoring and collection.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// News corpus (TSV or JSONL).
    #[arg(long, global = true, env = "ICPL_CORPUS")]
    corpus: Option<PathBuf>,
    /// User table (TSV or JSONL).
    #[arg(long, global = true, env = "ICPL_USERS")]
    users: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ICPL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AdapterKind {
    Playback,
    #[value(name = "http_json", alias = "http-json")]
    HttpJson,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rules {
    Empirical,
    Definitional,
}

impl From<Rules> for RuleSet {
    fn from(r: Rules) -> Self {
        match r {
            Rules::Empirical => RuleSet::Empirical,
            Rules::Definitional => RuleSet::Definitional,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tag {
    Genuine,
    Adversarial,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the corpus and user table; write instances, pairs and diagnostics.
    Ingest,
    /// Render the prompt dataset.
    BuildPrompts {
        /// Styles to render (default: all six, or `styles` from the config).
        #[arg(long, value_delimiter = ',')]
        styles: Vec<String>,
        #[arg(long)]
        pairs_per_doc: Option<usize>,
    },
    /// Collect completions for a prompt dataset.
    Collect {
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long, value_enum)]
        adapter: AdapterKind,
        /// Recorded completions for the playback adapter.
        #[arg(long, required_if_eq("adapter", "playback"))]
        playback: Option<PathBuf>,
        #[arg(long, required_if_eq("adapter", "http_json"))]
        endpoint: Option<String>,
        /// Model id; required for playback and http_json.
        #[arg(long)]
        model: Option<String>,
        /// parrot | constant | interpolate:<lambda> | profile-sensitive
        #[arg(long, required_if_eq("adapter", "oracle"))]
        oracle: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score generated summaries and write the score table.
    Score {
        #[arg(long, value_delimiter = ',')]
        generations: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "genuine")]
        perturbation: Tag,
    },
    /// Detect paradoxes and, given generations, classify ICPL.
    Probe {
        /// Score table CSV (default: <out>/scores.csv).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, value_enum)]
        rules: Option<Rules>,
        #[arg(long)]
        tau_u: Option<f64>,
        #[arg(long)]
        tau_s: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        generations: Vec<PathBuf>,
    },
    /// Build perturbed contrastive prompts; with --oracle, also compare scores.
    Adversarial {
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Score with human similarity ratings in place of summary divergences.
    HjScore {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, value_delimiter = ',')]
        generations: Vec<PathBuf>,
    },
    /// Write the leaderboard report for a score table.
    Report {
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Include the paradox matrix under this rule set.
        #[arg(long, value_enum)]
        rules: Option<Rules>,
    },
    /// Run the built-in metric checks.
    Selftest,
}

fn resolve(global: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = global.seed {
        cfg.seed = v;
    }
    if let Some(v) = global.workers {
        cfg.workers = v;
    }
    if let Some(v) = &global.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = &global.users {
        cfg.users = Some(v.clone());
    }
    if let Some(v) = &global.out {
        cfg.out = v.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<(serde_json::Value, bool)> {
    let mut cfg = resolve(&cli.global)?;
    match &cli.command {
        Command::BuildPrompts { styles, pairs_per_doc } => {
            if !styles.is_empty() {
                cfg.styles = if styles.iter().any(|s| s == "all") {
                    PromptStyle::ALL.to_vec()
                } else {
                    styles.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
                };
            }
            if let Some(n) = pairs_per_doc {
                cfg.pairs_per_doc = *n;
            }
        }
        Command::Probe {
            rules, tau_u, tau_s, ..
        } => {
            if let Some(r) = rules {
                cfg.rules = (*r).into();
            }
            cfg.tau_u = tau_u.or(cfg.tau_u);
            cfg.tau_s = tau_s.or(cfg.tau_s);
        }
        _ => {}
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .ok();

    let value = match cli.command {
        Command::Ingest => commands::ingest(&cfg)?,
        Command::BuildPrompts { .. } => commands::build_prompts(&cfg)?,
        Command::Collect {
            prompts,
            adapter,
            playback,
            endpoint,
            model,
            oracle,
            output,
        } => {
            let adapter = match adapter {
                AdapterKind::Playback => AdapterChoice::Playback(playback.expect("required by clap")),
                AdapterKind::HttpJson => AdapterChoice::HttpJson {
                    endpoint: endpoint.expect("required by clap"),
                },
                AdapterKind::Oracle => AdapterChoice::Oracle(oracle.expect("required by clap")),
            };
            commands::collect_cmd(
                &cfg,
                CollectArgs {
                    prompts,
                    adapter,
                    model,
                    output,
                },
            )?
        }
        Command::Score {
            generations,
            perturbation,
        } => {
            let tag = match perturbation {
                Tag::Genuine => PerturbationTag::Genuine,
                Tag::Adversarial => PerturbationTag::Adversarial,
            };
            commands::score(&cfg, &generations, tag)?
        }
        Command::Probe {
            scores, generations, ..
        } => commands::probe(&cfg, scores.as_deref(), &generations)?,
        Command::Adversarial { oracle } => commands::adversarial(&cfg, oracle.as_deref())?,
        Command::HjScore { ratings, generations } => commands::hj_score(&cfg, &ratings, &generations)?,
        Command::Report { scores, rules } => commands::report(&cfg, scores.as_deref(), rules.map(Into::into))?,
        Command::Selftest => {
            let checks = selftest::run();
            let ok = checks.iter().all(|c| c.passed);
            return Ok((json!({ "passed": ok, "checks": checks }), ok));
        }
    };
    Ok((value, true))
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use icpl_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<icpl_core::Error>()) {
        Some(E::Io { .. }) => "io",
        Some(E::MissingGeneration { .. }) | Some(E::MissingRatings(_)) => "missing_input",
        Some(E::Interrupted { .. }) => "interrupted",
        Some(E::InvalidConfig(_)) | Some(E::UnknownStyle(_)) => "config",
        Some(_) => "data",
        None if err.to_string().starts_with("missing input") => "missing_input",
        None => "error",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok((value, ok)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json value"));
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            let causes: Vec<String> = err.chain().skip(1).map(ToString::to_string).collect();
            let body = json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": err.to_string(),
                    "causes": causes,
                }
            });
            eprintln!("{}", serde_json::to_string_pretty(&body).expect("json value"));
            ExitCode::FAILURE
        }
    }
}
