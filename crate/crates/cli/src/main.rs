use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bsdp::dlp::FeatureStore;
use bsdp::fitting::fit_all;
use bsdp::io::{self, RunConfig, StreamRecord};
use bsdp::metrics::build_report;
use bsdp::protocol::run_protocol;
use bsdp::prototype::{compute_prototype, select_exemplars, ExemplarSelection};
use bsdp::{CategoryId, FeatureVector};
use clap::{Parser, Subcommand};

/// Online open-world continual learning with prototype rehearsal and
/// dual-level perturbations, on synthetic feature streams.
#[derive(Parser)]
#[command(name = "bsdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test stream files.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed and the OLOWOD_SEED variable.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the task protocol over a stream directory and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit every candidate family to a feature store dump.
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = bsdp::fitting::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = bsdp::dlp::DEFAULT_GROUP_SIZE)]
        group_size: usize,
        #[arg(long, default_value_t = bsdp::dlp::DEFAULT_MAX_GROUPS)]
        max_groups: usize,
    },
    /// Pick the exemplars nearest each category prototype in a stream file.
    Select {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute per-task reports from a predictions file.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed_flag: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    let env = std::env::var(io::SEED_ENV).ok();
    cfg.seed = io::resolve_seed(seed_flag, env.as_deref(), cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Feature dimension of the first record in a stream file.
fn sniff_dim(path: &Path) -> Result<Option<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let rec: StreamRecord =
        serde_json::from_str(first).with_context(|| format!("{}: line 1", path.display()))?;
    Ok(Some(rec.feature.len()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let files = io::generate_stream(&cfg, &out)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Run {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let schedule = cfg.schedule()?;
            let streams = io::load_stream_dir(&data, &schedule, cfg.feature_dim)?;
            let outcome = run_protocol(&cfg.protocol(), &schedule, &streams, cfg.feature_dim)?;
            io::write_run_reports(
                &out,
                &cfg,
                &outcome.reports,
                &outcome.predictions,
                Some(&outcome.state.ledger),
            )?;
            print!("{}", io::summary_csv(&outcome.reports));
        }
        Command::Fit {
            features,
            bins,
            out,
            group_size,
            max_groups,
        } => {
            let dump = io::load_store_dump(&features)?;
            let store = FeatureStore::from_dump(&dump, group_size, max_groups)?;
            let report = fit_all(&store.pooled_values()?, bins)?;
            io::write_json(&out, &report)?;
            if let Some(best) = report.best() {
                println!("best: {} (sse {})", best.family(), best.sse);
            }
        }
        Command::Select { stream, k, out } => {
            let selections: Vec<ExemplarSelection<String>> = match sniff_dim(&stream)? {
                None => Vec::new(),
                Some(dim) => {
                    let mut by_cat: BTreeMap<CategoryId, Vec<(String, FeatureVector)>> =
                        BTreeMap::new();
                    for r in io::load_stream(&stream, dim)? {
                        let f = r.to_sample()?.input();
                        by_cat
                            .entry(r.category_id)
                            .or_default()
                            .push((r.image_id, f));
                    }
                    by_cat
                        .iter()
                        .map(|(&c, feats)| {
                            let plain: Vec<FeatureVector> =
                                feats.iter().map(|(_, f)| f.clone()).collect();
                            let proto = compute_prototype(&plain)?;
                            select_exemplars(c, feats, &proto, k)
                        })
                        .collect::<bsdp::Result<_>>()?
                }
            };
            io::write_json(&out, &selections)?;
            println!("{} categories", selections.len());
        }
        Command::Metrics {
            config,
            predictions,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let schedule = cfg.schedule()?;
            let by_task = io::load_predictions(&predictions)?;
            let mut reports = Vec::new();
            for (t, records) in &by_task {
                reports.push(build_report(records, &schedule, *t)?);
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for r in &reports {
                io::write_json(&out.join(format!("task_{}.json", r.task_id)), r)?;
            }
            let csv = io::summary_csv(&reports);
            let path = out.join("summary.csv");
            fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
            if reports.is_empty() {
                bail!("{} holds no predictions", predictions.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
