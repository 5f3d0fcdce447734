use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use cellfree_core::agents::{GrammarBackend, IntentBackend, RemoteBackend};
use cellfree_core::qlora::{accounting_table, render_table, AccountingConfig, LayerManifest};
use cellfree_runtime::record::{write_summaries, RunRecord};
use cellfree_runtime::service::serve;
use cellfree_runtime::transport::HttpTransport;
use cellfree_runtime::{export_metrics, load_policy, run_scenario, train_policy, Mode, Scenario, Simulation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Intent-driven cell-free O-RAN digital twin")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Activation policy; defaults to the scenario's checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the O-RU activation policy and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run one mode over the scenario timeline.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Proposed)]
        mode: Mode,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every mode and write a side-by-side summary.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Drive the loop live behind the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Proposed)]
        mode: Mode,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 1000)]
        period_ms: u64,
        /// Stop after this many loops.
        #[arg(long)]
        loops: Option<u64>,
        /// Completion endpoint for intent translation; the grammar is used
        /// when unset or when it fails.
        #[arg(long)]
        remote_url: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        remote_timeout_ms: u64,
    },
    /// Print the adapter memory table.
    Accounting {
        /// Layer manifest (JSON); the bundled one by default.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        block_size: usize,
        #[arg(long)]
        include_block_scales: bool,
    },
}

fn load(common: &Common) -> Result<Scenario> {
    let mut sc = Scenario::load(&common.scenario).with_context(|| format!("loading {}", common.scenario.display()))?;
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn policy_for(sc: &Scenario, common: &Common, mode: Mode) -> Result<Option<cellfree_core::Mappo>> {
    if !mode.uses_policy() || !sc.needs_policy()? {
        return Ok(None);
    }
    Ok(load_policy(sc, common.checkpoint.as_deref())?)
}

fn run_one(sc: &Scenario, common: &Common, mode: Mode, out: &Path) -> Result<RunRecord> {
    let record = run_scenario(sc, mode, policy_for(sc, common, mode)?)?;
    std::fs::create_dir_all(out)?;
    record.save_json(out.join(format!("{mode}_run.json")))?;
    let files = export_metrics(&record, sc.agents.viol_tol_mbps, out)?;
    println!("{mode}: {} loops -> {}", record.len(), files.series.display());
    Ok(record)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Train { common, episodes } => {
            let sc = load(&common)?;
            let path = common
                .checkpoint
                .clone()
                .or_else(|| sc.checkpoint.clone())
                .context("no checkpoint path: pass --checkpoint or set `checkpoint` in the scenario")?;
            let episodes = episodes.unwrap_or(sc.training.episodes);
            let (policy, stats) = train_policy(&sc, episodes, |s| {
                if s.iteration % 100 == 0 {
                    tracing::info!(iteration = s.iteration, reward = s.mean_reward, active = s.active_fraction, "training");
                }
            })?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            policy.save(&path)?;
            let last = stats.last().map_or(0.0, |s| s.mean_reward);
            println!("trained {episodes} episodes, final reward {last:.4}, saved {}", path.display());
        }
        Cmd::Run { common, mode, out } => {
            let sc = load(&common)?;
            let rec = run_one(&sc, &common, mode, &out)?;
            let s = rec.summary(sc.agents.viol_tol_mbps);
            println!(
                "final active {}/{} ({:.0}%), violated users {:?}",
                s.final_active,
                sc.network.num_orus,
                100.0 * s.final_active_fraction,
                s.final_violated_users
            );
        }
        Cmd::Compare { common, out } => {
            let sc = load(&common)?;
            let mut rows = Vec::new();
            for mode in Mode::ALL {
                rows.push(run_one(&sc, &common, mode, &out)?.summary(sc.agents.viol_tol_mbps));
            }
            let path = out.join("comparison.csv");
            write_summaries(&rows, std::fs::File::create(&path)?)?;
            for r in &rows {
                println!(
                    "{:<10} active {:>3} ({:>5.1}%) violated {:?}",
                    r.mode.to_string(),
                    r.final_active,
                    100.0 * r.final_active_fraction,
                    r.final_violated_users
                );
            }
            println!("wrote {}", path.display());
        }
        Cmd::Serve { common, mode, addr, period_ms, loops, remote_url, remote_timeout_ms } => {
            let sc = load(&common)?;
            let sim = Simulation::new(&sc, mode, policy_for(&sc, &common, mode)?)?;
            let n = &sc.network;
            let record = RunRecord::new(&sc.name, &sc.hash(), mode, n.num_users, n.num_orus);
            let backend: Arc<dyn IntentBackend> = match remote_url {
                Some(url) => {
                    Arc::new(RemoteBackend::new(HttpTransport::new(url)?, Duration::from_millis(remote_timeout_ms)))
                }
                None => Arc::new(GrammarBackend),
            };
            let (router, mut driver) = serve(sim, record, backend);
            let period = Duration::from_millis(period_ms);
            std::thread::spawn(move || {
                if let Err(e) = driver.run(loops, period) {
                    tracing::error!(error = %e, "loop driver stopped");
                }
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                tracing::info!(%addr, %mode, "serving");
                axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Cmd::Accounting { manifest, block_size, include_block_scales } => {
            let manifest = match manifest {
                Some(p) => LayerManifest::load(p)?,
                None => LayerManifest::bundled(),
            };
            let rows = accounting_table(&manifest, &AccountingConfig { block_size, include_block_scales })?;
            print!("{}", render_table(&rows));
        }
    }
    Ok(())
}
