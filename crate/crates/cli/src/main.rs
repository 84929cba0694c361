use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dsselab_cli::config::ExperimentConfig;
use dsselab_cli::runner::{aggregate, dump_groups, expand_grid, run_experiment, sweep, CsvSink};

/// Leakage laboratory for dynamic searchable encryption: simulate a
/// client under intermittent observation, infer search patterns,
/// recover queries, and score the attacks.
#[derive(Parser)]
#[command(name = "dsselab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write results.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Rayon worker threads (sweeps only use them across cells;
        /// a single run is sequential by design).
        #[arg(long)]
        workers: Option<usize>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump the inferred merged groups of repetition 0.
        #[arg(long)]
        dump_groups: bool,
    },
    /// Run the Cartesian product of a parameter grid over a base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a synthetic corpus in the ingestion format.
    Synth {
        /// TOML file holding the generator parameters.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for docs.jsonl and trends.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn init_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
            dump_groups: dump,
        } => {
            init_workers(workers)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            std::fs::create_dir_all(&out)?;
            let mut sink = CsvSink::create(&out.join("results.csv"))?;
            let mut write_err = None;
            let result = run_experiment(&cfg, |row| {
                log::info!(
                    "rep {} {}: ari {:.4} accuracy {:.4} ({})",
                    row.repetition,
                    row.attack,
                    row.ari,
                    row.accuracy,
                    row.status
                );
                if let Err(e) = sink.write(&row) {
                    write_err.get_or_insert(e);
                }
            });
            if let Some(e) = write_err {
                return Err(e);
            }
            if dump {
                dump_groups(&cfg, &out.join("groups.json"))?;
            }
            result?;
            Ok(())
        }
        Command::Sweep {
            config,
            grid,
            out,
            workers,
        } => {
            init_workers(workers)?;
            let base = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let grid_text = std::fs::read_to_string(&grid)
                .with_context(|| format!("reading {}", grid.display()))?;
            let cells = expand_grid(&base, &grid_text)?;
            log::info!("sweep: {} cells", cells.len());
            std::fs::create_dir_all(&out)?;
            let results = sweep(&cells);

            let mut raw = CsvSink::create(&out.join("results.csv"))?;
            let agg_file = std::fs::File::create(out.join("summary.csv"))?;
            let mut agg_writer = csv::Writer::from_writer(agg_file);
            agg_writer.write_record([
                "cell",
                "attack",
                "repetitions",
                "ari_mean",
                "ari_std",
                "accuracy_mean",
                "accuracy_std",
            ])?;
            let mut failed = false;
            for (label, rows, err) in &results {
                for row in rows {
                    raw.write(row)?;
                }
                for a in aggregate(label, rows) {
                    agg_writer.write_record([
                        a.cell.as_str(),
                        &a.attack,
                        &a.repetitions.to_string(),
                        &format!("{:.6}", a.ari_mean),
                        &format!("{:.6}", a.ari_std),
                        &format!("{:.6}", a.accuracy_mean),
                        &format!("{:.6}", a.accuracy_std),
                    ])?;
                }
                if let Some(e) = err {
                    log::error!("cell {label}: {e}");
                    failed = true;
                }
            }
            agg_writer.flush()?;
            if failed {
                anyhow::bail!("one or more sweep cells failed; partial results kept");
            }
            Ok(())
        }
        Command::Synth { spec, out, seed } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let mut synth: dsselab_core::corpus::SynthSpec =
                toml::from_str(&text).context("parsing generator spec")?;
            if let Some(s) = seed {
                synth.seed = s;
            }
            let split = dsselab_core::corpus::synthesize_corpus(&synth)?;
            std::fs::create_dir_all(&out)?;
            dsselab_core::corpus::write_corpus(
                &split,
                &out.join("docs.jsonl"),
                &out.join("trends.csv"),
            )?;
            log::info!(
                "wrote {} documents, {} keywords, {} trend days to {}",
                split.client_docs.len() + split.attacker_docs.len(),
                split.universe.len(),
                split.trends.days(),
                out.display()
            );
            Ok(())
        }
    }
}
