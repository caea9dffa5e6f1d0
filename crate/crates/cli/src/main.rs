use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use latmorse_core::io::{save_trajectories, trajectories_to_json};
use latmorse_core::pipeline::{Analysis, MORSE_FILE, ROA_FILE};
use latmorse_core::{
    graph_stats, synth_dataset, AnalyticSystem, MorseGraph, RoaAssignment, RoaEntry, Split,
};

#[derive(Parser)]
#[command(
    name = "latmorse",
    version,
    about = "Morse graph analysis of latent dynamics"
)]
struct Cli {
    /// Worker threads for graph construction (default: all cores).
    #[arg(long, global = true, env = "LATMORSE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and print the summary table.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the transition graph (graph.json).
    BuildGraph {
        #[arg(long)]
        config: PathBuf,
    },
    /// Condense a cached graph into the Morse graph (morse.json, morse.dot).
    Morse {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute regions of attraction from cached artifacts (roa.json, roa.csv).
    Roa {
        #[arg(long)]
        config: PathBuf,
    },
    /// Label attractors and score the validation set (report.json).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print statistics of the cached artifacts.
    Stats {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a labelled trajectory dataset from a built-in system.
    Synth {
        #[arg(long)]
        system: String,
        #[arg(long)]
        trajectories: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Dimension, for systems that take one.
        #[arg(long)]
        dim: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn analysis(config: &Path, workers: Option<usize>) -> Result<Analysis> {
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    Ok(Analysis::from_file(config)
        .with_context(|| format!("loading config {}", config.display()))?
        .with_workers(workers))
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Analyze { config } => {
            let a = analysis(&config, workers)?;
            let out = a.analyze()?;
            eprintln!(
                "{} cells, {} edges, {} Morse nodes, {} attractors",
                out.stats.nodes,
                out.stats.edges,
                out.morse.nodes.len(),
                out.morse.attractor_count()
            );
            print!("{}", out.report.table());
        }
        Command::BuildGraph { config } => {
            let a = analysis(&config, workers)?;
            let (graph, t) = a.build_graph()?;
            let s = graph_stats(&graph);
            println!(
                "graph: {} cells ({} data), {} edges, delta {:.6}",
                s.nodes, s.data_cells, s.edges, graph.meta.delta
            );
            a.write_run_meta(&[t])?;
        }
        Command::Morse { config } => {
            let a = analysis(&config, workers)?;
            let (graph, gd) = a.load_graph()?;
            let (morse, t) = a.morse(&graph, &gd)?;
            println!(
                "morse: {} nodes, {} edges, {} attractors",
                morse.nodes.len(),
                morse.edges.len(),
                morse.attractor_count()
            );
            a.write_run_meta(&[t])?;
        }
        Command::Roa { config } => {
            let a = analysis(&config, workers)?;
            let (graph, gd) = a.load_graph()?;
            let (morse, md) = a.load_morse(&gd)?;
            let (roa, t) = a.roa(&graph, &morse, &md)?;
            print_roa_counts(&roa, &morse);
            a.write_run_meta(&[t])?;
        }
        Command::Evaluate { config } => {
            let a = analysis(&config, workers)?;
            let (graph, gd) = a.load_graph()?;
            let (morse, md) = a.load_morse(&gd)?;
            let (roa, rd) = a.load_roa(&md)?;
            let (report, _, t) = a.evaluate(&graph, &morse, &roa, &rd)?;
            print!("{}", report.table());
            a.write_run_meta(&[t])?;
        }
        Command::Stats { config } => {
            let a = analysis(&config, workers)?;
            let (graph, gd) = a.load_graph()?;
            let s = graph_stats(&graph);
            println!("grid            {:?}", graph.grid().subdivisions());
            println!("cells           {} ({} data)", s.nodes, s.data_cells);
            println!("edges           {}", s.edges);
            println!("exit cells      {}", s.exit_cells);
            println!("max out-degree  {}", s.max_out_degree);
            println!("escaped         {:.4}", s.escaped_fraction);
            println!("delta           {:.6}", graph.meta.delta);
            if let Some(l) = graph.meta.lipschitz {
                println!("lipschitz       {l:.6}");
            }
            if a.artifact(MORSE_FILE).exists() {
                let (morse, md) = a.load_morse(&gd)?;
                println!(
                    "morse nodes     {} ({} attractors)",
                    morse.nodes.len(),
                    morse.attractor_count()
                );
                if a.artifact(ROA_FILE).exists() {
                    let (roa, _) = a.load_roa(&md)?;
                    print_roa_counts(&roa, &morse);
                }
            }
        }
        Command::Synth {
            system,
            trajectories,
            steps,
            seed,
            split,
            dim,
            out,
        } => {
            let sys = AnalyticSystem::by_name(&system, dim)
                .with_context(|| format!("unknown system `{system}`"))?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Validation => Split::Validation,
            };
            let ds = synth_dataset(&sys, trajectories, steps, seed, split)?;
            match out {
                Some(path) => save_trajectories(&ds, &path)?,
                None => println!("{}", trajectories_to_json(&ds)),
            }
        }
    }
    Ok(())
}

fn print_roa_counts(roa: &RoaAssignment, morse: &MorseGraph) {
    for a in morse.attractors() {
        println!("attractor {:<4} {} cells", a.id, roa.region(a.id).len());
    }
    println!("ambiguous      {}", roa.count(RoaEntry::Ambiguous));
    println!("unreachable    {}", roa.count(RoaEntry::Unreachable));
}
