//! `flowlattice`: build, update, simulate, benchmark and verify minimal
//! counter assignments from the command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error.

mod commands;
mod state;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use flowlattice::lattice::Removal;
use flowlattice::CounterMode;

use commands::Outcome;

#[derive(Parser)]
#[command(name = "flowlattice", version, about = "Minimal counter assignment for flow-table traffic measurement")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StateArg {
    /// State directory.
    #[arg(long, env = "FLOWLAT_STATE")]
    state: PathBuf,
}

#[derive(Args)]
struct SpecArgs {
    /// Bench spec JSON; the bundled twelve-field spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of flows to draw; overrides the spec.
    #[arg(long)]
    flows: Option<usize>,
    /// RNG seed; overrides the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build lattice, support and counters from a context and a query file.
    Build {
        /// Context as CSV (flow column plus one 0/1 column per matchfield) or JSON.
        #[arg(long)]
        context: PathBuf,
        /// Query JSON: `[{"label": "q1", "matchfields": [...]}, ...]`.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[command(flatten)]
        state: StateArg,
        #[arg(long, default_value = "minimal")]
        mode: CounterMode,
        /// Also reject flows nested in (or containing) an installed flow.
        #[arg(long)]
        reject_nested: bool,
        /// Start a new epoch even if the directory already holds a state.
        #[arg(long)]
        force: bool,
    },
    /// Insert flows incrementally and report what changed.
    AddFlow {
        #[command(flatten)]
        state: StateArg,
        /// Name of the new flow; used with --match.
        #[arg(long)]
        name: Option<String>,
        /// Matchfield label of the new flow; repeat for each value.
        #[arg(long = "match", value_name = "LABEL")]
        matches: Vec<String>,
        /// JSON array of `{"name": ..., "matchfields": [...]}` added in order.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Recompute from scratch and compare before writing.
        #[arg(long)]
        verify: bool,
    },
    /// Remove a flow and rebuild.
    RemoveFlow {
        #[command(flatten)]
        state: StateArg,
        /// Flow to remove.
        #[arg(long)]
        name: String,
    },
    /// Remove a query and rebuild the support.
    RemoveQuery {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        label: String,
    },
    /// Run a packet event stream (`tick,flow_name,bytes` lines) through the counters.
    Simulate {
        #[command(flatten)]
        state: StateArg,
        /// Event file, or `-` for stdin.
        #[arg(long)]
        events: PathBuf,
        /// Counter mode; defaults to the one stored in the state.
        #[arg(long)]
        mode: Option<CounterMode>,
        /// Per-query CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Epoch summary JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Start from the stored counter values instead of zero.
        #[arg(long)]
        resume: bool,
        /// Store the resulting counter values as a new epoch (implies --resume).
        #[arg(long)]
        record: bool,
    },
    /// Counter counts over generated tables for a sweep of query settings.
    Bench {
        #[command(flatten)]
        spec: SpecArgs,
        /// Query set sizes, e.g. `50,100,200`.
        #[arg(long)]
        queries: Option<String>,
        /// Wildcard probabilities, e.g. `wildcard_pct=0.1,0.5,0.9`.
        #[arg(long)]
        sweep: Option<String>,
        /// Seeds as `1,2,3` or `1..10`; overrides --seed.
        #[arg(long)]
        seeds: Option<String>,
        /// Trend CSV `N_Q,wildcard_pct,N_c,|F|,seed`; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `wildcard_pct,num_queries,num_flows,num_counters`.
        #[arg(long)]
        sweep_out: Option<PathBuf>,
    },
    /// Generate a context and a query file from a bench spec.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        /// Number of queries; overrides the spec.
        #[arg(long)]
        queries: Option<usize>,
        /// Wildcard probability; overrides the spec.
        #[arg(long)]
        pct: Option<f64>,
        /// Directory for context.json, queries.json and spec.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check the stored state against the brute-force oracle.
    Verify {
        #[command(flatten)]
        state: StateArg,
        /// Epoch to check; the current one when omitted.
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Print the current state summary and partition.
    Show {
        #[command(flatten)]
        state: StateArg,
    },
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.cmd {
        Cmd::Build {
            context,
            queries,
            state,
            mode,
            reject_nested,
            force,
        } => commands::build(commands::BuildArgs {
            context: &context,
            queries: queries.as_deref(),
            state: &state.state,
            mode,
            reject_nested,
            force,
        }),
        Cmd::AddFlow {
            state,
            name,
            matches,
            batch,
            verify,
        } => commands::add_flow(commands::AddFlowArgs {
            state: &state.state,
            name: name.as_deref(),
            matches: &matches,
            batch: batch.as_deref(),
            verify,
        }),
        Cmd::RemoveFlow { state, name } => commands::remove(&state.state, Removal::Flow(name)),
        Cmd::RemoveQuery { state, label } => commands::remove(&state.state, Removal::Query(label)),
        Cmd::Simulate {
            state,
            events,
            mode,
            out,
            summary,
            resume,
            record,
        } => commands::simulate(commands::SimulateArgs {
            state: &state.state,
            events: &events,
            mode,
            out: out.as_deref(),
            summary: summary.as_deref(),
            resume,
            record,
        }),
        Cmd::Bench {
            spec,
            queries,
            sweep,
            seeds,
            out,
            sweep_out,
        } => commands::bench(commands::BenchArgs {
            spec: commands::SpecOverrides {
                spec: spec.spec,
                flows: spec.flows,
                queries: None,
                pct: None,
                seed: spec.seed,
            },
            query_counts: queries.as_deref().map(commands::parse_counts).transpose()?,
            sweep: sweep.as_deref().map(commands::parse_sweep).transpose()?,
            seeds: seeds.as_deref().map(commands::parse_seeds).transpose()?,
            out: out.as_deref(),
            sweep_out: sweep_out.as_deref(),
        }),
        Cmd::Gen { spec, queries, pct, out } => commands::gen(
            &commands::SpecOverrides {
                spec: spec.spec,
                flows: spec.flows,
                queries,
                pct,
                seed: spec.seed,
            },
            &out,
        ),
        Cmd::Verify { state, epoch } => commands::verify(&state.state, epoch),
        Cmd::Show { state } => commands::show(&state.state),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
