mod settings;

use std::fs::File;
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use qkd_core::analysis::{apriori_bias, qber_decompose, session_report, visibilities, write_report_csvs, TABLE3};
use qkd_core::model::DetectionEvent;
use qkd_core::netlink::{
    accept_one, apply_node_clicks, connect_with_retry, load_session_dir, node_stream, open_node_store,
    run_offline_streams, run_session, simulate_node_streams, write_node_outputs, SessionOutcome,
};
use qkd_core::sim::{generate_streams, write_truth_csv};
use qkd_core::{timetag, Role, SessionConfig};
use settings::ConfigArgs;

const ALICE_FILE: &str = "alice.ttag";
const BOB_FILE: &str = "bob.ttag";
const TRUTH_FILE: &str = "truth.csv";
const CONNECT_ATTEMPTS: u32 = 100;
const CONNECT_PAUSE: Duration = Duration::from_millis(100);

#[derive(Debug, Parser)]
#[command(name = "qkd", version, about = "Entangled-photon key distribution simulator and nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write simulated timetag files and the emission ground truth.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run one node of a key-distribution session, or both with --offline.
    Node {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        role: Option<Role>,
        /// Address to accept the peer on.
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        /// Address of the listening peer.
        #[arg(long)]
        connect: Option<String>,
        /// Run both nodes in this process over an in-memory link.
        #[arg(long, conflicts_with_all = ["listen", "connect", "role"])]
        offline: bool,
        /// Directory with alice.ttag and bob.ttag; simulated from the seed
        /// if absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Analyze the embedded two-link coincidence matrix.
    ReplayTable3,
    /// Join both nodes' logs into session figures.
    Report {
        /// Session directory containing alice/ and bob/.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the figure CSVs; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
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

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config } => simulate(&config.resolve()?),
        Command::Node { config, role, listen, connect, offline, input } => {
            let mut cfg = config.resolve()?;
            cfg.role = role.or(cfg.role);
            cfg.listen = listen.or(cfg.listen);
            cfg.connect = connect.or(cfg.connect);
            if offline {
                node_offline(&cfg, input.as_deref())
            } else {
                node_networked(&cfg, input.as_deref())
            }
        }
        Command::ReplayTable3 => replay_table3(),
        Command::Report { input, out } => report(&input, out.as_deref().unwrap_or(&input)),
    }
}

fn simulate(cfg: &SessionConfig) -> Result<()> {
    let sim = generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), cfg.duration, cfg.seed)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    timetag::write_file(&dir.join(ALICE_FILE), &sim.alice)?;
    timetag::write_file(&dir.join(BOB_FILE), &sim.bob)?;
    write_truth_csv(BufWriter::new(File::create(dir.join(TRUTH_FILE))?), &sim.truth)?;
    println!(
        "{} alice events, {} bob events, {} emitted pairs with a detection, written to {}",
        sim.alice.len(),
        sim.bob.len(),
        sim.truth.len(),
        dir.display()
    );
    Ok(())
}

/// One node's post-policy stream, from `input` or simulated from the seed.
fn load_stream(cfg: &SessionConfig, role: Role, input: Option<&Path>) -> Result<Vec<DetectionEvent>> {
    match input {
        Some(dir) => {
            let path = dir.join(match role {
                Role::Alice => ALICE_FILE,
                Role::Bob => BOB_FILE,
            });
            let raw = timetag::read_file(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(apply_node_clicks(cfg, role, &raw))
        }
        None => Ok(node_stream(cfg, role)?),
    }
}

fn node_offline(cfg: &SessionConfig, input: Option<&Path>) -> Result<()> {
    let (alice, bob) = match input {
        Some(_) => (load_stream(cfg, Role::Alice, input)?, load_stream(cfg, Role::Bob, input)?),
        None => simulate_node_streams(cfg)?,
    };
    let run = run_offline_streams(cfg, &alice, &bob, Some(&cfg.output_dir))?;
    println!("{}", run.report);
    println!("keys             {} epochs stored under {}", run.alice.keys.len(), cfg.output_dir.display());
    Ok(())
}

fn node_networked(cfg: &SessionConfig, input: Option<&Path>) -> Result<()> {
    let Some(role) = cfg.role else { bail!("--role is required unless --offline is given") };
    let events = load_stream(cfg, role, input)?;
    let store = open_node_store(&cfg.output_dir)?;
    let result = match (&cfg.listen, &cfg.connect) {
        (Some(addr), None) => {
            let listener = TcpListener::bind(addr.as_str()).with_context(|| format!("binding {addr}"))?;
            eprintln!("{role}: waiting for peer on {}", listener.local_addr()?);
            run_session(accept_one(&listener)?, cfg, role, &events, Some(&store))
        }
        (None, Some(addr)) => {
            let link = connect_with_retry(addr.as_str(), CONNECT_ATTEMPTS, CONNECT_PAUSE)
                .with_context(|| format!("connecting to {addr}"))?;
            run_session(link, cfg, role, &events, Some(&store))
        }
        _ => bail!("exactly one of --listen and --connect is required"),
    };
    match result {
        Ok(outcome) => {
            write_outputs(cfg, &outcome)?;
            Ok(())
        }
        Err(failure) => {
            write_outputs(cfg, &failure.partial)?;
            Err(failure.into())
        }
    }
}

/// Logs, node-local figures and a summary of this node's epochs.
fn write_outputs(cfg: &SessionConfig, outcome: &SessionOutcome) -> Result<()> {
    write_node_outputs(&cfg.output_dir, outcome, cfg.duration)?;
    if let Ok(report) = session_report(&outcome.epochs) {
        write_report_csvs(&cfg.output_dir, &outcome.epochs, &report)?;
        println!("{report}");
    }
    let ids: Vec<String> = outcome.keys.iter().map(|k| k.epoch_id.to_string()).collect();
    println!("keys             epochs [{}] stored under {}", ids.join(", "), cfg.output_dir.display());
    Ok(())
}

fn replay_table3() -> Result<()> {
    let q = qber_decompose(&TABLE3)?;
    let (vz, vx) = visibilities(&TABLE3)?;
    let bias = apriori_bias(&TABLE3)?;
    println!("raw              {} bits", TABLE3.total());
    println!("sifted           {} bits", q.sifted);
    println!("QBER total       {:.2}%", 100.0 * q.total);
    println!("QBER X           {:.2}%", 100.0 * q.x);
    println!("QBER Z           {:.2}%", 100.0 * q.z);
    println!("visibility Z     {:.1}%", 100.0 * vz);
    println!("visibility X     {:.1}%", 100.0 * vx);
    println!("p0               {:.4}", bias.p0);
    println!("extra shrink     {:.2}%", 100.0 * bias.extra_fraction);
    Ok(())
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let epochs = load_session_dir(input)?;
    let report = session_report(&epochs)?;
    write_report_csvs(out, &epochs, &report)?;
    println!("{report}");
    Ok(())
}
