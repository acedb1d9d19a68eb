use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use qonnect_core::api::SubmitRequest;
use qonnect_core::manifest::parse_bundle;
use qonnect_core::QosVector;
use qonnect_harness::bundle::{bookinfo, BOOKINFO_NAME};
use qonnect_harness::report::{parameter_table, render, EVENTS_FILE};
use qonnect_harness::scenario::PERFORMANCE;
use qonnect_harness::testbed::wait_for;
use qonnect_harness::{run_scenarios, HarnessError, Testbed, TestbedSpec, Verdict};

/// Drive the in-process QONNECT testbed.
#[derive(Parser)]
#[command(name = "qonnect", version)]
struct Cli {
    /// Testbed spec (YAML). Defaults to the nine-cluster layout.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Seed for elections and the simulated clusters.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports and event logs.
    #[arg(long, global = true, default_value = "qonnect-out")]
    out: PathBuf,
    /// Run on the wall clock instead of virtual time.
    #[arg(long, global = true)]
    realtime: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot the testbed and print the cluster registry.
    Up {
        /// Keep running this many seconds after boot.
        #[arg(long, default_value_t = 0)]
        hold: u64,
    },
    /// Submit a bundle (Bookinfo if omitted) and wait for placement.
    Submit { bundle: Option<PathBuf> },
    /// Deploy an application, then change its QoS weights.
    Qos {
        name: String,
        energy: f64,
        pricing: f64,
        performance: f64,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Deploy an application, then delete it.
    Delete {
        name: String,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Run evaluation scenarios back to back (all four if none given).
    Scenario {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        scenarios: Vec<u8>,
    },
    /// Print the report of an earlier scenario run from --out.
    Report,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Command::Report = cli.command {
        return report(&cli.out);
    }
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(!cli.realtime)
        .build()
        .expect("tokio runtime");
    match runtime.block_on(execute(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn report(out: &Path) -> ExitCode {
    match Verdict::load(out) {
        Ok(v) => {
            print!("{}", render(&v));
            if v.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

async fn execute(cli: Cli) -> Result<bool, HarnessError> {
    let mut spec = match &cli.spec {
        Some(path) => TestbedSpec::load(path)?,
        None => TestbedSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let seed = spec.seed;
    let tb = Testbed::boot(spec).await?;
    println!("testbed up after {:.1}s (seed {seed})", tb.elapsed().as_secs_f64());

    let ok = match cli.command {
        Command::Up { hold } => {
            print!("{}", parameter_table());
            print_registry(&tb);
            tokio::time::sleep(Duration::from_secs(hold)).await;
            true
        }
        Command::Submit { bundle } => {
            let text = match bundle {
                Some(path) => read(&path)?,
                None => bookinfo(BOOKINFO_NAME, PERFORMANCE)?,
            };
            let name = parse_bundle(&text).map_err(|e| HarnessError::Bundle(format!("{e:?}")))?.name;
            submit(&tb, text).await? && settle(&tb, &name).await
        }
        Command::Qos { name, energy, pricing, performance, bundle } => {
            let text = bundle_for(&name, bundle.as_deref())?;
            let mut ok = submit(&tb, text).await? && settle(&tb, &name).await;
            if ok {
                let ack = tb.control().update_qos(&name, QosVector::new(energy, pricing, performance)).await;
                println!("qos update: {ack:?}");
                ok = ack.is_ok() && settle(&tb, &name).await;
            }
            ok
        }
        Command::Delete { name, bundle } => {
            let text = bundle_for(&name, bundle.as_deref())?;
            let mut ok = submit(&tb, text).await? && settle(&tb, &name).await;
            if ok {
                let ack = tb.control().delete_application(&name).await;
                println!("delete: {ack:?}");
                let gone = wait_for(tb.spec.deadlines.migration, || tb.clusters.iter().all(|c| !c.has_namespace(&name))).await;
                println!("namespaces removed: {}", gone.map_or("no".into(), |d| format!("after {:.1}s", d.as_secs_f64())));
                ok = ack.is_ok() && gone.is_some();
            }
            ok
        }
        Command::Scenario { scenarios } => {
            let scenarios = if scenarios.is_empty() { vec![1, 2, 3, 4] } else { scenarios };
            let verdict = Verdict::new(seed, run_scenarios(&tb, &scenarios).await);
            verdict.write(&cli.out, &tb.events)?;
            print!("{}", render(&verdict));
            println!("\nreport written to {}", cli.out.display());
            return Ok(verdict.passed);
        }
        Command::Report => unreachable!("handled before boot"),
    };
    write_events(&tb, &cli.out)?;
    Ok(ok)
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn bundle_for(name: &str, path: Option<&Path>) -> Result<String, HarnessError> {
    match path {
        Some(p) => read(p),
        None => bookinfo(name, PERFORMANCE),
    }
}

async fn submit(tb: &Testbed, bundle: String) -> Result<bool, HarnessError> {
    let ack = tb.control().submit(SubmitRequest { bundle }).await;
    println!("submit: {ack:?}");
    Ok(ack.is_ok())
}

/// Waits until every component of `name` is placed and running, then
/// prints the placements.
async fn settle(tb: &Testbed, name: &str) -> bool {
    let done = wait_for(tb.spec.deadlines.migration, || {
        let placements = tb.placements(name);
        !placements.is_empty()
            && placements.iter().all(|p| {
                p.status.is_placed() && p.cluster_id.and_then(|id| tb.cluster_by_id(id)).is_some_and(|c| c.runs(name, &p.component))
            })
    })
    .await;
    for p in tb.placements(name) {
        println!("  {:<14} {:<6} {:<20} {:?} {:?}", p.component, p.domain.as_str(), p.cluster.unwrap_or_default(), p.status, p.nodes);
    }
    match done {
        Some(d) => println!("{name} settled after {:.1}s", d.as_secs_f64()),
        None => println!("{name} did not settle within {:?}", tb.spec.deadlines.migration),
    }
    done.is_some()
}

fn print_registry(tb: &Testbed) {
    if let Some(l) = tb.leader() {
        println!("leader: rla-{} (term {})", l.id(), l.status_view().term);
    }
    tb.kb(|kb| {
        for c in &tb.clusters {
            println!("  {:<20} {} {:<12} nodes={}", c.name(), c.id, c.spec.ingress_ip, kb.nodes(c.id).len());
        }
    });
}

fn write_events(tb: &Testbed, out: &Path) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(io)?;
    let file = std::fs::File::create(out.join(EVENTS_FILE)).map_err(io)?;
    tb.events.write_jsonl(std::io::BufWriter::new(file)).map_err(io)
}
