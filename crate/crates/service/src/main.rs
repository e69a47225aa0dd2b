use std::io::{self, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ircopilot_bench::{load_suite, load_task, ScriptedExecutor, TrialSettings};
use ircopilot_core::engine::{AblationToggles, SessionSetup, Step};
use ircopilot_core::irt::OsTag;
use ircopilot_core::privacy::Redactor;
use ircopilot_core::provider::{PriceTable, ProviderKind};
use ircopilot_core::session::Role;
use ircopilot_service::api::{self, AppState};
use ircopilot_service::cli::{bench_run, run_interactive, run_scripted, setup_for_task, BenchProvider};
use ircopilot_service::providers::ProviderSpec;
use ircopilot_service::{render, Services, SessionHandle, Store};

#[derive(Parser)]
#[command(name = "ircopilot", version, about = "Incident response copilot")]
struct Cli {
    /// Session data directory.
    #[arg(long, global = true, default_value = "data", env = "IRC_DATA_DIR")]
    data: PathBuf,
    /// Price table overriding the built-in one.
    #[arg(long, global = true)]
    prices: Option<PathBuf>,
    /// Redaction rules replacing the defaults.
    #[arg(long, global = true)]
    redaction: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a session and drive it from this terminal.
    Start(StartArgs),
    /// Benchmark harness.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Fold a stored event log and print the reconstructed state.
    Replay { session: String },
    /// Cost and time of a stored session.
    Report { session: String },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct StartArgs {
    #[arg(long, default_value = "linux")]
    os: OsTag,
    #[arg(long, default_value = "mock", env = "IRC_PROVIDER")]
    provider: ProviderKind,
    #[arg(long, env = "IRC_MODEL")]
    model: Option<String>,
    /// Mock provider script (JSON).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Incident goal; required unless --task is given.
    #[arg(long)]
    goal: Option<String>,
    #[arg(long, default_value = "")]
    system_info: String,
    /// Benchmark task document supplying goal, OS and system info.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Answer execution requests from the task's canned outputs.
    #[arg(long, requires = "task")]
    auto: bool,
    #[arg(long)]
    session: Option<String>,
    /// Continue a stored session instead of creating one.
    #[arg(long, requires = "session")]
    resume: bool,
    /// Disable a role (repeatable): planner, generator, reflector, analyst.
    #[arg(long = "without")]
    without: Vec<Role>,
}

#[derive(Subcommand)]
enum BenchCommand {
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "mock")]
        provider: ProviderKind,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 5)]
        trials: u32,
        #[arg(long, default_value = "ircopilot")]
        method: String,
        #[arg(long = "without")]
        without: Vec<Role>,
        /// Write report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Persist every trial's event log under the data directory.
        #[arg(long)]
        keep_events: bool,
    },
}

fn toggles(without: &[Role]) -> AblationToggles {
    let mut t = AblationToggles::default();
    for role in without {
        match role {
            Role::Planner => t.planner_enabled = false,
            Role::Generator => t.generator_enabled = false,
            Role::Reflector => t.reflector_enabled = false,
            Role::Analyst => t.analyst_enabled = false,
        }
    }
    t
}

fn services(cli: &Cli) -> anyhow::Result<Services> {
    let mut s = Services::default();
    if let Some(path) = &cli.prices {
        s.prices = PriceTable::load(path).with_context(|| format!("loading {}", path.display()))?;
    }
    if let Some(path) = &cli.redaction {
        s.redactor = Arc::new(Redactor::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    Ok(s)
}

fn provider_spec(kind: ProviderKind, model: Option<&str>, script: Option<&PathBuf>) -> anyhow::Result<ProviderSpec> {
    Ok(match kind {
        ProviderKind::Mock => {
            let path = script.context("the mock provider needs --scenario <script.json>")?;
            ProviderSpec::mock_file(path)?
        }
        other => ProviderSpec::live(other, model)?,
    })
}

fn start(cli: &Cli, args: &StartArgs) -> anyhow::Result<()> {
    let store = Store::open(&cli.data)?;
    let services = Arc::new(services(cli)?);
    let spec = provider_spec(args.provider, args.model.as_deref(), args.scenario.as_ref())?;
    let task = args.task.as_deref().map(load_task).transpose()?;
    let handle = if args.resume {
        SessionHandle::resume(&store, args.session.as_deref().expect("clap requires --session"), &spec, services)?
    } else {
        let id = args.session.clone().unwrap_or_else(|| format!("s{}", chrono::Utc::now().format("%Y%m%d%H%M%S")));
        let mut setup = match (&task, &args.goal) {
            (_, Some(goal)) => {
                let mut s = SessionSetup::new(&id, goal, args.os);
                s.system_info = args.system_info.clone();
                s
            }
            (Some(task), None) => setup_for_task(&id, task),
            (None, None) => bail!("give --goal or --task"),
        };
        setup.toggles = toggles(&args.without);
        SessionHandle::start(&store, setup, &spec, services)?
    };
    eprintln!("session {}", handle.id());
    let step = match (&task, args.auto) {
        (Some(task), true) => run_scripted(&handle, &mut ScriptedExecutor::new(task.scenario.clone()))?,
        _ => run_interactive(&handle, &mut BufReader::new(io::stdin()), &mut io::stdout())?,
    };
    let view = handle.view();
    if let Some(state) = &view.state {
        print!("{}", render::summary(state));
    }
    match (step, view.last_error) {
        (Step::Done | Step::AwaitExecution | Step::AwaitUser, _) => Ok(()),
        (_, Some(err)) => bail!("session stopped at {step}: {err}"),
        _ => Ok(()),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Start(args) => start(&cli, args),
        Command::Bench { command: BenchCommand::Run { suite, provider, model, trials, method, without, out, keep_events } } => {
            let suite = load_suite(suite)?;
            let services = services(&cli)?;
            let settings = TrialSettings {
                method: method.clone(),
                toggles: toggles(without),
                prices: services.prices.clone(),
                redactor: services.redactor.clone(),
                ..TrialSettings::default()
            };
            let provider = match provider {
                ProviderKind::Mock => BenchProvider::SuiteFixtures,
                other => BenchProvider::Live(ProviderSpec::live(*other, model.as_deref())?),
            };
            let store = keep_events.then(|| Store::open(&cli.data)).transpose()?;
            let (report, _) = bench_run(&suite, &provider, *trials, &settings, store.as_ref())?;
            print!("{}", report.render_text());
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("report.json");
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Replay { session } => {
            let store = Store::open(&cli.data)?;
            let events = store.load_events(session)?;
            let state = store.replay_session(session)?;
            println!("{} events folded", events.len());
            print!("{}", render::summary(&state));
            println!("{}", render::irt_text(&state));
            if state.irt.revision > 0 {
                let snapshot = store.irt_revision(session, state.irt.revision)?;
                if snapshot != state.irt {
                    bail!("irt/{}.json differs from the folded tree", state.irt.revision);
                }
                println!("irt/{}.json matches the folded tree", state.irt.revision);
            }
            Ok(())
        }
        Command::Report { session } => {
            let store = Store::open(&cli.data)?;
            let manifest = store.manifest(session)?;
            let state = store.replay_session(session)?;
            println!("status {:?}, provider {}", manifest.status, manifest.provider);
            print!("{}", render::summary(&state));
            let audit = store.audit(session)?;
            let hits: usize = audit.iter().flat_map(|a| a.hits.iter()).map(|h| h.count).sum();
            println!("redaction: {hits} hit(s) over {} result(s)", audit.len());
            Ok(())
        }
        Command::Serve { addr } => {
            let store = Store::open(&cli.data)?;
            let state = AppState::new(store, Arc::new(services(&cli)?));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(api::serve(*addr, state))
        }
    }
}
