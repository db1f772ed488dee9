use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nlbox::behavior::{self, Behavior, Side};
use nlbox::client::{self, AdminClient, BoxBackend, HttpBoxClient};
use nlbox::entropy::{EntropySource, SeededEntropy, SystemEntropy};
use nlbox::game::{self, Strategy, TransactionIdScheme, VerifyReport};
use nlbox::locality;
use nlbox::sampling::{Engine, FirstMover};
use nlbox::service::{self, LocalDeployment};
use nlbox::store::{Store, StoreConfig, SyncMode};

#[derive(Parser)]
#[command(name = "nlbox", version, about = "No-signaling box server and CHSH game harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Replay the four-call demonstration session against a server.
    DemoSession(DemoArgs),
    /// Play CHSH rounds and report the average payoff.
    Play(PlayArgs),
    /// Compare sampled transactions with the behavior they should follow.
    Verify(VerifyArgs),
    /// Administration: users and boxes.
    Admin(AdminArgs),
    /// Inspect behaviors.
    Behavior {
        #[command(subcommand)]
        command: BehaviorCommand,
    },
    /// Send one useBox request and print the raw reply.
    Use(UseArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "NLBOX_BIND", default_value = service::DEFAULT_BIND)]
    bind: SocketAddr,
    #[arg(long, env = "NLBOX_STORE", default_value = service::DEFAULT_STORE_DIR)]
    store: PathBuf,
    /// Credential for the admin endpoints; they are disabled without one.
    #[arg(long, env = "NLBOX_ADMIN_KEY", hide_env_values = true)]
    admin_key: Option<String>,
    #[arg(long, env = "NLBOX_LOCK_TIMEOUT_MS", default_value_t = 5000)]
    lock_timeout_ms: u64,
    /// `normal` or `full`.
    #[arg(long, env = "NLBOX_SYNC", default_value = "normal")]
    sync: SyncMode,
    /// Directory served under /ui.
    #[arg(long, env = "NLBOX_UI_DIR", default_value = service::DEFAULT_UI_DIR)]
    ui_dir: PathBuf,
    /// Deterministic entropy for demonstrations. Never use in production.
    #[arg(long)]
    insecure_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Remote {
    #[arg(long, env = "NLBOX_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long, env = "NLBOX_ALICE_KEY", hide_env_values = true)]
    alice_key: Option<String>,
    #[arg(long, env = "NLBOX_BOB_KEY", hide_env_values = true)]
    bob_key: Option<String>,
    #[arg(long = "box", env = "NLBOX_BOX")]
    box_id: Option<i64>,
}

impl Remote {
    fn clients(&self) -> Result<(HttpBoxClient, HttpBoxClient)> {
        let (Some(ak), Some(bk), Some(id)) = (&self.alice_key, &self.bob_key, self.box_id) else {
            bail!("--alice-key, --bob-key and --box are required unless --local is given");
        };
        Ok((
            HttpBoxClient::new(&self.server, ak, id, Side::Alice)?,
            HttpBoxClient::new(&self.server, bk, id, Side::Bob)?,
        ))
    }
}

#[derive(Args, Clone)]
struct BehaviorChoice {
    /// Built-in behavior: pr, uniform, tsirelson, isotropic:<v>, deterministic:<fa>,<fb>.
    #[arg(long, default_value = "pr")]
    behavior: String,
    /// Behavior document (JSON); overrides --behavior.
    #[arg(long)]
    behavior_file: Option<PathBuf>,
}

impl BehaviorChoice {
    fn load(&self) -> Result<Behavior> {
        load_behavior(&self.behavior, self.behavior_file.as_deref())
    }
}

fn load_behavior(name: &str, file: Option<&Path>) -> Result<Behavior> {
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Behavior::from_json(&text).with_context(|| format!("invalid behavior file {}", path.display()))
        }
        None => Ok(behavior::builtin(name)?),
    }
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    remote: Remote,
    /// Start a private in-memory server with a fresh box instead.
    #[arg(long)]
    local: bool,
    /// Behavior of the --local box.
    #[arg(long, default_value = "pr")]
    behavior: String,
    /// Server entropy seed for --local.
    #[arg(long)]
    seed: Option<u64>,
    /// Transaction id prefix; defaults to today's UTC date.
    #[arg(long)]
    id_prefix: Option<String>,
    #[arg(long, default_value_t = 1)]
    first_id: u64,
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    remote: Remote,
    #[command(flatten)]
    behavior: BehaviorChoice,
    #[arg(long, default_value = "boxed")]
    strategy: Strategy,
    #[arg(long, default_value_t = 1000)]
    rounds: usize,
    /// Seed for the players' inputs (and the server entropy with --local).
    #[arg(long)]
    seed: Option<u64>,
    /// Play against a private in-memory server for --behavior.
    #[arg(long)]
    local: bool,
    /// Transaction id prefix; defaults to the UTC date and time.
    #[arg(long)]
    id_prefix: Option<String>,
    /// Write one JSON record per round.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    remote: Remote,
    /// The behavior the box is expected to follow.
    #[command(flatten)]
    behavior: BehaviorChoice,
    #[arg(long, default_value_t = 10_000)]
    rounds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    local: bool,
    /// Concurrent request workers.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    #[arg(long)]
    id_prefix: Option<String>,
    #[arg(long, default_value_t = game::DEFAULT_FIDELITY_TOL)]
    fidelity_tol: f64,
    #[arg(long, default_value_t = game::DEFAULT_STRATA_TOL)]
    strata_tol: f64,
    /// Write one JSON record per transaction.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct AdminArgs {
    #[arg(long, env = "NLBOX_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long, env = "NLBOX_ADMIN_KEY", hide_env_values = true)]
    admin_key: Option<String>,
    #[command(subcommand)]
    command: AdminCommand,
}

#[derive(Subcommand)]
enum AdminCommand {
    /// Create a user and print its API key.
    CreateUser { display_name: String },
    /// Create two users and a box pairing them; prints the box id and both keys.
    CreateBox {
        /// Built-in behavior name (ignored with --behavior-file).
        behavior: String,
        alice: String,
        bob: String,
        #[arg(long)]
        behavior_file: Option<PathBuf>,
    },
    /// List boxes with their users.
    List,
    /// Revoke a user's API key.
    Revoke { user_id: i64 },
    /// Write all transactions of a stopped server's store as JSON lines.
    Export {
        #[arg(long, env = "NLBOX_STORE", default_value = service::DEFAULT_STORE_DIR)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BehaviorCommand {
    /// Validate a behavior and print its no-signaling, locality and CHSH figures.
    Check {
        #[arg(default_value = "pr")]
        name: String,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Print a behavior document.
    Show {
        #[arg(default_value = "pr")]
        name: String,
    },
}

#[derive(Args)]
struct UseArgs {
    #[arg(long, env = "NLBOX_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long, env = "NLBOX_API_KEY", hide_env_values = true)]
    api_key: String,
    #[arg(long = "box")]
    box_id: i64,
    #[arg(long)]
    transaction: String,
    #[arg(short, long, conflicts_with = "y", required_unless_present = "y")]
    x: Option<usize>,
    #[arg(short, long)]
    y: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Serve(a) => serve(a).map(|()| true),
        Command::DemoSession(a) => demo(a),
        Command::Play(a) => play(a),
        Command::Verify(a) => verify(a),
        Command::Admin(a) => admin(a).map(|()| true),
        Command::Behavior { command } => behavior_cmd(command),
        Command::Use(a) => {
            let (side, input) = match (a.x, a.y) {
                (Some(x), None) => (Side::Alice, x),
                (None, Some(y)) => (Side::Bob, y),
                _ => bail!("give exactly one of -x and -y"),
            };
            let c = HttpBoxClient::new(&a.server, &a.api_key, a.box_id, side)?;
            println!("{}", c.use_box_raw(&a.transaction, input)?);
            Ok(true)
        }
    }
}

fn entropy(seed: Option<u64>) -> Box<dyn EntropySource> {
    match seed {
        Some(s) => Box::new(SeededEntropy::new(s)),
        None => Box::new(SystemEntropy::new()),
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = StoreConfig {
        lock_timeout: Duration::from_millis(a.lock_timeout_ms),
        sync: a.sync,
    };
    let store =
        Arc::new(Store::open(&a.store, config).with_context(|| format!("opening store {}", a.store.display()))?);
    if a.insecure_seed.is_some() {
        tracing::warn!("serving with seeded entropy: outputs are predictable");
    }
    if a.admin_key.is_none() {
        tracing::warn!("no admin key configured; admin endpoints are disabled");
    }
    let engine = Arc::new(Engine::new(store, entropy(a.insecure_seed)));
    let app = service::router(engine, a.admin_key, Some(a.ui_dir));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve_until_ctrl_c(app, a.bind))?;
    Ok(())
}

fn demo(a: DemoArgs) -> Result<bool> {
    let local = if a.local {
        Some(LocalDeployment::start(
            &behavior::builtin(&a.behavior)?,
            entropy(a.seed),
        )?)
    } else {
        None
    };
    let (alice, bob) = match &local {
        Some(d) => (d.http_client(Side::Alice)?, d.http_client(Side::Bob)?),
        None => a.remote.clients()?,
    };
    let behavior_name = match &local {
        Some(_) => a.behavior.clone(),
        None => box_behavior_name(
            &a.remote.server,
            a.remote.alice_key.as_deref().unwrap_or_default(),
            alice.box_id(),
        )?,
    };
    let mut ids = match a.id_prefix {
        Some(p) => TransactionIdScheme::new(p, a.first_id),
        None => TransactionIdScheme::new(TransactionIdScheme::today().prefix(), a.first_id),
    };
    let steps = game::demo_session(&alice, &bob, &mut ids)?;
    for s in &steps {
        println!("{:<5} GET {}", s.side.as_str(), s.request);
        println!("      {}", s.reply);
    }
    if behavior_name == "pr" {
        match game::check_demo_correlations(&steps) {
            Ok(()) => println!("ok: outputs correlated for x=y=0 and anticorrelated for x=y=1"),
            Err(e) => {
                println!("FAILED: {e}");
                return Ok(false);
            }
        }
    } else {
        println!("box behavior `{behavior_name}`: correlations not asserted");
    }
    Ok(true)
}

fn box_behavior_name(server: &str, api_key: &str, box_id: i64) -> Result<String> {
    let boxes = client::list_boxes(server, api_key)?;
    boxes
        .into_iter()
        .find(|b| b.box_id == box_id)
        .map(|b| b.behavior)
        .with_context(|| format!("box {box_id} is not bound to the Alice key"))
}

fn campaign_ids(prefix: Option<String>) -> TransactionIdScheme {
    // date plus time of day keeps repeated campaigns on one box apart
    let prefix = prefix.unwrap_or_else(|| chrono::Utc::now().format("%Y%m%d-%H%M%S-").to_string());
    TransactionIdScheme::new(prefix, 1)
}

fn write_records<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn play(a: PlayArgs) -> Result<bool> {
    if a.rounds == 0 {
        bail!("--rounds must be at least 1");
    }
    let mut rng = game::player_rng(a.seed);
    let mut ids = campaign_ids(a.id_prefix);
    let record = match a.strategy {
        Strategy::Classical => game::play_classical(a.rounds, &mut rng, &mut ids),
        Strategy::Boxed if a.local => {
            let b = a.behavior.load()?;
            let d = LocalDeployment::start(&b, entropy(a.seed))?;
            game::play_boxed(
                &d.http_client(Side::Alice)?,
                &d.http_client(Side::Bob)?,
                b.name(),
                a.rounds,
                &mut rng,
                &mut ids,
            )?
        }
        Strategy::Boxed => {
            let (alice, bob) = a.remote.clients()?;
            let name = box_behavior_name(
                &a.remote.server,
                a.remote.alice_key.as_deref().unwrap_or_default(),
                alice.box_id(),
            )?;
            game::play_boxed(&alice, &bob, &name, a.rounds, &mut rng, &mut ids)?
        }
    };
    let s = record.summary();
    println!("behavior   {}", record.behavior_name);
    println!("strategy   {}", record.strategy);
    println!("rounds     {}", s.rounds);
    println!("wins       {} ({:.2}%)", s.wins, 100.0 * s.win_rate());
    println!("losses     {}", s.losses);
    println!("mean       {:.4} +- {:.4} (99%)", s.mean_payoff, s.ci99_half_width);
    println!("classical  {:.4}", game::CLASSICAL_BOUND);
    if let Some(path) = &a.records {
        write_records(path, &record.rounds)?;
    }
    Ok(true)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    if a.rounds == 0 {
        bail!("--rounds must be at least 1");
    }
    let b = a.behavior.load()?;
    let mut rng = game::player_rng(a.seed);
    let mut ids = campaign_ids(a.id_prefix);
    let plan = game::plan_transactions(b.alphabets(), a.rounds, FirstMover::Random, &mut rng, &mut ids);
    let samples = if a.local {
        let d = LocalDeployment::start(&b, entropy(a.seed))?;
        game::run_plan(&plan, a.jobs, || {
            Ok((d.http_client(Side::Alice)?, d.http_client(Side::Bob)?))
        })?
    } else {
        let remote = a.remote.clone();
        game::run_plan(&plan, a.jobs, || {
            remote
                .clients()
                .map_err(|e| client::ClientError::Protocol(e.to_string()))
        })?
    };
    let report = VerifyReport::new(&b, &samples, a.fidelity_tol, a.strata_tol);
    println!(
        "behavior {}  transactions {}",
        report.behavior_name, report.transactions
    );
    println!();
    println!(" x  y  samples      TV");
    for f in &report.fidelity {
        println!("{:>2} {:>2} {:>8} {:>7.4}", f.x, f.y, f.samples, f.tv);
    }
    println!();
    println!("side   input  stratum             min-n  max-TV");
    for s in &report.strata {
        let stratum = match s.stratum {
            nlbox::stats::Stratum::CounterpartInput => "counterpart-input",
            nlbox::stats::Stratum::FirstMover => "first-mover",
        };
        println!(
            "{:<6} {:>5}  {:<18} {:>6} {:>7.4}",
            s.side.as_str(),
            s.input,
            stratum,
            s.min_stratum_size,
            s.max_tv
        );
    }
    println!();
    let verdict = |ok| if ok { "PASS" } else { "FAIL" };
    println!(
        "fidelity   max TV {:.4} <= {}: {}",
        report.max_tv(),
        report.fidelity_tol,
        verdict(report.fidelity_ok())
    );
    println!(
        "strata     max TV {:.4} <= {}: {}",
        report.max_strata_tv(),
        report.strata_tol,
        verdict(report.strata_ok())
    );
    if let Some(path) = &a.records {
        write_records(path, &samples)?;
    }
    Ok(report.passes())
}

fn admin(a: AdminArgs) -> Result<()> {
    let connect = || -> Result<AdminClient> {
        let key = a
            .admin_key
            .as_deref()
            .context("--admin-key (or NLBOX_ADMIN_KEY) is required")?;
        Ok(AdminClient::new(&a.server, key)?)
    };
    match a.command {
        AdminCommand::CreateUser { display_name } => {
            let u = connect()?.create_user(&display_name)?;
            println!("userID  {}", u.user_id);
            println!("apiKey  {}", u.api_key);
        }
        AdminCommand::CreateBox {
            behavior,
            alice,
            bob,
            behavior_file,
        } => {
            let b = load_behavior(&behavior, behavior_file.as_deref())?;
            let report = b.check_no_signaling(behavior::EPS_NS);
            if !report.passes {
                bail!(
                    "behavior `{}` is signaling (max marginal deviation {:e})",
                    b.name(),
                    report.max_violation
                );
            }
            let c = connect()?;
            let (ua, ub) = (c.create_user(&alice)?, c.create_user(&bob)?);
            let info = c.create_box(&b, ua.user_id, ub.user_id)?;
            println!("boxID     {}", info.box_id);
            println!("behavior  {}", info.behavior);
            println!("alice     user {} key {}", ua.user_id, ua.api_key);
            println!("bob       user {} key {}", ub.user_id, ub.api_key);
        }
        AdminCommand::List => {
            println!("{:>6}  {:<24} {:>6} {:>6}", "boxID", "behavior", "alice", "bob");
            for b in connect()?.list_boxes()? {
                println!(
                    "{:>6}  {:<24} {:>6} {:>6}",
                    b.box_id, b.behavior, b.alice_user, b.bob_user
                );
            }
        }
        AdminCommand::Revoke { user_id } => {
            connect()?.revoke_key(user_id)?;
            println!("revoked key of user {user_id}");
        }
        AdminCommand::Export { store, out } => {
            let s = Store::open(&store, StoreConfig::default())
                .with_context(|| format!("opening store {}", store.display()))?;
            let n = match out {
                Some(path) => s.export_transactions(BufWriter::new(File::create(&path)?))?,
                None => s.export_transactions(std::io::stdout().lock())?,
            };
            eprintln!("exported {n} transactions");
        }
    }
    Ok(())
}

fn behavior_cmd(command: BehaviorCommand) -> Result<bool> {
    match command {
        BehaviorCommand::Show { name } => {
            println!("{}", behavior::builtin(&name)?.to_json());
            Ok(true)
        }
        BehaviorCommand::Check { name, file } => {
            let b = load_behavior(&name, file.as_deref())?;
            let al = b.alphabets();
            println!("name          {}", b.name());
            println!(
                "alphabets     x:{} y:{} a:{} b:{}",
                al.x_size, al.y_size, al.a_size, al.b_size
            );
            let ns = b.check_no_signaling(behavior::EPS_NS);
            println!("no-signaling  {} (max violation {:.3e})", ns.passes, ns.max_violation);
            if let Some(w) = &ns.witness {
                let (c0, c1) = w.counterpart_inputs;
                println!(
                    "  witness     {} input {} output {}: marginal moves by {:.3e} between counterpart inputs {c0} and {c1}",
                    w.side, w.input, w.output, w.deviation
                );
            }
            match locality::is_local(&b, behavior::EPS_LP) {
                Ok(c) if c.is_local => println!("local         true"),
                Ok(c) => println!("local         false (gap {:.6})", c.violation_gap.unwrap_or(0.0)),
                Err(e) => println!("local         not decided: {e}"),
            }
            if let Ok(p) = b.chsh_expected_payoff() {
                println!("CHSH payoff   {p:.6}");
            }
            Ok(ns.passes)
        }
    }
}
