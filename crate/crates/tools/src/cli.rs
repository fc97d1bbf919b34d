//! The `gridfed` command line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use gridfed_core::catalog::{introspect, serialize_lower_spec, LowerSpec, UpperSpec, UpperSpecEntry};
use gridfed_core::etl::{parse_job, run_job, timings_csv, Endpoint, EtlOptions, SourceSet, TransferMode};
use gridfed_core::executor::{Connection, Database, DriverRegistry, ReferenceDriver};
use gridfed_core::remote::ReplicaLocator;
use gridfed_core::wire::RegisterRequest;
use gridfed_core::{Error, ResultTable, Result, Value};
use gridfed_server::engine::sibling_dir;
use gridfed_server::{bind, rls_router, serve_on, Engine, FederationServer, HttpClient, RlsClient, ServerConfig, Timeouts};

use crate::bench::{self, LatencyConfig, LatencyScenario, ScalingScenario};
use crate::ntuple::{generate_ntuple, normalized_fixture, NormalizedSpec, NtupleSpec};

#[derive(Debug, Parser)]
#[command(name = "gridfed", version, about = "Federated SQL over distributed table stores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a query on a federation server and print the result as CSV.
    Query {
        #[arg(long)]
        server: String,
        /// Refuse tables the server would have to fetch from a peer.
        #[arg(long)]
        no_forward: bool,
        sql: String,
    },
    /// Register a source with a running federation server.
    Register(RegisterArgs),
    /// Print the lower-level spec describing a backend.
    Introspect {
        #[arg(long, default_value = ReferenceDriver::NAME)]
        driver: String,
        /// Connection URL; for the reference driver `file:<fixture>`.
        #[arg(long)]
        url: String,
        /// Database name recorded in the spec.
        #[arg(long)]
        name: String,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Warehouse and data-mart jobs.
    Etl {
        #[command(subcommand)]
        command: EtlCommand,
    },
    /// Run a federation server until killed.
    Serve(ServeArgs),
    /// Run the replica location service until killed.
    RlsServe {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Response-time measurements.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Write a synthetic ntuple fixture.
    GenNtuple {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        events: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        vars: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also emit runs, detectors and calibrations tables keyed from the ntuple.
        #[arg(long)]
        normalized: bool,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        detectors: u64,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    server: String,
    /// Spec location the server fetches itself.
    #[arg(long, conflicts_with = "spec_file", required_unless_present = "spec_file")]
    spec_url: Option<String>,
    /// Local spec file sent inline.
    #[arg(long)]
    spec_file: Option<PathBuf>,
    #[arg(long, default_value = ReferenceDriver::NAME)]
    driver: String,
    /// Connection URL of the backend, as seen by the server.
    #[arg(long)]
    url: String,
    #[arg(long)]
    username: Option<String>,
    #[arg(long)]
    password: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum EtlCommand {
    /// Extract, transform and load every target, then materialize every view.
    Run(EtlRunArgs),
}

#[derive(Debug, Args)]
pub struct EtlRunArgs {
    #[arg(long)]
    job: PathBuf,
    /// Source fixture as `<id>=<path>`; repeatable.
    #[arg(long = "source", value_parser = parse_named_path, required = true)]
    sources: Vec<(String, PathBuf)>,
    /// Warehouse fixture; created if missing, rewritten afterwards.
    #[arg(long)]
    warehouse: PathBuf,
    /// Data-mart fixture; created if missing, rewritten afterwards.
    #[arg(long)]
    mart: PathBuf,
    #[arg(long, default_value = ".")]
    stage_dir: PathBuf,
    /// Stream straight into the target without a stage file.
    #[arg(long)]
    direct: bool,
    /// Write phase timings here instead of stdout.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// URL peers and the replica service know this server by.
    #[arg(long)]
    public_url: Option<String>,
    /// Upper-level spec listing the sources to register at startup.
    #[arg(long)]
    upper: Option<PathBuf>,
    /// Fixture served as an in-memory source, `<id>=<path>`; repeatable.
    #[arg(long = "source", value_parser = parse_named_path)]
    sources: Vec<(String, PathBuf)>,
    #[arg(long)]
    rls: Option<String>,
    #[arg(long, default_value_t = 30)]
    refresh_secs: u64,
    #[arg(long)]
    cell_cap: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Time the one-table, two-table and two-server query shapes.
    Latency {
        /// Measure an existing server holding the normalized ntuple tables
        /// instead of launching a local scenario.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = LatencyConfig::default().events)]
        events: usize,
        #[arg(long, default_value_t = LatencyConfig::default().vars)]
        vars: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Response time against number of rows returned.
    Scaling {
        #[arg(long)]
        server: Option<String>,
        /// Comma-separated row counts.
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_COUNTS)]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 50)]
        vars: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok((id.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected <id>=<path>, got `{s}`")),
    }
}

/// Exit status for each error family. Remote errors take the family of the
/// code the peer reported.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MalformedSpec(_)
        | Error::DuplicateName(_)
        | Error::DanglingRelationship(_)
        | Error::DuplicateSourceId(_)
        | Error::UnresolvableRef(_)
        | Error::LogicalNameCollision(_) => 3,
        Error::SyntaxError { .. }
        | Error::UnsupportedFeature { .. }
        | Error::UnknownTable(_)
        | Error::UnknownColumn(_)
        | Error::AmbiguousColumn(_)
        | Error::TypeMismatch(_)
        | Error::CrossProductRejected(_) => 4,
        Error::BackendUnavailable(_) | Error::ResultTooLarge { .. } | Error::MalformedFixture(_) => 5,
        Error::RemoteError { code, message, .. } => match Error::from_code(code, message) {
            Some(inner) => exit_code(&inner),
            None => 6,
        },
        Error::RemoteTimeout(_) | Error::DecodeError(_) | Error::MalformedUrl(_) => 6,
        Error::MalformedStage(_) | Error::StageWriteFailed(_) | Error::MalformedJob(_) => 7,
        Error::Shutdown | Error::AddressInUse(_) | Error::BadRequest(_) => 8,
        Error::ScenarioUnavailable(_) => 9,
        Error::Io(_) => 1,
    }
}

pub fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// RFC 4180 CSV with a header row of column names.
pub fn table_csv(t: &ResultTable) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(vec![]);
    w.write_record(t.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
    for row in &t.rows {
        w.write_record(row.iter().map(csv_cell)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load_or_empty(path: &Path) -> Result<Database> {
    if path.exists() {
        Database::load(path)
    } else {
        Ok(Database::new())
    }
}

fn park_forever() -> ! {
    loop {
        std::thread::park();
    }
}

/// Adds each database to `driver` as `mem:<id>` and describes them all as
/// one source set.
pub fn reference_sources(driver: &Arc<ReferenceDriver>, stores: Vec<(String, Database)>) -> Result<SourceSet> {
    let mut upper = UpperSpec::default();
    let mut lowers: BTreeMap<String, LowerSpec> = BTreeMap::new();
    for (id, db) in stores {
        driver.add_store(&id, db);
        let url = format!("mem:{id}");
        let conn = Connection::open(driver.clone(), &url, "", "")?;
        let lower = introspect(&conn, &id);
        conn.close();
        lowers.insert(id.clone(), lower?);
        upper.entries.push(UpperSpecEntry {
            source_id: id.clone(),
            url,
            driver_name: ReferenceDriver::NAME.into(),
            lower_spec_ref: format!("{id}.xml"),
        });
    }
    upper.validate()?;
    SourceSet::new(upper, &lowers)
}

fn etl_run(args: EtlRunArgs) -> Result<()> {
    let job = parse_job(&read(&args.job)?)?;
    let driver = Arc::new(ReferenceDriver::new());
    let drivers = DriverRegistry::new().with(driver.clone());
    let mut stores = Vec::new();
    for (id, path) in &args.sources {
        stores.push((id.clone(), Database::load(path)?));
    }
    let sources = reference_sources(&driver, stores)?;
    let warehouse = driver.add_store("warehouse", load_or_empty(&args.warehouse)?);
    let mart = driver.add_store("mart", load_or_empty(&args.mart)?);
    std::fs::create_dir_all(&args.stage_dir)?;
    let mode = if args.direct { TransferMode::Direct } else { TransferMode::Staged };
    let report = run_job(
        &job,
        &sources,
        &drivers,
        &Endpoint::new(ReferenceDriver::NAME, "mem:warehouse"),
        &Endpoint::new(ReferenceDriver::NAME, "mem:mart"),
        &args.stage_dir,
        mode,
        EtlOptions::default(),
    )?;
    std::fs::write(&args.warehouse, warehouse.read().expect("store lock").to_fixture()?)?;
    std::fs::write(&args.mart, mart.read().expect("store lock").to_fixture()?)?;
    for step in &report.steps {
        eprintln!("{}: {} rows", step.name, step.rows);
    }
    write_out(args.timings.as_deref(), &timings_csv(&report.timings()))
}

fn serve(args: ServeArgs) -> Result<()> {
    let listener = bind(&args.listen)?;
    let local = listener.local_addr()?;
    let mut config = ServerConfig::new(args.public_url.clone().unwrap_or_else(|| format!("http://{local}")));
    config.rls_url = args.rls.clone();
    config.refresh_interval = Duration::from_secs(args.refresh_secs.max(1));
    if let Some(cap) = args.cell_cap {
        config.cell_cap = cap;
    }
    let driver = Arc::new(ReferenceDriver::new());
    let locator = args
        .rls
        .as_ref()
        .map(|u| Arc::new(RlsClient::new(u.clone(), Timeouts::default())) as Arc<dyn ReplicaLocator>);
    let engine = Engine::new(config, DriverRegistry::new().with(driver.clone()), Arc::new(HttpClient::default()), locator)?;
    if let Some(upper) = &args.upper {
        engine.load_upper(&read(upper)?, &sibling_dir(upper))?;
    }
    for (id, path) in &args.sources {
        let db = Database::load(path)?;
        driver.add_store(id, db.clone());
        let conn = Connection::open(driver.clone(), &format!("mem:{id}"), "", "")?;
        let spec = introspect(&conn, id);
        conn.close();
        engine.register(&gridfed_server::Registration {
            spec: gridfed_server::SpecSource::Inline(serialize_lower_spec(&spec?)),
            driver: ReferenceDriver::NAME.into(),
            url: format!("mem:{id}"),
            username: String::new(),
            password: String::new(),
        })?;
    }
    let server = FederationServer::start(Arc::new(engine), listener, true)?;
    write_out(None, &format!("{}\n", server.url()))?;
    park_forever()
}

fn rls_serve(listen: &str) -> Result<()> {
    let listener = bind(listen)?;
    let mapping = Arc::new(gridfed_core::rls::SharedReplicaMapping::new());
    let handle = serve_on(listener, rls_router(mapping), gridfed_server::http::DEFAULT_DRAIN_TIMEOUT)?;
    write_out(None, &format!("{}\n", handle.url()))?;
    park_forever()
}

fn bench(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Latency { server, repetitions, events, vars, seed } => {
            let report = match server {
                Some(url) => bench::bench_latency(&url, &bench::latency_queries(), repetitions, bench::probe_timeouts())?,
                None => {
                    let config = LatencyConfig { events, vars, seed, ..LatencyConfig::default() };
                    let scenario = LatencyScenario::launch(config)?;
                    let report = scenario.run(repetitions);
                    scenario.shutdown();
                    report?
                }
            };
            write_out(None, &report.to_csv())
        }
        BenchCommand::Scaling { server, counts, repetitions, vars, seed } => {
            let points = match server {
                Some(url) => bench::bench_scaling(&url, &counts, repetitions, bench::probe_timeouts())?,
                None => {
                    let events = counts.iter().copied().max().unwrap_or(1).max(1);
                    ScalingScenario::launch(events, vars.max(1), seed)?.run(&counts, repetitions)?
                }
            };
            write_out(None, &bench::scaling_csv(&points))
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Query { server, no_forward, sql } => {
            let t = HttpClient::default().remote_query(&server, &sql, no_forward)?;
            write_out(None, &table_csv(&t))
        }
        Command::Register(a) => {
            let spec_inline = a.spec_file.as_deref().map(read).transpose()?;
            let req = RegisterRequest {
                spec_url: a.spec_url,
                spec_inline,
                driver: a.driver,
                url: a.url,
                username: a.username,
                password: a.password,
            };
            let id = HttpClient::default().register(&a.server, &req)?;
            write_out(None, &format!("{id}\n"))
        }
        Command::Introspect { driver, url, name, output } => {
            let drivers = DriverRegistry::new().with(Arc::new(ReferenceDriver::new()));
            let conn = drivers.open(&driver, &url, "", "")?;
            let spec = introspect(&conn, &name);
            conn.close();
            write_out(output.as_deref(), &serialize_lower_spec(&spec?))
        }
        Command::Etl { command: EtlCommand::Run(args) } => etl_run(args),
        Command::Serve(args) => serve(args),
        Command::RlsServe { listen } => rls_serve(&listen),
        Command::Bench { command } => bench(command),
        Command::GenNtuple { events, vars, seed, normalized, runs, detectors, output } => {
            let spec = NtupleSpec::new(events as usize, vars as usize, seed);
            let text = if normalized {
                normalized_fixture(&NormalizedSpec::new(spec, runs as usize, detectors as usize))
            } else {
                generate_ntuple(&spec)
            };
            write_out(output.as_deref(), &text)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gridfed: {} ({})", e, e.code());
            exit_code(&e)
        }
    }
}
