//! Latency and scaling measurements against running federation servers,
//! plus in-process scenarios that launch those servers on loopback.

use std::time::{Duration, Instant};

use gridfed_core::{Error, Result};
use gridfed_server::cluster::{Node, NodeOptions, RlsServer};
use gridfed_server::{HttpClient, Timeouts};
use statrs::statistics::Statistics;

use crate::ntuple::{database_of, normalized_tables, NormalizedSpec, NtupleSpec};

pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchQuery {
    pub label: String,
    pub sql: String,
    pub servers: usize,
    pub distributed: bool,
    pub tables: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub servers: usize,
    pub distributed: bool,
    pub tables: usize,
    pub rows: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

impl BenchRow {
    pub fn low(&self) -> f64 {
        self.mean_ms - self.stddev_ms
    }

    pub fn high(&self) -> f64 {
        self.mean_ms + self.stddev_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["query", "servers", "distributed", "tables", "rows", "repetitions", "mean_ms", "stddev_ms"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.servers.to_string(),
                r.distributed.to_string(),
                r.tables.to_string(),
                r.rows.to_string(),
                r.samples_ms.len().to_string(),
                format!("{:.3}", r.mean_ms),
                format!("{:.3}", r.stddev_ms),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn unavailable(server: &str, e: Error) -> Error {
    Error::ScenarioUnavailable(format!("{server}: {e}"))
}

/// Failures that mean the scenario is not there, as opposed to a bad query.
fn is_availability(e: &Error) -> bool {
    match e {
        Error::RemoteTimeout(_) | Error::BackendUnavailable(_) | Error::Shutdown | Error::MalformedUrl(_) => true,
        Error::RemoteError { code, .. } => matches!(code.as_str(), "RemoteTimeout" | "BackendUnavailable" | "Shutdown"),
        _ => false,
    }
}

fn check_health(http: &HttpClient, server: &str) -> Result<()> {
    http.health(server).map_err(|e| unavailable(server, e))
}

/// One timed run of `sql`; returns rows and elapsed milliseconds.
fn timed(http: &HttpClient, server: &str, sql: &str) -> Result<(usize, f64)> {
    let start = Instant::now();
    let t = http.remote_query(server, sql, false).map_err(|e| if is_availability(&e) { unavailable(server, e) } else { e })?;
    Ok((t.len(), start.elapsed().as_secs_f64() * 1000.0))
}

/// Runs `sql` once unmeasured, then `repetitions` measured times.
fn measure(http: &HttpClient, server: &str, sql: &str, repetitions: usize) -> Result<(usize, Vec<f64>)> {
    let (rows, _) = timed(http, server, sql)?;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        samples.push(timed(http, server, sql)?.1);
    }
    Ok((rows, samples))
}

fn summarize(samples: &[f64]) -> (f64, f64) {
    let mean = samples.mean();
    let stddev = if samples.len() > 1 { samples.std_dev() } else { 0.0 };
    (mean, stddev)
}

/// Times every query against `server`, sequentially.
pub fn bench_latency(server: &str, queries: &[BenchQuery], repetitions: usize, timeouts: Timeouts) -> Result<BenchReport> {
    let repetitions = repetitions.max(MIN_REPETITIONS);
    let http = HttpClient::new(timeouts);
    check_health(&http, server)?;
    let mut report = BenchReport::default();
    for q in queries {
        let (rows, samples_ms) = measure(&http, server, &q.sql, repetitions)?;
        let (mean_ms, stddev_ms) = summarize(&samples_ms);
        report.rows.push(BenchRow {
            label: q.label.clone(),
            servers: q.servers,
            distributed: q.distributed,
            tables: q.tables,
            rows,
            samples_ms,
            mean_ms,
            stddev_ms,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub requested: usize,
    pub rows_returned: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

pub const SCALING_HEADER: &str = "rows_returned,response_ms";

pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = format!("{SCALING_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{:.3}\n", p.rows_returned, p.mean_ms));
    }
    out
}

/// Row counts from 21 to 2551.
pub const DEFAULT_COUNTS: [usize; 7] = [21, 100, 500, 1000, 1500, 2000, 2551];

/// Selects the first `n` events of the `ntuple` table.
pub fn scaling_sql(n: usize) -> String {
    format!("SELECT * FROM ntuple WHERE event_id < {n}")
}

/// One measurement per requested row count; the counts are measured in
/// interleaved rounds so drift in machine load spreads over all of them.
pub fn bench_scaling(server: &str, counts: &[usize], repetitions: usize, timeouts: Timeouts) -> Result<Vec<ScalingPoint>> {
    let repetitions = repetitions.max(MIN_REPETITIONS);
    let http = HttpClient::new(timeouts);
    if counts.is_empty() {
        return Ok(vec![]);
    }
    check_health(&http, server)?;
    let mut rows = vec![0; counts.len()];
    let mut samples = vec![Vec::with_capacity(repetitions); counts.len()];
    for (i, &n) in counts.iter().enumerate() {
        rows[i] = timed(&http, server, &scaling_sql(n))?.0;
    }
    for _ in 0..repetitions {
        for (i, &n) in counts.iter().enumerate() {
            samples[i].push(timed(&http, server, &scaling_sql(n))?.1);
        }
    }
    Ok(counts
        .iter()
        .zip(rows)
        .zip(samples)
        .map(|((&requested, rows_returned), s)| {
            let (mean_ms, stddev_ms) = summarize(&s);
            ScalingPoint { requested, rows_returned, mean_ms, stddev_ms }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = xs.mean();
    let my = ys.mean();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

/// Data sizes for the latency scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyConfig {
    pub events: usize,
    pub vars: usize,
    pub runs: usize,
    pub detectors: usize,
    pub seed: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig { events: 4000, vars: 20, runs: 2000, detectors: 400, seed: 1 }
    }
}

/// The three query shapes: one table on one server, two tables from two
/// sources on one server, four tables spread over two servers.
pub fn latency_queries() -> Vec<BenchQuery> {
    let q = |label: &str, sql: &str, servers, distributed, tables| BenchQuery {
        label: label.into(),
        sql: sql.into(),
        servers,
        distributed,
        tables,
    };
    vec![
        q("local-1-table", "SELECT n.event_id, n.v0, n.v1, n.run_id FROM ntuple n WHERE n.event_id < 1000", 1, false, 1),
        q(
            "distributed-2-tables",
            "SELECT n.event_id, n.v0, n.v1, r.year FROM ntuple n, runs r WHERE n.run_id = r.run_id AND n.event_id < 1000",
            1,
            true,
            2,
        ),
        q(
            "2-servers-4-tables",
            "SELECT n.event_id, n.v0, n.v1, r.year, d.name, c.gain FROM ntuple n, runs r, detectors d, calibrations c \
             WHERE n.run_id = r.run_id AND r.detector_id = d.detector_id AND c.detector_id = d.detector_id AND n.event_id < 1000",
            2,
            true,
            4,
        ),
    ]
}

/// An RLS and two federation nodes on loopback. The entry node holds the
/// ntuple and the runs in two separate sources; the second node holds the
/// detector tables.
pub struct LatencyScenario {
    pub rls: RlsServer,
    pub entry: Node,
    pub peer: Node,
}

impl LatencyScenario {
    pub fn launch(config: LatencyConfig) -> Result<Self> {
        let spec = NormalizedSpec::new(NtupleSpec::new(config.events, config.vars, config.seed), config.runs, config.detectors);
        let tables = normalized_tables(&spec);
        let rls = RlsServer::start("127.0.0.1:0")?;
        let entry = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url()))?;
        let peer = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url()))?;
        entry.add_source("events", database_of(&tables, &["ntuple"]))?;
        entry.add_source("conditions", database_of(&tables, &["runs"]))?;
        peer.add_source("hardware", database_of(&tables, &["detectors", "calibrations"]))?;
        Ok(LatencyScenario { rls, entry, peer })
    }

    pub fn run(&self, repetitions: usize) -> Result<BenchReport> {
        bench_latency(&self.entry.url(), &latency_queries(), repetitions, Timeouts::default())
    }

    pub fn shutdown(self) {
        self.entry.shutdown();
        self.peer.shutdown();
        self.rls.shutdown();
    }
}

/// One node serving an ntuple of `events` rows for the scaling runs.
pub struct ScalingScenario {
    pub node: Node,
}

impl ScalingScenario {
    pub fn launch(events: usize, vars: usize, seed: u64) -> Result<Self> {
        let spec = NormalizedSpec::new(NtupleSpec::new(events, vars, seed), 1, 1);
        let node = Node::start("127.0.0.1:0", NodeOptions::default())?;
        node.add_source("events", database_of(&normalized_tables(&spec), &["ntuple"]))?;
        Ok(ScalingScenario { node })
    }

    pub fn run(&self, counts: &[usize], repetitions: usize) -> Result<Vec<ScalingPoint>> {
        bench_scaling(&self.node.url(), counts, repetitions, Timeouts::default())
    }
}

/// Short timeouts for probing servers that may be down.
pub fn probe_timeouts() -> Timeouts {
    Timeouts { request: Duration::from_secs(30), connect: Duration::from_secs(2) }
}
