//! Warehouse pipeline: extract a denormalizing query from the sources into
//! a stage file, load the stage into the warehouse, then materialize views
//! over the warehouse into marts the same way.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::catalog::{build_dictionary, introspect, DataDictionary, LowerSpec, UpperSpec, UpperSpecEntry};
use crate::error::{Error, Result};
use crate::executor::{execute_plan, open_sources, plan_query, Connection, Credentials, DriverRegistry, ExecOptions};
use crate::fixture::{parse_fixture, write_header, write_row};
use crate::planner::QueryPlan;
use crate::remote::NoRemotes;
use crate::table::{Column, ResultTable};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub target_column: String,
    /// Position in the source query's select list.
    pub index: usize,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarMapping {
    pub target_table: String,
    pub source_query: String,
    pub column_map: Vec<ColumnMap>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDef {
    pub name: String,
    pub query: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Job {
    pub targets: Vec<StarMapping>,
    pub views: Vec<ViewDef>,
}

/// Parses a job file:
///
/// ```text
/// target fact_events
/// query SELECT n.event_id, r.year FROM ntuple n, runs r WHERE n.run_id = r.run_id
/// map event_id=0:integer
/// map year=1:integer
///
/// view recent
/// query SELECT * FROM fact_events WHERE year > 2003
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_job(text: &str) -> Result<Job> {
    enum Block {
        Target(StarMapping),
        View(ViewDef),
    }
    let mut job = Job::default();
    let mut current: Option<Block> = None;
    let err = |n: usize, m: String| Error::MalformedJob(format!("line {n}: {m}"));
    let finish = |b: Option<Block>, job: &mut Job, n: usize| -> Result<()> {
        match b {
            None => Ok(()),
            Some(Block::Target(t)) if t.source_query.is_empty() => Err(err(n, format!("target `{}` has no query", t.target_table))),
            Some(Block::Target(t)) if t.column_map.is_empty() => Err(err(n, format!("target `{}` has no map lines", t.target_table))),
            Some(Block::View(v)) if v.query.is_empty() => Err(err(n, format!("view `{}` has no query", v.name))),
            Some(Block::Target(t)) => {
                job.targets.push(t);
                Ok(())
            }
            Some(Block::View(v)) => {
                job.views.push(v);
                Ok(())
            }
        }
    };
    let mut names = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, rest) = line.split_once(char::is_whitespace).map_or((line, ""), |(w, r)| (w, r.trim()));
        match word {
            "target" | "view" => {
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(err(n, format!("`{word}` needs one name")));
                }
                if !names.insert(rest.to_string()) {
                    return Err(err(n, format!("`{rest}` defined twice")));
                }
                finish(current.take(), &mut job, n)?;
                current = Some(if word == "target" {
                    Block::Target(StarMapping { target_table: rest.into(), source_query: String::new(), column_map: vec![] })
                } else {
                    Block::View(ViewDef { name: rest.into(), query: String::new() })
                });
            }
            "query" => {
                let slot = match &mut current {
                    Some(Block::Target(t)) => &mut t.source_query,
                    Some(Block::View(v)) => &mut v.query,
                    None => return Err(err(n, "`query` outside a target or view".into())),
                };
                if !slot.is_empty() {
                    return Err(err(n, "second `query` line".into()));
                }
                if rest.is_empty() {
                    return Err(err(n, "empty query".into()));
                }
                *slot = rest.to_string();
            }
            "map" => {
                let Some(Block::Target(t)) = &mut current else {
                    return Err(err(n, "`map` outside a target".into()));
                };
                let parsed = rest.split_once('=').and_then(|(col, spec)| {
                    let (idx, ty) = spec.split_once(':')?;
                    Some((col.trim(), idx.trim().parse::<usize>().ok()?, ty.trim().parse::<DataType>().ok()?))
                });
                let Some((col, index, data_type)) = parsed.filter(|(c, _, _)| !c.is_empty()) else {
                    return Err(err(n, format!("expected `map <column>=<index>:<type>`, got `{rest}`")));
                };
                if t.column_map.iter().any(|m| m.target_column == col) {
                    return Err(err(n, format!("column `{col}` mapped twice")));
                }
                t.column_map.push(ColumnMap { target_column: col.into(), index, data_type });
            }
            other => return Err(err(n, format!("unknown directive `{other}`"))),
        }
    }
    finish(current, &mut job, text.lines().count())?;
    Ok(job)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Extract,
    Load,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Extract => "extract",
            Phase::Load => "load",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub rows: usize,
    pub bytes: u64,
    pub duration_ms: f64,
}

pub const TIMINGS_HEADER: &str = "phase,rows,bytes,duration_ms";

pub fn timings_csv(timings: &[PhaseTiming]) -> String {
    let mut out = format!("{TIMINGS_HEADER}\n");
    for t in timings {
        out.push_str(&format!("{},{},{},{:.3}\n", t.phase, t.rows, t.bytes, t.duration_ms));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFile {
    pub path: PathBuf,
    pub table: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
    pub byte_size: u64,
}

/// A backend reachable through a driver, e.g. the warehouse or a mart.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub driver: String,
    pub url: String,
    pub username: String,
    pub password: String,
}

impl Endpoint {
    pub fn new(driver: impl Into<String>, url: impl Into<String>) -> Self {
        Endpoint { driver: driver.into(), url: url.into(), username: String::new(), password: String::new() }
    }

    fn open(&self, drivers: &DriverRegistry) -> Result<Connection> {
        drivers.open(&self.driver, &self.url, &self.username, &self.password)
    }
}

/// The sources a query is extracted from: a catalog plus how to reach it.
#[derive(Debug, Clone)]
pub struct SourceSet {
    pub upper: UpperSpec,
    pub dictionary: DataDictionary,
    pub credentials: Credentials,
}

impl SourceSet {
    pub fn new(upper: UpperSpec, lowers: &BTreeMap<String, LowerSpec>) -> Result<Self> {
        let dictionary = build_dictionary(&upper, lowers)?;
        Ok(SourceSet { upper, dictionary, credentials: Credentials::new() })
    }

    /// A one-source set describing whatever `endpoint` currently holds.
    pub fn from_endpoint(source_id: &str, endpoint: &Endpoint, drivers: &DriverRegistry) -> Result<Self> {
        let conn = endpoint.open(drivers)?;
        let lower = introspect(&conn, source_id);
        conn.close();
        let upper = UpperSpec {
            entries: vec![UpperSpecEntry {
                source_id: source_id.into(),
                url: endpoint.url.clone(),
                driver_name: endpoint.driver.clone(),
                lower_spec_ref: format!("{source_id}.xml"),
            }],
        };
        let mut set = SourceSet::new(upper, &BTreeMap::from([(source_id.to_string(), lower?)]))?;
        set.credentials.insert(source_id.into(), (endpoint.username.clone(), endpoint.password.clone()));
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtlOptions {
    pub cell_cap: usize,
}

impl Default for EtlOptions {
    fn default() -> Self {
        EtlOptions { cell_cap: usize::MAX }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Checks a mapping against the planned query's output before anything runs.
fn target_columns(mapping: &StarMapping, plan: &QueryPlan, output: &[DataType]) -> Result<Vec<Column>> {
    let width = plan.merge.projection.len();
    mapping
        .column_map
        .iter()
        .map(|m| {
            let Some(&source) = output.get(m.index) else {
                return Err(Error::MalformedJob(format!(
                    "`{}` maps index {} but the query selects {width} columns",
                    m.target_column, m.index
                )));
            };
            if source != m.data_type && !(source == DataType::Integer && m.data_type == DataType::Real) {
                return Err(Error::TypeMismatch(format!(
                    "`{}` is {} but query column {} is {source}",
                    m.target_column, m.data_type, m.index
                )));
            }
            Ok(Column::new(m.target_column.clone(), m.data_type))
        })
        .collect()
}

/// Plans the mapping's query, checks the column map, then runs the query
/// with freshly opened connections (closed afterwards).
fn run_mapping(
    sources: &SourceSet,
    drivers: &DriverRegistry,
    mapping: &StarMapping,
    options: EtlOptions,
) -> Result<ResultTable> {
    let plan = plan_query(&mapping.source_query, &sources.dictionary, &NoRemotes)?;
    let output_types: Vec<DataType> = plan
        .merge
        .projection
        .iter()
        .map(|p| {
            plan.subqueries
                .iter()
                .flat_map(|s| &s.output_schema)
                .find(|c| c.name == p.internal)
                .map(|c| c.data_type)
                .expect("projected column comes from a sub-query")
        })
        .collect();
    let columns = target_columns(mapping, &plan, &output_types)?;

    let conns = open_sources(&sources.upper, drivers, &sources.credentials)?;
    let result = execute_plan(&plan, &conns, None, ExecOptions { cell_cap: options.cell_cap, concurrent: true });
    conns.values().for_each(Connection::close);
    let result = result?;

    let rows = result
        .rows
        .into_iter()
        .map(|row| {
            mapping
                .column_map
                .iter()
                .map(|m| row[m.index].clone().coerce(m.data_type).map_err(Error::TypeMismatch))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { columns, rows })
}

fn write_stage(path: &Path, name: &str, table: &ResultTable) -> Result<u64> {
    let fail = |e: std::io::Error| Error::StageWriteFailed(format!("{}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(fail)?);
    let mut buf = String::new();
    write_header(&mut buf, name, &table.columns);
    for row in &table.rows {
        write_row(&mut buf, row).map_err(|e| Error::StageWriteFailed(e.to_string()))?;
        if buf.len() > 1 << 16 {
            out.write_all(buf.as_bytes()).map_err(fail)?;
            buf.clear();
        }
    }
    out.write_all(buf.as_bytes()).map_err(fail)?;
    out.flush().map_err(fail)?;
    drop(out);
    Ok(std::fs::metadata(path).map_err(fail)?.len())
}

/// Extracts `mapping` from the sources into `<stage_dir>/<target>.stage`.
pub fn extract_transform(
    sources: &SourceSet,
    drivers: &DriverRegistry,
    mapping: &StarMapping,
    stage_dir: &Path,
    options: EtlOptions,
) -> Result<(StageFile, PhaseTiming)> {
    let start = Instant::now();
    let table = run_mapping(sources, drivers, mapping, options)?;
    let path = stage_dir.join(format!("{}.stage", mapping.target_table));
    let byte_size = write_stage(&path, &mapping.target_table, &table)?;
    let stage = StageFile {
        path,
        table: mapping.target_table.clone(),
        columns: table.columns,
        row_count: table.rows.len(),
        byte_size,
    };
    let timing = PhaseTiming { phase: Phase::Extract, rows: stage.row_count, bytes: byte_size, duration_ms: elapsed_ms(start) };
    Ok((stage, timing))
}

/// Reads a stage file back. Any defect makes the whole stage unusable.
pub fn read_stage(stage: &StageFile) -> Result<ResultTable> {
    let text = std::fs::read_to_string(&stage.path)
        .map_err(|e| Error::MalformedStage(format!("{}: {e}", stage.path.display())))?;
    let mut tables = parse_fixture(&text).map_err(|e| Error::MalformedStage(e.to_string()))?;
    if tables.len() != 1 {
        return Err(Error::MalformedStage(format!("expected one table, found {}", tables.len())));
    }
    let t = tables.remove(0).table;
    if t.columns != stage.columns {
        return Err(Error::MalformedStage("header does not match the staged columns".into()));
    }
    if t.rows.len() != stage.row_count {
        return Err(Error::MalformedStage(format!("{} data rows, expected {}", t.rows.len(), stage.row_count)));
    }
    Ok(t)
}

fn ensure_table(conn: &Connection, name: &str, columns: &[Column]) -> Result<()> {
    match conn.list_tables()?.into_iter().find(|t| t.name == name) {
        None => conn.adapter.create_table(conn.handle, name, columns),
        Some(t) if t.columns.iter().map(|c| c.data_type).eq(columns.iter().map(|c| c.data_type)) => Ok(()),
        Some(_) => Err(Error::TypeMismatch(format!("target table `{name}` has an incompatible schema"))),
    }
}

fn append(conn: &Connection, target_table: &str, table: ResultTable) -> Result<usize> {
    ensure_table(conn, target_table, &table.columns)?;
    conn.adapter.append_rows(conn.handle, target_table, table.rows)
}

/// Appends a stage to `target_table`, creating the table when absent.
pub fn load(
    stage: &StageFile,
    drivers: &DriverRegistry,
    target: &Endpoint,
    target_table: &str,
) -> Result<(usize, PhaseTiming)> {
    let start = Instant::now();
    let conn = target.open(drivers)?;
    let loaded = read_stage(stage).and_then(|t| append(&conn, target_table, t));
    conn.close();
    let n = loaded?;
    Ok((n, PhaseTiming { phase: Phase::Load, rows: n, bytes: stage.byte_size, duration_ms: elapsed_ms(start) }))
}

/// Query-to-table transfer without a stage file.
pub fn transfer_direct(
    sources: &SourceSet,
    drivers: &DriverRegistry,
    mapping: &StarMapping,
    target: &Endpoint,
    options: EtlOptions,
) -> Result<(usize, [PhaseTiming; 2])> {
    let start = Instant::now();
    let table = run_mapping(sources, drivers, mapping, options)?;
    let extract = PhaseTiming { phase: Phase::Extract, rows: table.rows.len(), bytes: 0, duration_ms: elapsed_ms(start) };
    let start = Instant::now();
    let conn = target.open(drivers)?;
    let loaded = append(&conn, &mapping.target_table, table);
    conn.close();
    let n = loaded?;
    Ok((n, [extract, PhaseTiming { phase: Phase::Load, rows: n, bytes: 0, duration_ms: elapsed_ms(start) }]))
}

/// The identity mapping of a view's select list.
fn view_mapping(warehouse: &SourceSet, view: &ViewDef) -> Result<StarMapping> {
    let plan = plan_query(&view.query, &warehouse.dictionary, &NoRemotes)?;
    let column_map = plan
        .merge
        .projection
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let data_type = plan
                .subqueries
                .iter()
                .flat_map(|s| &s.output_schema)
                .find(|c| c.name == p.internal)
                .map(|c| c.data_type)
                .expect("projected column comes from a sub-query");
            // mart columns cannot contain dots
            ColumnMap { target_column: p.name.replace('.', "_"), index, data_type }
        })
        .collect();
    Ok(StarMapping { target_table: view.name.clone(), source_query: view.query.clone(), column_map })
}

/// Evaluates a view on the warehouse and loads the result into the mart.
pub fn materialize_view(
    warehouse: &SourceSet,
    drivers: &DriverRegistry,
    view: &ViewDef,
    mart: &Endpoint,
    stage_dir: &Path,
    options: EtlOptions,
) -> Result<(StageFile, [PhaseTiming; 2])> {
    let mapping = view_mapping(warehouse, view)?;
    let (stage, extract) = extract_transform(warehouse, drivers, &mapping, stage_dir, options)?;
    let (_, load_t) = load(&stage, drivers, mart, &view.name)?;
    Ok((stage, [extract, load_t]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferMode {
    #[default]
    Staged,
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobStep {
    /// Target table or view name.
    pub name: String,
    pub rows: usize,
    pub timings: [PhaseTiming; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobReport {
    pub steps: Vec<JobStep>,
}

impl JobReport {
    pub fn timings(&self) -> Vec<PhaseTiming> {
        self.steps.iter().flat_map(|s| s.timings).collect()
    }
}

/// Runs every target into the warehouse, then every view into the mart.
#[allow(clippy::too_many_arguments)]
pub fn run_job(
    job: &Job,
    sources: &SourceSet,
    drivers: &DriverRegistry,
    warehouse: &Endpoint,
    mart: &Endpoint,
    stage_dir: &Path,
    mode: TransferMode,
    options: EtlOptions,
) -> Result<JobReport> {
    let mut report = JobReport::default();
    for m in &job.targets {
        let (rows, timings) = match mode {
            TransferMode::Staged => {
                let (stage, extract) = extract_transform(sources, drivers, m, stage_dir, options)?;
                let (n, load_t) = load(&stage, drivers, warehouse, &m.target_table)?;
                (n, [extract, load_t])
            }
            TransferMode::Direct => transfer_direct(sources, drivers, m, warehouse, options)?,
        };
        report.steps.push(JobStep { name: m.target_table.clone(), rows, timings });
    }
    if job.views.is_empty() {
        return Ok(report);
    }
    let wh = SourceSet::from_endpoint("warehouse", warehouse, drivers)?;
    for v in &job.views {
        let (rows, timings) = match mode {
            TransferMode::Staged => {
                let (stage, t) = materialize_view(&wh, drivers, v, mart, stage_dir, options)?;
                (stage.row_count, t)
            }
            TransferMode::Direct => transfer_direct(&wh, drivers, &view_mapping(&wh, v)?, mart, options)?,
        };
        report.steps.push(JobStep { name: v.name.clone(), rows, timings });
    }
    Ok(report)
}
