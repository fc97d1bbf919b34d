//! Sub-query dispatch and the merge phase.

mod adapter;
mod ops;
mod reference;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use adapter::{BackendAdapter, Connection, Handle, TableSchema};
pub use ops::{apply_residual, finalize, hash_equi_join, hash_equi_join_capped, project};
pub use reference::{load_reference_backend, Database, ReferenceDriver, SharedDatabase};

use crate::catalog::{DataDictionary, UpperSpec};
use crate::error::{Error, Result};
use crate::planner::{partition_tables, plan, render_subquery, QueryPlan, SubQuery, Target};
use crate::remote::{PeerClient, RemoteResolver};
use crate::sql::{parse_sql, resolve_names};
use crate::table::ResultTable;

/// Backend adapters by driver name.
#[derive(Clone, Default)]
pub struct DriverRegistry(BTreeMap<String, Arc<dyn BackendAdapter>>);

impl DriverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, adapter: Arc<dyn BackendAdapter>) -> Self {
        self.register(adapter);
        self
    }

    pub fn register(&mut self, adapter: Arc<dyn BackendAdapter>) {
        self.0.insert(adapter.driver_name().to_string(), adapter);
    }

    pub fn get(&self, driver: &str) -> Result<Arc<dyn BackendAdapter>> {
        self.0.get(driver).cloned().ok_or_else(|| Error::BackendUnavailable(format!("no driver named `{driver}`")))
    }

    pub fn open(&self, driver: &str, url: &str, username: &str, password: &str) -> Result<Connection> {
        Connection::open(self.get(driver)?, url, username, password)
    }

    pub fn names(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }
}

impl std::fmt::Debug for DriverRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.0.keys()).finish()
    }
}

/// (username, password) per source id.
pub type Credentials = BTreeMap<String, (String, String)>;

/// Opens one connection per upper-spec entry. On failure every connection
/// already opened is closed again and the failing source is named.
pub fn open_sources(
    upper: &UpperSpec,
    drivers: &DriverRegistry,
    credentials: &Credentials,
) -> Result<BTreeMap<String, Connection>> {
    let mut out: BTreeMap<String, Connection> = BTreeMap::new();
    for e in &upper.entries {
        let (user, pw) = credentials.get(&e.source_id).map(|(u, p)| (u.as_str(), p.as_str())).unwrap_or(("", ""));
        match drivers.open(&e.driver_name, &e.url, user, pw) {
            Ok(c) => {
                out.insert(e.source_id.clone(), c);
            }
            Err(err) => {
                out.values().for_each(Connection::close);
                return Err(Error::BackendUnavailable(format!("{}: {err}", e.source_id)));
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_CELL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Maximum cells in any intermediate or final table.
    pub cell_cap: usize,
    pub concurrent: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { cell_cap: DEFAULT_CELL_CAP, concurrent: true }
    }
}

fn check_cap(t: &ResultTable, cap: usize) -> Result<()> {
    let cells = t.cell_count();
    if cells > cap {
        return Err(Error::ResultTooLarge { cells, cap });
    }
    Ok(())
}

fn run_subquery(
    sq: &SubQuery,
    connections: &BTreeMap<String, Connection>,
    peers: Option<&dyn PeerClient>,
    cap: usize,
) -> Result<ResultTable> {
    let mut table = match &sq.target {
        Target::Local(source) => {
            let conn = connections.get(source).ok_or_else(|| Error::BackendUnavailable(source.clone()))?;
            conn.execute(&sq.field_list(), &sq.table_list(), &sq.where_string()).map_err(|e| match e {
                Error::BackendUnavailable(_) => Error::BackendUnavailable(source.clone()),
                other => other,
            })?
        }
        Target::Remote(url) => {
            let peers = peers.ok_or_else(|| Error::RemoteError {
                url: url.clone(),
                code: "BackendUnavailable".into(),
                message: "no peer client configured".into(),
            })?;
            peers.query(url, &render_subquery(sq), true)?
        }
    };
    if table.width() != sq.output_schema.len() {
        return Err(Error::DecodeError(format!(
            "{} returned {} columns, expected {}",
            sq.target,
            table.width(),
            sq.output_schema.len()
        )));
    }
    for (col, expected) in table.columns.iter_mut().zip(&sq.output_schema) {
        col.name = expected.name.clone();
    }
    check_cap(&table, cap)?;
    Ok(table)
}

/// Runs every sub-query, joins, filters and finalizes. Any failure aborts
/// the whole query; no partial result is ever returned.
pub fn execute_plan(
    plan: &QueryPlan,
    connections: &BTreeMap<String, Connection>,
    peers: Option<&dyn PeerClient>,
    options: ExecOptions,
) -> Result<ResultTable> {
    let cap = options.cell_cap;
    let results: Vec<Result<ResultTable>> = if options.concurrent && plan.subqueries.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = plan
                .subqueries
                .iter()
                .map(|sq| s.spawn(move || run_subquery(sq, connections, peers, cap)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("sub-query thread panicked")).collect()
        })
    } else {
        plan.subqueries.iter().map(|sq| run_subquery(sq, connections, peers, cap)).collect()
    };
    let mut tables = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut merged = if tables.is_empty() {
        return Err(Error::BadRequest("plan has no sub-queries".into()));
    } else {
        std::mem::take(&mut tables[0])
    };
    for step in &plan.merge.join_steps {
        let right = &tables[step.right];
        let keys = step
            .keys
            .iter()
            .map(|(l, r)| {
                let li = merged.column_index(l).ok_or_else(|| Error::UnknownColumn(l.clone()))?;
                let ri = right.column_index(r).ok_or_else(|| Error::UnknownColumn(r.clone()))?;
                Ok((li, ri))
            })
            .collect::<Result<Vec<_>>>()?;
        merged = hash_equi_join_capped(&merged, right, &keys, cap)?;
    }
    let merged = apply_residual(merged, &plan.merge.residual_predicates)?;

    let index = |name: &str| merged.column_index(name).ok_or_else(|| Error::UnknownColumn(name.to_string()));
    let order = plan.order_by.iter().map(|(c, d)| Ok((index(c)?, *d))).collect::<Result<Vec<_>>>()?;
    let projection = plan.merge.projection.iter().map(|p| index(&p.internal)).collect::<Result<Vec<_>>>()?;
    let output = plan
        .merge
        .projection
        .iter()
        .zip(&projection)
        .map(|(p, &i)| crate::table::Column::new(p.name.clone(), merged.columns[i].data_type))
        .collect();
    let out = finalize(merged, &order, plan.limit, &projection, output);
    check_cap(&out, cap)?;
    Ok(out)
}

/// Parses, resolves, plans and executes one query.
pub fn run_query(
    sql: &str,
    dict: &DataDictionary,
    connections: &BTreeMap<String, Connection>,
    resolver: &dyn RemoteResolver,
    peers: Option<&dyn PeerClient>,
    options: ExecOptions,
) -> Result<ResultTable> {
    let qp = plan_query(sql, dict, resolver)?;
    execute_plan(&qp, connections, peers, options)
}

pub fn plan_query(sql: &str, dict: &DataDictionary, resolver: &dyn RemoteResolver) -> Result<QueryPlan> {
    let ast = parse_sql(sql)?;
    let bq = resolve_names(&ast, dict)?;
    let partition = partition_tables(&bq, resolver)?;
    plan(&bq, &partition)
}
