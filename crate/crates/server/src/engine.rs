//! Federation server state and the operations behind its endpoints.
//!
//! Queries read an immutable [`Snapshot`]; registration and refresh build a
//! new snapshot under the mutation lock and swap it in whole.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::time::{Duration, Instant};

use gridfed_core::catalog::{
    build_dictionary, compare_fingerprints, fingerprint, introspect_onto, parse_lower_spec, parse_upper_spec_only,
    serialize_lower_spec, serialize_upper_spec, Comparison, DataDictionary, Fingerprint, LowerSpec, UpperSpec,
    UpperSpecEntry,
};
use gridfed_core::executor::{execute_plan, Connection, Credentials, DriverRegistry, ExecOptions, DEFAULT_CELL_CAP};
use gridfed_core::planner::{partition_tables, plan, Target};
use gridfed_core::remote::{PeerClient, RemoteResolver, RemoteTableInfo, ReplicaLocator};
use gridfed_core::sql::{parse_sql, resolve_names};
use gridfed_core::wire::{to_json, LowerSpecDoc, SchemaResponse};
use gridfed_core::{Error, ResultTable, Result};

use crate::client::HttpClient;

pub const DEFAULT_REFRESH_INTERVAL: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// URL peers and the RLS know this server by.
    pub public_url: String,
    pub rls_url: Option<String>,
    pub refresh_interval: Duration,
    pub cell_cap: usize,
    pub credentials: Credentials,
}

impl ServerConfig {
    pub fn new(public_url: impl Into<String>) -> Self {
        ServerConfig {
            public_url: public_url.into(),
            rls_url: None,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
            cell_cap: DEFAULT_CELL_CAP,
            credentials: Credentials::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.refresh_interval.is_zero() {
            return Err(Error::BadRequest("refresh interval must be positive".into()));
        }
        gridfed_core::rls::check_server_url(&self.public_url)
    }
}

/// Everything a query needs, immutable once published.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub upper: UpperSpec,
    pub lowers: BTreeMap<String, LowerSpec>,
    pub dictionary: DataDictionary,
    pub connections: BTreeMap<String, Connection>,
    pub fingerprints: BTreeMap<String, Fingerprint>,
    pub generation: u64,
}

impl Snapshot {
    pub fn schema(&self) -> SchemaResponse {
        SchemaResponse {
            upper: serialize_upper_spec(&self.upper),
            lowers: self
                .upper
                .entries
                .iter()
                .map(|e| LowerSpecDoc { source_id: e.source_id.clone(), spec: serialize_lower_spec(&self.lowers[&e.source_id]) })
                .collect(),
        }
    }

    /// Fingerprint of the serialized schema document.
    pub fn schema_fingerprint(&self) -> Fingerprint {
        fingerprint(to_json(&self.schema()).as_bytes())
    }
}

fn table_names(lower: &LowerSpec) -> Vec<String> {
    lower.tables.iter().map(|t| t.logical_name.clone()).collect()
}

/// One `/query` as this server saw it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryLogEntry {
    pub sql: String,
    pub no_forward: bool,
    /// Peer URLs a sub-query was sent to.
    pub forwarded_to: Vec<String>,
    pub generation: u64,
    pub outcome: std::result::Result<usize, String>,
}

/// Where a registration's lower spec comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecSource {
    /// `http(s)://` URL, `file:` URL or plain path.
    Url(String),
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub spec: SpecSource,
    pub driver: String,
    pub url: String,
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefreshReport {
    pub changed: Vec<(String, Comparison)>,
    /// Sources skipped this round.
    pub errors: Vec<(String, Error)>,
}

impl RefreshReport {
    pub fn changed_ids(&self) -> Vec<String> {
        self.changed.iter().map(|(id, _)| id.clone()).collect()
    }
}

pub struct Engine {
    config: ServerConfig,
    drivers: DriverRegistry,
    peers: Arc<dyn PeerClient>,
    locator: Option<Arc<dyn ReplicaLocator>>,
    http: HttpClient,
    snapshot: RwLock<Arc<Snapshot>>,
    mutation: Mutex<()>,
    shutting_down: AtomicBool,
    log: Mutex<Vec<QueryLogEntry>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).field("drivers", &self.drivers).finish()
    }
}

/// Records which peers were contacted while answering one query.
struct LoggingPeers<'a> {
    inner: &'a dyn PeerClient,
    contacted: Mutex<Vec<String>>,
}

impl PeerClient for LoggingPeers<'_> {
    fn query(&self, server_url: &str, sql: &str, no_forward: bool) -> Result<ResultTable> {
        self.contacted.lock().unwrap_or_else(PoisonError::into_inner).push(server_url.to_string());
        self.inner.query(server_url, sql, no_forward)
    }

    fn describe_table(&self, server_url: &str, table: &str) -> Result<Option<Vec<gridfed_core::catalog::ColumnSpec>>> {
        self.inner.describe_table(server_url, table)
    }
}

struct RlsResolver<'a> {
    engine: &'a Engine,
}

impl RemoteResolver for RlsResolver<'_> {
    fn locate(&self, table: &str) -> Result<Option<RemoteTableInfo>> {
        let Some(locator) = &self.engine.locator else {
            return Ok(None);
        };
        let own = self.engine.config.public_url.trim_end_matches('/');
        let servers = locator.lookup(table)?;
        let Some(server) = servers.into_iter().find(|s| s.trim_end_matches('/') != own) else {
            return Ok(None);
        };
        match self.engine.peers.describe_table(&server, table)? {
            Some(columns) => Ok(Some(RemoteTableInfo { server_url: server, columns })),
            None => Err(Error::RemoteError {
                url: server,
                code: "UnknownTable".into(),
                message: format!("published table `{table}` is not hosted there"),
            }),
        }
    }
}

impl Engine {
    pub fn new(
        config: ServerConfig,
        drivers: DriverRegistry,
        peers: Arc<dyn PeerClient>,
        locator: Option<Arc<dyn ReplicaLocator>>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Engine {
            config,
            drivers,
            peers,
            locator,
            http: HttpClient::default(),
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            mutation: Mutex::new(()),
            shutting_down: AtomicBool::new(false),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    fn publish_snapshot(&self, next: Snapshot) {
        *self.snapshot.write().unwrap_or_else(PoisonError::into_inner) = Arc::new(next);
    }

    pub fn begin_shutdown(&self) {
        self.shutting_down.store(true, Ordering::SeqCst);
    }

    pub fn is_shutting_down(&self) -> bool {
        self.shutting_down.load(Ordering::SeqCst)
    }

    pub fn query_log(&self) -> Vec<QueryLogEntry> {
        self.log.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn clear_query_log(&self) {
        self.log.lock().unwrap_or_else(PoisonError::into_inner).clear();
    }

    /// Answers one query. With `no_forward`, tables not registered here are
    /// unknown rather than looked up elsewhere.
    pub fn query(&self, sql: &str, no_forward: bool) -> Result<ResultTable> {
        if self.is_shutting_down() {
            return Err(Error::Shutdown);
        }
        let snap = self.snapshot();
        let peers = LoggingPeers { inner: self.peers.as_ref(), contacted: Mutex::new(Vec::new()) };
        let result = self.run(&snap, sql, no_forward, &peers);
        self.log.lock().unwrap_or_else(PoisonError::into_inner).push(QueryLogEntry {
            sql: sql.to_string(),
            no_forward,
            forwarded_to: peers.contacted.into_inner().unwrap_or_else(PoisonError::into_inner),
            generation: snap.generation,
            outcome: result.as_ref().map(ResultTable::len).map_err(|e| e.code().to_string()),
        });
        result
    }

    fn run(&self, snap: &Snapshot, sql: &str, no_forward: bool, peers: &dyn PeerClient) -> Result<ResultTable> {
        let ast = parse_sql(sql)?;
        let bq = resolve_names(&ast, &snap.dictionary)?;
        if no_forward {
            if let Some((_, t)) = bq.remote_tables().next() {
                return Err(Error::UnknownTable(t.logical.clone()));
            }
        }
        let partition = partition_tables(&bq, &RlsResolver { engine: self })?;
        let qp = plan(&bq, &partition)?;
        debug_assert!(!no_forward || qp.subqueries.iter().all(|s| matches!(s.target, Target::Local(_))));
        execute_plan(&qp, &snap.connections, Some(peers), ExecOptions { cell_cap: self.config.cell_cap, concurrent: true })
    }

    fn load_spec(&self, source: &SpecSource) -> Result<(String, String)> {
        match source {
            SpecSource::Inline(text) => Ok((text.clone(), String::new())),
            SpecSource::Url(url) if url.starts_with("http://") || url.starts_with("https://") => {
                Ok((self.http.fetch(url)?, url.clone()))
            }
            SpecSource::Url(url) => {
                let path = url.strip_prefix("file:").unwrap_or(url);
                let text = std::fs::read_to_string(path).map_err(|e| Error::UnresolvableRef(format!("{url}: {e}")))?;
                Ok((text, url.clone()))
            }
        }
    }

    /// Adds a source at runtime. On any failure the server state is left
    /// exactly as it was.
    pub fn register(&self, reg: &Registration) -> Result<String> {
        let _guard = self.mutation.lock().unwrap_or_else(PoisonError::into_inner);
        let (text, reference) = self.load_spec(&reg.spec)?;
        let lower = parse_lower_spec(text.as_bytes())?;
        let source_id = lower.database.clone();
        let current = self.snapshot();
        if current.upper.entry(&source_id).is_some() {
            return Err(Error::DuplicateSourceId(source_id));
        }
        let entry = UpperSpecEntry {
            source_id: source_id.clone(),
            url: reg.url.clone(),
            driver_name: reg.driver.clone(),
            lower_spec_ref: if reference.is_empty() { format!("inline:{source_id}") } else { reference },
        };
        let mut next = (*current).clone();
        next.upper.entries.push(entry);
        next.upper.validate()?;
        next.lowers.insert(source_id.clone(), lower);
        next.dictionary = build_dictionary(&next.upper, &next.lowers)?;

        let conn = self
            .drivers
            .open(&reg.driver, &reg.url, &reg.username, &reg.password)
            .map_err(|e| Error::BackendUnavailable(format!("{source_id}: {e}")))?;
        if let Err(e) = conn.list_tables() {
            conn.close();
            return Err(Error::BackendUnavailable(format!("{source_id}: {e}")));
        }
        let tables = table_names(&next.lowers[&source_id]);
        if let Some(locator) = &self.locator {
            if let Err(e) = locator.publish(&self.config.public_url, &tables) {
                conn.close();
                return Err(e);
            }
        }
        next.fingerprints.insert(source_id.clone(), fingerprint(serialize_lower_spec(&next.lowers[&source_id]).as_bytes()));
        next.connections.insert(source_id.clone(), conn);
        next.generation += 1;
        self.publish_snapshot(next);
        Ok(source_id)
    }

    /// Registers every source of an upper spec. Lower-spec references are
    /// resolved relative to `base_dir` unless absolute or URLs.
    pub fn load_upper(&self, upper_xml: &str, base_dir: &Path) -> Result<Vec<String>> {
        let upper = parse_upper_spec_only(upper_xml.as_bytes())?;
        let mut ids = Vec::new();
        for e in &upper.entries {
            let r = &e.lower_spec_ref;
            let spec = if r.contains("://") || r.starts_with("file:") || Path::new(r).is_absolute() {
                SpecSource::Url(r.clone())
            } else {
                SpecSource::Url(base_dir.join(r).to_string_lossy().into_owned())
            };
            let (user, pw) = self.config.credentials.get(&e.source_id).cloned().unwrap_or_default();
            let id = self.register(&Registration { spec, driver: e.driver_name.clone(), url: e.url.clone(), username: user, password: pw })?;
            if id != e.source_id {
                return Err(Error::MalformedSpec(format!(
                    "source `{}` points at a spec for database `{id}`",
                    e.source_id
                )));
            }
            ids.push(id);
        }
        Ok(ids)
    }

    /// Re-introspects every source; changed specs replace the old ones and
    /// the replica service is told about added and dropped tables.
    pub fn refresh(&self) -> RefreshReport {
        let _guard = self.mutation.lock().unwrap_or_else(PoisonError::into_inner);
        let current = self.snapshot();
        let mut next = (*current).clone();
        let mut report = RefreshReport::default();
        for entry in &current.upper.entries {
            let id = &entry.source_id;
            let Some(conn) = current.connections.get(id) else { continue };
            let fresh = match introspect_onto(conn, &current.lowers[id]) {
                Ok(s) => s,
                Err(e) => {
                    report.errors.push((id.clone(), e));
                    continue;
                }
            };
            let fp = fingerprint(serialize_lower_spec(&fresh).as_bytes());
            let cmp = compare_fingerprints(&current.fingerprints[id], &fp);
            if !cmp.changed() {
                continue;
            }
            let mut candidate = next.lowers.clone();
            candidate.insert(id.clone(), fresh.clone());
            let dict = match build_dictionary(&next.upper, &candidate) {
                Ok(d) => d,
                Err(e) => {
                    report.errors.push((id.clone(), e));
                    continue;
                }
            };
            if let Some(locator) = &self.locator {
                let before: BTreeSet<String> = table_names(&current.lowers[id]).into_iter().collect();
                let after: BTreeSet<String> = table_names(&fresh).into_iter().collect();
                let added: Vec<String> = after.difference(&before).cloned().collect();
                let dropped: Vec<String> = before.difference(&after).cloned().collect();
                let url = &self.config.public_url;
                let sync = (if added.is_empty() { Ok(0) } else { locator.publish(url, &added) })
                    .and_then(|_| if dropped.is_empty() { Ok(0) } else { locator.unpublish(url, &dropped) });
                if let Err(e) = sync {
                    report.errors.push((id.clone(), e));
                }
            }
            next.lowers = candidate;
            next.dictionary = dict;
            next.fingerprints.insert(id.clone(), fp);
            report.changed.push((id.clone(), cmp));
        }
        if !report.changed.is_empty() {
            next.generation += 1;
            self.publish_snapshot(next);
        }
        report
    }

    /// Publishes every registered table again, e.g. after the RLS restarted.
    pub fn republish(&self) -> Result<usize> {
        let Some(locator) = &self.locator else { return Ok(0) };
        let snap = self.snapshot();
        let tables: Vec<String> = snap.lowers.values().flat_map(table_names).collect();
        locator.publish(&self.config.public_url, &tables)
    }

    /// Closes every backend connection. Queries fail afterwards.
    pub fn close(&self) {
        self.begin_shutdown();
        for c in self.snapshot().connections.values() {
            c.close();
        }
    }
}

/// Runs [`Engine::refresh`] every `interval` until stopped.
pub struct RefreshTimer {
    stop: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RefreshTimer {
    pub fn start(engine: Arc<Engine>, interval: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            let tick = Duration::from_millis(20).min(interval);
            let mut last = Instant::now();
            while !flag.load(Ordering::SeqCst) {
                std::thread::sleep(tick);
                if last.elapsed() >= interval && !flag.load(Ordering::SeqCst) {
                    engine.refresh();
                    last = Instant::now();
                }
            }
        });
        RefreshTimer { stop, thread: Some(thread) }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RefreshTimer {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Resolves a path relative to the directory holding `file`.
pub fn sibling_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}
