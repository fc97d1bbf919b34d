//! In-process deployments: a replica location service plus federation
//! nodes backed by reference stores, all on loopback ports.

use std::sync::Arc;
use std::time::Duration;

use gridfed_core::catalog::{introspect, serialize_lower_spec, LowerSpec};
use gridfed_core::executor::{Connection, Database, DriverRegistry, ReferenceDriver, DEFAULT_CELL_CAP};
use gridfed_core::remote::ReplicaLocator;
use gridfed_core::rls::SharedReplicaMapping;
use gridfed_core::Result;

use crate::client::{HttpClient, RlsClient, Timeouts};
use crate::engine::{Engine, Registration, ServerConfig, SpecSource};
use crate::http::{bind, rls_router, serve, FederationServer, ServerHandle, DEFAULT_DRAIN_TIMEOUT};

pub struct RlsServer {
    pub mapping: Arc<SharedReplicaMapping>,
    http: ServerHandle,
}

impl RlsServer {
    pub fn start(addr: &str) -> Result<Self> {
        let mapping = Arc::new(SharedReplicaMapping::new());
        let http = serve(rls_router(mapping.clone()), addr, DEFAULT_DRAIN_TIMEOUT)?;
        Ok(RlsServer { mapping, http })
    }

    pub fn url(&self) -> String {
        self.http.url()
    }

    pub fn shutdown(self) {
        self.http.shutdown();
    }
}

#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub rls_url: Option<String>,
    /// Starts the refresh timer with this interval.
    pub refresh_interval: Option<Duration>,
    pub cell_cap: usize,
    pub timeouts: Timeouts,
}

impl Default for NodeOptions {
    fn default() -> Self {
        NodeOptions { rls_url: None, refresh_interval: None, cell_cap: DEFAULT_CELL_CAP, timeouts: Timeouts::default() }
    }
}

impl NodeOptions {
    pub fn with_rls(url: impl Into<String>) -> Self {
        NodeOptions { rls_url: Some(url.into()), ..Default::default() }
    }
}

/// A federation server whose sources live in one reference driver.
pub struct Node {
    pub server: FederationServer,
    pub driver: Arc<ReferenceDriver>,
}

/// The lower spec a reference store would be introspected as.
pub fn spec_for(db: &Database, database_name: &str) -> Result<LowerSpec> {
    let driver = Arc::new(ReferenceDriver::new());
    driver.add_store("probe", db.clone());
    let conn = Connection::open(driver, "mem:probe", "", "")?;
    introspect(&conn, database_name)
}

impl Node {
    pub fn start(addr: &str, options: NodeOptions) -> Result<Self> {
        let listener = bind(addr)?;
        let local = listener.local_addr().map_err(|e| gridfed_core::Error::Io(e.to_string()))?;
        let mut config = ServerConfig::new(format!("http://{local}"));
        config.rls_url = options.rls_url.clone();
        config.cell_cap = options.cell_cap;
        if let Some(i) = options.refresh_interval {
            config.refresh_interval = i;
        }
        let driver = Arc::new(ReferenceDriver::new());
        let locator: Option<Arc<dyn ReplicaLocator>> = options
            .rls_url
            .as_ref()
            .map(|u| Arc::new(RlsClient::new(u.clone(), options.timeouts)) as Arc<dyn ReplicaLocator>);
        let engine = Engine::new(
            config,
            DriverRegistry::new().with(driver.clone()),
            Arc::new(HttpClient::new(options.timeouts)),
            locator,
        )?;
        let server = FederationServer::start(Arc::new(engine), listener, options.refresh_interval.is_some())?;
        Ok(Node { server, driver })
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.server.engine
    }

    /// Adds `db` as store `source_id` and registers it with its
    /// introspected spec.
    pub fn add_source(&self, source_id: &str, db: Database) -> Result<String> {
        let spec = serialize_lower_spec(&spec_for(&db, source_id)?);
        self.driver.add_store(source_id, db);
        self.engine().register(&Registration {
            spec: SpecSource::Inline(spec),
            driver: ReferenceDriver::NAME.into(),
            url: format!("mem:{source_id}"),
            username: String::new(),
            password: String::new(),
        })
    }

    pub fn shutdown(self) {
        self.server.shutdown();
    }
}
