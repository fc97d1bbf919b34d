//! Blocking HTTP clients for peer federation servers and the replica
//! location service.

use std::time::Duration;

use gridfed_core::catalog::{parse_lower_spec, ColumnSpec};
use gridfed_core::remote::{PeerClient, ReplicaLocator};
use gridfed_core::wire::{
    decode_error, decode_table, from_json, to_json, AckResponse, LookupResponse, PublishRequest, QueryRequest,
    RefreshResponse, RegisterRequest, RegisterResponse, SchemaResponse,
};
use gridfed_core::{Error, ResultTable, Result};
use serde::Serialize;
use ureq::Agent;

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    pub request: Duration,
    pub connect: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { request: DEFAULT_REQUEST_TIMEOUT, connect: DEFAULT_CONNECT_TIMEOUT }
    }
}

/// One agent per client; safe to share between threads.
#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: Agent,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(Timeouts::default())
    }
}

fn transport_error(url: &str, e: ureq::Error) -> Error {
    match e {
        ureq::Error::BadUri(m) => Error::MalformedUrl(format!("{url}: {m}")),
        other => Error::RemoteTimeout(format!("{url}: {other}")),
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

impl HttpClient {
    pub fn new(timeouts: Timeouts) -> Self {
        let config = Agent::config_builder()
            .timeout_global(Some(timeouts.request))
            .timeout_connect(Some(timeouts.connect))
            .http_status_as_error(false)
            .build();
        HttpClient { agent: config.into() }
    }

    fn finish(url: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<String> {
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| transport_error(url, e))?;
        if status == 200 {
            Ok(body)
        } else {
            Err(decode_error(url, &body))
        }
    }

    /// POSTs a JSON body to `base` + `path` and returns the 200 body text.
    pub fn post_raw(&self, base: &str, path: &str, body: &str) -> Result<String> {
        let url = join(base, path);
        let resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| transport_error(&url, e))?;
        Self::finish(&url, resp)
    }

    pub fn get_raw(&self, base: &str, path_and_query: &str) -> Result<String> {
        let url = join(base, path_and_query);
        let resp = self.agent.get(&url).call().map_err(|e| transport_error(&url, e))?;
        Self::finish(&url, resp)
    }

    fn post<T: Serialize>(&self, base: &str, path: &str, body: &T) -> Result<String> {
        self.post_raw(base, path, &to_json(body))
    }

    /// Downloads a document, e.g. a lower-level spec.
    pub fn fetch(&self, url: &str) -> Result<String> {
        let resp = self.agent.get(url).call().map_err(|e| transport_error(url, e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Error::UnresolvableRef(format!("{url} answered {status}")));
        }
        Self::finish(url, resp)
    }

    pub fn remote_query(&self, server: &str, sql: &str, no_forward: bool) -> Result<ResultTable> {
        let body = self.post(server, "/query", &QueryRequest { sql: sql.into(), no_forward })?;
        decode_table(&body)
    }

    pub fn register(&self, server: &str, req: &RegisterRequest) -> Result<String> {
        Ok(from_json::<RegisterResponse>(&self.post(server, "/register", req)?)?.source_id)
    }

    pub fn refresh(&self, server: &str) -> Result<Vec<String>> {
        Ok(from_json::<RefreshResponse>(&self.post_raw(server, "/refresh", "")?)?.changed)
    }

    pub fn schema(&self, server: &str) -> Result<SchemaResponse> {
        from_json(&self.get_raw(server, "/schema")?)
    }

    pub fn health(&self, server: &str) -> Result<()> {
        self.get_raw(server, "/health").map(drop)
    }

    pub fn rls_publish(&self, rls: &str, server: &str, tables: &[String]) -> Result<usize> {
        let body = self.post(rls, "/rls/publish", &PublishRequest { server: server.into(), tables: tables.to_vec() })?;
        Ok(from_json::<AckResponse>(&body)?.ack)
    }

    pub fn rls_unpublish(&self, rls: &str, server: &str, tables: &[String]) -> Result<usize> {
        let body = self.post(rls, "/rls/unpublish", &PublishRequest { server: server.into(), tables: tables.to_vec() })?;
        Ok(from_json::<AckResponse>(&body)?.ack)
    }

    pub fn rls_lookup(&self, rls: &str, table: &str) -> Result<Vec<String>> {
        let encoded: String = url_encode(table);
        Ok(from_json::<LookupResponse>(&self.get_raw(rls, &format!("/rls/lookup?table={encoded}"))?)?.servers)
    }
}

fn url_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

impl PeerClient for HttpClient {
    fn query(&self, server_url: &str, sql: &str, no_forward: bool) -> Result<ResultTable> {
        self.remote_query(server_url, sql, no_forward)
    }

    fn describe_table(&self, server_url: &str, table: &str) -> Result<Option<Vec<ColumnSpec>>> {
        for doc in self.schema(server_url)?.lowers {
            let lower = parse_lower_spec(doc.spec.as_bytes()).map_err(|e| Error::DecodeError(e.to_string()))?;
            if let Some(t) = lower.table(table) {
                return Ok(Some(t.columns.clone()));
            }
        }
        Ok(None)
    }
}

/// The replica location service at one URL.
#[derive(Debug, Clone)]
pub struct RlsClient {
    pub url: String,
    pub http: HttpClient,
}

impl RlsClient {
    pub fn new(url: impl Into<String>, timeouts: Timeouts) -> Self {
        RlsClient { url: url.into(), http: HttpClient::new(timeouts) }
    }
}

impl ReplicaLocator for RlsClient {
    fn publish(&self, server_url: &str, tables: &[String]) -> Result<usize> {
        self.http.rls_publish(&self.url, server_url, tables)
    }

    fn unpublish(&self, server_url: &str, tables: &[String]) -> Result<usize> {
        self.http.rls_unpublish(&self.url, server_url, tables)
    }

    fn lookup(&self, table: &str) -> Result<Vec<String>> {
        self.http.rls_lookup(&self.url, table)
    }
}
