//! Seams to the outside world: peer federation servers and the replica
//! location service. The HTTP implementations live in the server crate;
//! tests plug in-process implementations in here.

use crate::catalog::ColumnSpec;
use crate::error::Result;
use crate::table::ResultTable;

/// Runs rendered SQL on a peer federation server.
pub trait PeerClient: Send + Sync {
    fn query(&self, server_url: &str, sql: &str, no_forward: bool) -> Result<ResultTable>;

    /// Columns of a logical table as the peer names them, `None` when the
    /// peer does not host it.
    fn describe_table(&self, server_url: &str, table: &str) -> Result<Option<Vec<ColumnSpec>>>;
}

/// Publication and lookup of logical table names across servers.
pub trait ReplicaLocator: Send + Sync {
    fn publish(&self, server_url: &str, tables: &[String]) -> Result<usize>;
    fn unpublish(&self, server_url: &str, tables: &[String]) -> Result<usize>;
    /// Hosting servers, lexicographically ordered.
    fn lookup(&self, table: &str) -> Result<Vec<String>>;
}

/// Where a table that is not registered locally lives, and its columns as
/// that host names them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteTableInfo {
    pub server_url: String,
    pub columns: Vec<ColumnSpec>,
}

pub trait RemoteResolver {
    /// `Ok(None)` when no server hosts the table.
    fn locate(&self, logical_table: &str) -> Result<Option<RemoteTableInfo>>;
}

/// A resolver that knows no remote tables.
pub struct NoRemotes;

impl RemoteResolver for NoRemotes {
    fn locate(&self, _logical_table: &str) -> Result<Option<RemoteTableInfo>> {
        Ok(None)
    }
}
