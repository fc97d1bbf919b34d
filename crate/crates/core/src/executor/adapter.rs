use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::table::{Column, ResultTable};
use crate::value::Value;

/// Opaque connection handle issued by a [`BackendAdapter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub u64);

/// A physical table as a backend reports it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
}

/// The wrapper contract every relational store is reached through: open a
/// handle, then run select-fields / table-names / where-clause requests on
/// it. `execute` never writes. The load methods exist only for warehouse and
/// mart targets of the ETL pipeline; read-only adapters keep the defaults.
pub trait BackendAdapter: Send + Sync {
    fn driver_name(&self) -> &str;

    /// Opens a connection and registers it in the adapter's handle registry.
    fn open(&self, url: &str, username: &str, password: &str) -> Result<Handle>;

    /// `select_fields` are `binding.column`, `tables` are `name` or
    /// `name binding`, `where_clause` is a conjunction in the front-end
    /// grammar (empty for none).
    fn execute(&self, handle: Handle, select_fields: &[String], tables: &[String], where_clause: &str)
        -> Result<ResultTable>;

    fn list_tables(&self, handle: Handle) -> Result<Vec<TableSchema>>;

    fn close(&self, handle: Handle);

    fn create_table(&self, _handle: Handle, name: &str, _columns: &[Column]) -> Result<()> {
        Err(Error::BackendUnavailable(format!("{} cannot create table `{name}`", self.driver_name())))
    }

    /// Appends rows atomically: either all rows land or none do.
    fn append_rows(&self, _handle: Handle, table: &str, _rows: Vec<Vec<Value>>) -> Result<usize> {
        Err(Error::BackendUnavailable(format!("{} cannot load `{table}`", self.driver_name())))
    }
}

/// An adapter together with an open handle.
#[derive(Clone)]
pub struct Connection {
    pub adapter: Arc<dyn BackendAdapter>,
    pub handle: Handle,
}

impl Connection {
    pub fn open(adapter: Arc<dyn BackendAdapter>, url: &str, username: &str, password: &str) -> Result<Self> {
        let handle = adapter.open(url, username, password)?;
        Ok(Connection { adapter, handle })
    }

    pub fn execute(&self, select_fields: &[String], tables: &[String], where_clause: &str) -> Result<ResultTable> {
        self.adapter.execute(self.handle, select_fields, tables, where_clause)
    }

    pub fn list_tables(&self) -> Result<Vec<TableSchema>> {
        self.adapter.list_tables(self.handle)
    }

    pub fn close(&self) {
        self.adapter.close(self.handle)
    }
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("driver", &self.adapter.driver_name())
            .field("handle", &self.handle)
            .finish()
    }
}
