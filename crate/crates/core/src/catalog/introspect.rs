use std::collections::HashSet;

use super::{ColumnSpec, LowerSpec, TableSpec};
use crate::error::{Error, Result};
use crate::executor::Connection;

/// Builds a lower spec from what the backend reports. Logical names equal
/// physical names; every column is nullable; no keys or relationships.
pub fn introspect(conn: &Connection, database_name: &str) -> Result<LowerSpec> {
    let schemas = conn.list_tables().map_err(unavailable)?;
    let mut spec = LowerSpec::new(database_name);
    for s in schemas {
        spec.tables.push(TableSpec::new(
            s.name,
            s.columns.into_iter().map(|c| ColumnSpec::new(c.name, c.data_type)).collect(),
        ));
    }
    Ok(spec)
}

/// Re-introspects a backend on top of a curated spec: tables and columns
/// still present keep their logical names, nullability, order and keys;
/// new ones are appended under their physical names; vanished ones are
/// dropped along with keys and relationships that mention them.
pub fn introspect_onto(conn: &Connection, previous: &LowerSpec) -> Result<LowerSpec> {
    let fresh = introspect(conn, &previous.database)?;
    let mut spec = LowerSpec::new(previous.database.clone());

    let mut seen = HashSet::new();
    for old in &previous.tables {
        let Some(now) = fresh.tables.iter().find(|t| t.physical_name == old.physical_name) else {
            continue;
        };
        seen.insert(now.physical_name.clone());
        let mut columns = Vec::new();
        for oc in &old.columns {
            if let Some(nc) = now.columns.iter().find(|c| c.physical_name == oc.physical_name) {
                columns.push(ColumnSpec { data_type: nc.data_type, ..oc.clone() });
            }
        }
        for nc in &now.columns {
            let known = old.columns.iter().any(|c| c.physical_name == nc.physical_name);
            let clash = columns.iter().any(|c| c.logical_name == nc.logical_name);
            if !known && !clash {
                columns.push(nc.clone());
            }
        }
        if columns.is_empty() {
            continue;
        }
        let logical: HashSet<&str> = columns.iter().map(|c| c.logical_name.as_str()).collect();
        let key_columns = if old.key_columns.iter().all(|k| logical.contains(k.as_str())) {
            old.key_columns.clone()
        } else {
            Vec::new()
        };
        spec.tables.push(TableSpec {
            physical_name: old.physical_name.clone(),
            logical_name: old.logical_name.clone(),
            columns,
            key_columns,
        });
    }
    for t in fresh.tables {
        if !seen.contains(&t.physical_name) && spec.table(&t.logical_name).is_none() {
            spec.tables.push(t);
        }
    }
    spec.relationships = previous
        .relationships
        .iter()
        .filter(|r| {
            let has = |table: &str, cols: &[String]| {
                spec.table(table).is_some_and(|t| cols.iter().all(|c| t.column(c).is_some()))
            };
            has(&r.from_table, &r.from_columns) && has(&r.to_table, &r.to_columns)
        })
        .cloned()
        .collect();
    Ok(spec)
}

fn unavailable(e: Error) -> Error {
    match e {
        Error::BackendUnavailable(_) => e,
        other => Error::BackendUnavailable(other.to_string()),
    }
}
