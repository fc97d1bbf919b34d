//! The two-level XSpec catalog.
//!
//! A *lower* spec describes one database: its tables and columns under both
//! physical and logical names, plus keys and relationships. The single
//! *upper* spec of a federation server lists each source's connection URL,
//! driver and lower-spec reference. Merging them yields the
//! [`DataDictionary`] that queries are resolved against.

mod dictionary;
mod fingerprint;
mod introspect;
mod xspec;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::value::DataType;

pub use dictionary::{build_dictionary, ColumnBinding, DataDictionary, TableBinding};
pub use fingerprint::{compare_fingerprints, fingerprint, specs_changed, Comparison, Fingerprint};
pub use introspect::{introspect, introspect_onto};
pub use xspec::{
    parse_lower_spec, parse_upper_spec, parse_upper_spec_only, serialize_lower_spec,
    serialize_upper_spec,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub physical_name: String,
    pub logical_name: String,
    pub data_type: DataType,
    pub nullable: bool,
}

impl ColumnSpec {
    /// A nullable column whose logical name equals its physical name.
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        let name = name.into();
        ColumnSpec { physical_name: name.clone(), logical_name: name, data_type, nullable: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSpec {
    pub physical_name: String,
    pub logical_name: String,
    pub columns: Vec<ColumnSpec>,
    pub key_columns: Vec<String>,
}

impl TableSpec {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>) -> Self {
        let name = name.into();
        TableSpec { physical_name: name.clone(), logical_name: name, columns, key_columns: vec![] }
    }

    pub fn column(&self, logical: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.logical_name == logical)
    }

    pub fn validate(&self) -> Result<()> {
        check_identifier(&self.physical_name, "table name")?;
        check_identifier(&self.logical_name, "table logical name")?;
        if self.columns.is_empty() {
            return Err(Error::MalformedSpec(format!("table `{}` has no columns", self.logical_name)));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            check_identifier(&c.physical_name, "column name")?;
            check_identifier(&c.logical_name, "column logical name")?;
            if !seen.insert(c.logical_name.as_str()) {
                return Err(Error::DuplicateName(format!(
                    "column `{}` in table `{}`",
                    c.logical_name, self.logical_name
                )));
            }
        }
        for k in &self.key_columns {
            if !seen.contains(k.as_str()) {
                return Err(Error::MalformedSpec(format!(
                    "key column `{k}` is not a column of `{}`",
                    self.logical_name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationshipSpec {
    pub from_table: String,
    pub from_columns: Vec<String>,
    pub to_table: String,
    pub to_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowerSpec {
    pub database: String,
    pub tables: Vec<TableSpec>,
    pub relationships: Vec<RelationshipSpec>,
}

impl LowerSpec {
    pub fn new(database: impl Into<String>) -> Self {
        LowerSpec { database: database.into(), tables: vec![], relationships: vec![] }
    }

    pub fn table(&self, logical: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.logical_name == logical)
    }

    pub fn validate(&self) -> Result<()> {
        check_identifier(&self.database, "database name")?;
        let mut names = HashSet::new();
        for t in &self.tables {
            t.validate()?;
            if !names.insert(t.logical_name.as_str()) {
                return Err(Error::DuplicateName(format!("table `{}`", t.logical_name)));
            }
        }
        for r in &self.relationships {
            if r.from_columns.is_empty() || r.from_columns.len() != r.to_columns.len() {
                return Err(Error::MalformedSpec(format!(
                    "relationship {} -> {} needs matching non-empty column lists",
                    r.from_table, r.to_table
                )));
            }
            for (table, cols) in [(&r.from_table, &r.from_columns), (&r.to_table, &r.to_columns)] {
                let spec = self
                    .table(table)
                    .ok_or_else(|| Error::DanglingRelationship(format!("table `{table}`")))?;
                if let Some(c) = cols.iter().find(|c| spec.column(c).is_none()) {
                    return Err(Error::DanglingRelationship(format!("column `{table}.{c}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpperSpecEntry {
    pub source_id: String,
    pub url: String,
    pub driver_name: String,
    pub lower_spec_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UpperSpec {
    pub entries: Vec<UpperSpecEntry>,
}

impl UpperSpec {
    pub fn entry(&self, source_id: &str) -> Option<&UpperSpecEntry> {
        self.entries.iter().find(|e| e.source_id == source_id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            for (field, v) in [
                ("id", &e.source_id),
                ("url", &e.url),
                ("driver", &e.driver_name),
                ("spec", &e.lower_spec_ref),
            ] {
                if v.is_empty() {
                    return Err(Error::MalformedSpec(format!("source entry has empty `{field}`")));
                }
            }
            if !ids.insert(e.source_id.as_str()) {
                return Err(Error::DuplicateSourceId(e.source_id.clone()));
            }
        }
        Ok(())
    }
}

fn check_identifier(name: &str, what: &str) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) || name.contains(',') {
        return Err(Error::MalformedSpec(format!(
            "{what} `{name}` must be non-empty without whitespace or commas"
        )));
    }
    Ok(())
}
