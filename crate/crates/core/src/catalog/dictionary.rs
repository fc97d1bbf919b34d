use std::collections::BTreeMap;

use super::{ColumnSpec, LowerSpec, UpperSpec};
use crate::error::{Error, Result};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableBinding {
    pub source_id: String,
    pub physical_name: String,
    /// Columns in spec order, used to expand `*`.
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnBinding {
    pub physical_name: String,
    pub data_type: DataType,
}

/// The merged logical namespace of one federation server.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataDictionary {
    pub table_bindings: BTreeMap<String, TableBinding>,
    pub column_bindings: BTreeMap<(String, String), ColumnBinding>,
}

impl DataDictionary {
    pub fn table(&self, logical: &str) -> Option<&TableBinding> {
        self.table_bindings.get(logical)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnBinding> {
        self.column_bindings.get(&(table.to_string(), column.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.table_bindings.is_empty()
    }

    /// Logical table names bound to `source_id`.
    pub fn tables_of(&self, source_id: &str) -> Vec<String> {
        self.table_bindings
            .iter()
            .filter(|(_, b)| b.source_id == source_id)
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// Merges every registered lower spec into one dictionary. A logical table
/// name may be bound to only one local source.
pub fn build_dictionary(upper: &UpperSpec, lowers: &BTreeMap<String, LowerSpec>) -> Result<DataDictionary> {
    let mut dict = DataDictionary::default();
    for entry in &upper.entries {
        let lower = lowers
            .get(&entry.source_id)
            .ok_or_else(|| Error::UnresolvableRef(entry.lower_spec_ref.clone()))?;
        for table in &lower.tables {
            if dict.table_bindings.contains_key(&table.logical_name) {
                return Err(Error::LogicalNameCollision(table.logical_name.clone()));
            }
            dict.table_bindings.insert(
                table.logical_name.clone(),
                TableBinding {
                    source_id: entry.source_id.clone(),
                    physical_name: table.physical_name.clone(),
                    columns: table.columns.clone(),
                },
            );
            for c in &table.columns {
                dict.column_bindings.insert(
                    (table.logical_name.clone(), c.logical_name.clone()),
                    ColumnBinding { physical_name: c.physical_name.clone(), data_type: c.data_type },
                );
            }
        }
    }
    Ok(dict)
}
