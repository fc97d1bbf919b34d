use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type", with = "data_type_serde")]
    pub data_type: DataType,
}

impl Column {
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        Column { name: name.into(), data_type }
    }
}

/// A column-typed two-dimensional grid of cells: the result currency passed
/// between backends, the merge phase, peers and clients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn new(columns: Vec<Column>) -> Self {
        ResultTable { columns, rows: Vec::new() }
    }

    /// Builds a table, checking row arity and cell kinds.
    pub fn with_rows(columns: Vec<Column>, rows: Vec<Vec<Value>>) -> Result<Self> {
        let table = ResultTable { columns, rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(Error::TypeMismatch(format!(
                    "row {r} has {} cells, expected {}",
                    row.len(),
                    self.columns.len()
                )));
            }
            for (cell, col) in row.iter().zip(&self.columns) {
                if !cell.fits(col.data_type) {
                    return Err(Error::TypeMismatch(format!(
                        "row {r}: `{cell}` does not fit {} column `{}`",
                        col.data_type, col.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Sorts rows lexicographically by all columns, nulls last.
    pub fn canonical_sort(&mut self) {
        self.rows.sort_unstable();
    }

    pub fn into_canonical(mut self) -> Self {
        self.canonical_sort();
        self
    }
}

pub(crate) mod data_type_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::value::DataType;

    pub fn serialize<S: Serializer>(ty: &DataType, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(ty.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DataType, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
