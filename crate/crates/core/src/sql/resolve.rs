//! Name resolution: binds the logical names of a [`QueryAst`] against a
//! [`DataDictionary`], marking each table local or remote.

use std::collections::BTreeMap;

use super::ast::*;
use crate::catalog::{ColumnSpec, DataDictionary};
use crate::error::{Error, Result};
use crate::value::{parse_timestamp, DataType};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableLocation {
    Local { source_id: String },
    /// Not registered here; located through the replica service.
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    /// Alias, or the logical name when unaliased.
    pub binding: String,
    pub logical: String,
    /// Physical name for local tables; the logical name for remote ones,
    /// since peers resolve their own physical names.
    pub physical: String,
    pub location: TableLocation,
    /// `None` until a remote table has been described by its host.
    pub columns: Option<Vec<ColumnSpec>>,
}

impl BoundTable {
    pub fn is_local(&self) -> bool {
        matches!(self.location, TableLocation::Local { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundColumn {
    /// Index into [`BoundQuery::tables`].
    pub table: usize,
    pub logical: String,
    pub physical: String,
    pub data_type: DataType,
}

/// A column reference, bound or waiting for a remote table's schema.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnSlot {
    Bound(BoundColumn),
    Deferred(ColumnRef),
}

impl ColumnSlot {
    pub fn bound(&self) -> Option<&BoundColumn> {
        match self {
            ColumnSlot::Bound(c) => Some(c),
            ColumnSlot::Deferred(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundOperand {
    Column(ColumnSlot),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPredicate {
    pub left: ColumnSlot,
    pub op: CompareOp,
    pub right: BoundOperand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputColumn {
    pub name: String,
    pub column: ColumnSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    pub ast: QueryAst,
    pub tables: Vec<BoundTable>,
    /// Final projection; empty while `star_pending`.
    pub select: Vec<OutputColumn>,
    /// `SELECT *` over a remote table that has not been described yet.
    pub star_pending: bool,
    pub predicates: Vec<BoundPredicate>,
    pub order_by: Vec<(ColumnSlot, bool)>,
    pub limit: Option<u64>,
}

impl BoundQuery {
    /// Every column reference carries exactly one binding.
    pub fn is_complete(&self) -> bool {
        let bound = |s: &ColumnSlot| s.bound().is_some();
        !self.star_pending
            && self.select.iter().all(|o| bound(&o.column))
            && self.predicates.iter().all(|p| {
                bound(&p.left)
                    && match &p.right {
                        BoundOperand::Column(c) => bound(c),
                        BoundOperand::Literal(_) => true,
                    }
            })
            && self.order_by.iter().all(|(c, _)| bound(c))
    }

    pub fn remote_tables(&self) -> impl Iterator<Item = (usize, &BoundTable)> {
        self.tables.iter().enumerate().filter(|(_, t)| !t.is_local())
    }
}

/// Binds every table and column of `ast` against `dict`. Tables absent from
/// the dictionary become [`TableLocation::Remote`] and their columns stay
/// deferred until [`bind_remote`] supplies the host's schema.
pub fn resolve_names(ast: &QueryAst, dict: &DataDictionary) -> Result<BoundQuery> {
    let tables = ast
        .from
        .iter()
        .map(|t| match dict.table(&t.name) {
            Some(b) => BoundTable {
                binding: t.binding().to_string(),
                logical: t.name.clone(),
                physical: b.physical_name.clone(),
                location: TableLocation::Local { source_id: b.source_id.clone() },
                columns: Some(b.columns.clone()),
            },
            None => BoundTable {
                binding: t.binding().to_string(),
                logical: t.name.clone(),
                physical: t.name.clone(),
                location: TableLocation::Remote,
                columns: None,
            },
        })
        .collect();
    bind(ast, tables)
}

/// Completes a bound query once the hosts of its remote tables have
/// described them. `schemas` is keyed by table index; remote columns are
/// addressed by their logical names.
pub fn bind_remote(bq: &BoundQuery, schemas: &BTreeMap<usize, Vec<ColumnSpec>>) -> Result<BoundQuery> {
    let mut tables = bq.tables.clone();
    for (idx, cols) in schemas {
        let t = tables.get_mut(*idx).ok_or_else(|| Error::UnknownTable(format!("#{idx}")))?;
        t.columns = Some(
            cols.iter()
                .map(|c| ColumnSpec { physical_name: c.logical_name.clone(), ..c.clone() })
                .collect(),
        );
    }
    bind(&bq.ast, tables)
}

fn bind(ast: &QueryAst, tables: Vec<BoundTable>) -> Result<BoundQuery> {
    let binder = Binder { tables: &tables };
    let (select, star_pending) = match &ast.select {
        SelectList::Star => {
            if tables.iter().any(|t| t.columns.is_none()) {
                (Vec::new(), true)
            } else {
                let qualify = tables.len() > 1;
                let mut out = Vec::new();
                for (i, t) in tables.iter().enumerate() {
                    for c in t.columns.as_deref().unwrap_or_default() {
                        let name = if qualify {
                            format!("{}.{}", t.binding, c.logical_name)
                        } else {
                            c.logical_name.clone()
                        };
                        out.push(OutputColumn { name, column: ColumnSlot::Bound(binder.column_of(i, c)) });
                    }
                }
                (out, false)
            }
        }
        SelectList::Items(items) => (
            items
                .iter()
                .map(|c| Ok(OutputColumn { name: c.to_string(), column: binder.slot(c)? }))
                .collect::<Result<Vec<_>>>()?,
            false,
        ),
    };
    let predicates = ast
        .predicates
        .iter()
        .map(|p| binder.predicate(p))
        .collect::<Result<Vec<_>>>()?;
    let order_by = ast
        .order_by
        .iter()
        .map(|o| Ok((binder.slot(&o.column)?, o.descending)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundQuery { ast: ast.clone(), tables, select, star_pending, predicates, order_by, limit: ast.limit })
}

struct Binder<'a> {
    tables: &'a [BoundTable],
}

impl Binder<'_> {
    fn column_of(&self, table: usize, c: &ColumnSpec) -> BoundColumn {
        BoundColumn {
            table,
            logical: c.logical_name.clone(),
            physical: c.physical_name.clone(),
            data_type: c.data_type,
        }
    }

    fn slot(&self, r: &ColumnRef) -> Result<ColumnSlot> {
        match &r.qualifier {
            Some(q) => {
                let (idx, table) = self
                    .tables
                    .iter()
                    .enumerate()
                    .find(|(_, t)| &t.binding == q)
                    .ok_or_else(|| Error::UnknownTable(q.clone()))?;
                match &table.columns {
                    None => Ok(ColumnSlot::Deferred(r.clone())),
                    Some(cols) => cols
                        .iter()
                        .find(|c| c.logical_name == r.column)
                        .map(|c| ColumnSlot::Bound(self.column_of(idx, c)))
                        .ok_or_else(|| Error::UnknownColumn(r.to_string())),
                }
            }
            None => {
                let mut matches = self.tables.iter().enumerate().filter_map(|(i, t)| {
                    t.columns
                        .as_ref()
                        .and_then(|cols| cols.iter().find(|c| c.logical_name == r.column))
                        .map(|c| (i, c))
                });
                let first = matches.next();
                if matches.next().is_some() {
                    return Err(Error::AmbiguousColumn(r.column.clone()));
                }
                let undescribed = self.tables.iter().any(|t| t.columns.is_none());
                match (first, undescribed) {
                    (_, true) => Ok(ColumnSlot::Deferred(r.clone())),
                    (Some((i, c)), false) => Ok(ColumnSlot::Bound(self.column_of(i, c))),
                    (None, false) => Err(Error::UnknownColumn(r.column.clone())),
                }
            }
        }
    }

    fn predicate(&self, p: &Predicate) -> Result<BoundPredicate> {
        let left = self.slot(&p.left)?;
        let right = match &p.right {
            Operand::Column(c) => {
                let right = self.slot(c)?;
                if let (Some(l), Some(r)) = (left.bound(), right.bound()) {
                    if !l.data_type.comparable_with(r.data_type) {
                        return Err(Error::TypeMismatch(format!(
                            "{} ({}) compared with {} ({})",
                            p.left, l.data_type, c, r.data_type
                        )));
                    }
                }
                BoundOperand::Column(right)
            }
            Operand::Literal(lit) => BoundOperand::Literal(match left.bound() {
                Some(col) => check_literal(&p.left, col.data_type, lit)?,
                None => lit.clone(),
            }),
        };
        Ok(BoundPredicate { left, op: p.op, right })
    }
}

/// Checks a literal against the column type it is compared with, turning
/// quoted ISO-8601 text into a timestamp for timestamp columns.
fn check_literal(col: &ColumnRef, ty: DataType, lit: &Literal) -> Result<Literal> {
    let mismatch = || {
        Error::TypeMismatch(format!("{col} is {ty} but is compared with {} literal {lit}", lit.data_type()))
    };
    match (ty, lit) {
        (DataType::Integer | DataType::Real, Literal::Integer(_) | Literal::Real(_)) => Ok(lit.clone()),
        (DataType::Text, Literal::Text(_)) => Ok(lit.clone()),
        (DataType::Timestamp, Literal::Timestamp(_)) => Ok(lit.clone()),
        (DataType::Timestamp, Literal::Text(s)) => parse_timestamp(s).map(Literal::Timestamp).ok_or_else(mismatch),
        _ => Err(mismatch()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_dictionary, LowerSpec, TableSpec, UpperSpec, UpperSpecEntry};
    use crate::sql::parse_sql;

    fn dict() -> DataDictionary {
        let mut lower = LowerSpec::new("a");
        let mut events = TableSpec::new(
            "EVT",
            vec![
                ColumnSpec { physical_name: "EID".into(), ..ColumnSpec::new("id", DataType::Integer) },
                ColumnSpec { physical_name: "RID".into(), ..ColumnSpec::new("run_id", DataType::Integer) },
                ColumnSpec::new("energy", DataType::Real),
            ],
        );
        events.logical_name = "events".into();
        lower.tables.push(events);
        lower.tables.push(TableSpec::new(
            "runs",
            vec![
                ColumnSpec::new("id", DataType::Integer),
                ColumnSpec::new("year", DataType::Integer),
                ColumnSpec::new("started", DataType::Timestamp),
                ColumnSpec::new("label", DataType::Text),
            ],
        ));
        let upper = UpperSpec {
            entries: vec![UpperSpecEntry {
                source_id: "a".into(),
                url: "mem:a".into(),
                driver_name: "reference".into(),
                lower_spec_ref: "a.xml".into(),
            }],
        };
        build_dictionary(&upper, &[("a".to_string(), lower)].into_iter().collect()).unwrap()
    }

    fn resolve(sql: &str) -> Result<BoundQuery> {
        resolve_names(&parse_sql(sql).unwrap(), &dict())
    }

    #[test]
    fn local_table_binds_physical_names() {
        let bq = resolve("SELECT e.energy, run_id FROM events e").unwrap();
        assert_eq!(bq.tables[0].location, TableLocation::Local { source_id: "a".into() });
        assert_eq!(bq.tables[0].physical, "EVT");
        let c = bq.select[1].column.bound().unwrap();
        assert_eq!((c.physical.as_str(), c.data_type), ("RID", DataType::Integer));
        assert_eq!(bq.select[1].name, "run_id");
        assert!(bq.is_complete());
    }

    #[test]
    fn unknown_table_is_remote() {
        let bq = resolve("SELECT calib.gain, e.id FROM events e, calib WHERE e.id = calib.event_id").unwrap();
        assert_eq!(bq.tables[1].location, TableLocation::Remote);
        assert!(matches!(bq.select[0].column, ColumnSlot::Deferred(_)));
        assert!(!bq.is_complete());

        let mut schemas = BTreeMap::new();
        schemas.insert(
            1,
            vec![ColumnSpec::new("gain", DataType::Real), ColumnSpec::new("event_id", DataType::Integer)],
        );
        let full = bind_remote(&bq, &schemas).unwrap();
        assert!(full.is_complete());
        assert_eq!(full.select[0].column.bound().unwrap().data_type, DataType::Real);
    }

    #[test]
    fn type_mismatch_on_literal() {
        assert!(matches!(resolve("SELECT id FROM events WHERE events.run_id = 'abc'"), Err(Error::TypeMismatch(_))));
        assert!(matches!(resolve("SELECT id FROM runs WHERE label > 3"), Err(Error::TypeMismatch(_))));
        assert!(matches!(
            resolve("SELECT e.id FROM events e, runs r WHERE r.label = e.id"),
            Err(Error::TypeMismatch(_))
        ));
        assert!(resolve("SELECT id FROM runs WHERE year > 2003.5").is_ok());
    }

    #[test]
    fn timestamp_literals_are_coerced() {
        let bq = resolve("SELECT id FROM runs WHERE started >= '2004-01-01T00:00:00'").unwrap();
        assert!(matches!(bq.predicates[0].right, BoundOperand::Literal(Literal::Timestamp(_))));
        assert!(matches!(resolve("SELECT id FROM runs WHERE started >= 'soon'"), Err(Error::TypeMismatch(_))));
    }

    #[test]
    fn unknown_and_ambiguous_columns() {
        assert!(matches!(resolve("SELECT e.nope FROM events e"), Err(Error::UnknownColumn(_))));
        assert!(matches!(resolve("SELECT nope FROM events"), Err(Error::UnknownColumn(_))));
        assert!(matches!(resolve("SELECT id FROM events, runs"), Err(Error::AmbiguousColumn(_))));
        assert!(resolve("SELECT year FROM events, runs WHERE events.run_id = runs.id").is_ok());
    }

    #[test]
    fn star_expansion_names() {
        let single = resolve("SELECT * FROM runs").unwrap();
        let names: Vec<&str> = single.select.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["id", "year", "started", "label"]);
        let multi = resolve("SELECT * FROM events e, runs WHERE e.run_id = runs.id").unwrap();
        assert_eq!(multi.select.len(), 7);
        assert_eq!(multi.select[0].name, "e.id");
        assert_eq!(multi.select[3].name, "runs.id");
    }
}
