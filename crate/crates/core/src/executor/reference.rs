//! The reference in-memory backend.
//!
//! It evaluates the whole front-end grammar directly with nested loops, so
//! it doubles as the oracle the federated path is checked against: loading
//! every source's tables into one [`Database`] and querying it must give the
//! same answer as planning, distributing and merging.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, PoisonError, RwLock};

use super::adapter::{BackendAdapter, Handle, TableSchema};
use super::ops::{compare_holds, order_cmp};
use crate::catalog::{build_dictionary, ColumnSpec, LowerSpec, TableSpec, UpperSpec, UpperSpecEntry};
use crate::error::{Error, Result};
use crate::fixture::{parse_fixture, write_fixture, FixtureTable};
use crate::sql::{parse_sql, resolve_names, BoundColumn, BoundOperand, BoundQuery, ColumnSlot};
use crate::table::{Column, ResultTable};
use crate::value::Value;

/// Named tables with typed columns and row storage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Database {
    tables: BTreeMap<String, ResultTable>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixture(text: &str) -> Result<Self> {
        let mut db = Database::new();
        for t in parse_fixture(text)? {
            db.insert_table(&t.name, t.table)?;
        }
        Ok(db)
    }

    /// Loads a table-fixture file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MalformedFixture(format!("{}: {e}", path.display())))?;
        Self::from_fixture(&text)
    }

    pub fn to_fixture(&self) -> Result<String> {
        let tables: Vec<FixtureTable> =
            self.tables.iter().map(|(n, t)| FixtureTable::new(n.clone(), t.clone())).collect();
        write_fixture(&tables)
    }

    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.get(name)
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.keys().cloned().collect()
    }

    pub fn insert_table(&mut self, name: &str, table: ResultTable) -> Result<()> {
        if table.columns.is_empty() {
            return Err(Error::MalformedFixture(format!("table `{name}` has no columns")));
        }
        table.validate().map_err(|e| Error::MalformedFixture(e.to_string()))?;
        self.tables.insert(name.to_string(), table);
        Ok(())
    }

    pub fn create_table(&mut self, name: &str, columns: &[Column]) -> Result<()> {
        if self.tables.contains_key(name) {
            return Err(Error::DuplicateName(format!("table `{name}`")));
        }
        self.insert_table(name, ResultTable::new(columns.to_vec()))
    }

    pub fn drop_table(&mut self, name: &str) -> Option<ResultTable> {
        self.tables.remove(name)
    }

    pub fn rename_table(&mut self, from: &str, to: &str) -> Result<()> {
        if self.tables.contains_key(to) {
            return Err(Error::DuplicateName(format!("table `{to}`")));
        }
        let t = self.tables.remove(from).ok_or_else(|| Error::UnknownTable(from.to_string()))?;
        self.tables.insert(to.to_string(), t);
        Ok(())
    }

    /// Adds a column filled with nulls.
    pub fn add_column(&mut self, table: &str, column: Column) -> Result<()> {
        let t = self.tables.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        if t.column_index(&column.name).is_some() {
            return Err(Error::DuplicateName(format!("column `{}`", column.name)));
        }
        t.columns.push(column);
        for row in &mut t.rows {
            row.push(Value::Null);
        }
        Ok(())
    }

    /// Appends all rows or none, widening integers into real columns.
    pub fn append_rows(&mut self, table: &str, rows: Vec<Vec<Value>>) -> Result<usize> {
        let t = self.tables.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let mut checked = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != t.columns.len() {
                return Err(Error::TypeMismatch(format!(
                    "row has {} cells, `{table}` has {} columns",
                    row.len(),
                    t.columns.len()
                )));
            }
            let row = row
                .into_iter()
                .zip(&t.columns)
                .map(|(v, c)| v.coerce(c.data_type).map_err(Error::TypeMismatch))
                .collect::<Result<Vec<_>>>()?;
            checked.push(row);
        }
        let n = checked.len();
        t.rows.extend(checked);
        Ok(n)
    }

    pub fn schemas(&self) -> Vec<TableSchema> {
        self.tables
            .iter()
            .map(|(name, t)| TableSchema { name: name.clone(), columns: t.columns.clone() })
            .collect()
    }

    /// The catalog view of this database: logical names equal physical ones.
    fn self_spec(&self) -> LowerSpec {
        let mut spec = LowerSpec::new("local");
        for (name, t) in &self.tables {
            spec.tables.push(TableSpec::new(
                name.clone(),
                t.columns.iter().map(|c| ColumnSpec::new(c.name.clone(), c.data_type)).collect(),
            ));
        }
        spec
    }

    /// Evaluates one query of the front-end grammar.
    pub fn query(&self, sql: &str) -> Result<ResultTable> {
        let ast = parse_sql(sql)?;
        let upper = UpperSpec {
            entries: vec![UpperSpecEntry {
                source_id: "local".into(),
                url: "mem:local".into(),
                driver_name: ReferenceDriver::NAME.into(),
                lower_spec_ref: "local".into(),
            }],
        };
        let lowers = BTreeMap::from([("local".to_string(), self.self_spec())]);
        let dict = build_dictionary(&upper, &lowers)?;
        let bq = resolve_names(&ast, &dict)?;
        if let Some((_, t)) = bq.remote_tables().next() {
            return Err(Error::UnknownTable(t.logical.clone()));
        }
        self.evaluate(&bq)
    }

    fn evaluate(&self, bq: &BoundQuery) -> Result<ResultTable> {
        let tables: Vec<&ResultTable> = bq.tables.iter().map(|t| &self.tables[&t.physical]).collect();
        let locate = |c: &BoundColumn| -> (usize, usize) {
            let pos = tables[c.table].column_index(&c.physical).expect("bound column exists");
            (c.table, pos)
        };
        let slot = |s: &ColumnSlot| locate(s.bound().expect("local query is fully bound"));

        enum Rhs {
            Col((usize, usize)),
            Lit(Value),
        }
        type Check = ((usize, usize), crate::sql::CompareOp, Rhs);
        // Each predicate is checked at the deepest table it mentions.
        let mut checks: Vec<Vec<Check>> =
            (0..tables.len()).map(|_| Vec::new()).collect();
        for p in &bq.predicates {
            let l = slot(&p.left);
            let (rhs, depth) = match &p.right {
                BoundOperand::Column(c) => {
                    let r = slot(c);
                    (Rhs::Col(r), l.0.max(r.0))
                }
                BoundOperand::Literal(lit) => (Rhs::Lit(lit.to_value()), l.0),
            };
            checks[depth].push((l, p.op, rhs));
        }

        let mut matches: Vec<Vec<usize>> = Vec::new();
        let mut current = Vec::with_capacity(tables.len());
        fn descend(
            depth: usize,
            tables: &[&ResultTable],
            checks: &[Vec<Check>],
            current: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if depth == tables.len() {
                out.push(current.clone());
                return;
            }
            for i in 0..tables[depth].rows.len() {
                current.push(i);
                let cell = |(t, c): (usize, usize)| &tables[t].rows[current[t]][c];
                let ok = checks[depth].iter().all(|(l, op, rhs)| match rhs {
                    Rhs::Col(r) => compare_holds(*op, cell(*l), cell(*r)),
                    Rhs::Lit(v) => compare_holds(*op, cell(*l), v),
                });
                if ok {
                    descend(depth + 1, tables, checks, current, out);
                }
                current.pop();
            }
        }
        descend(0, &tables, &checks, &mut current, &mut matches);

        let cell = |m: &[usize], (t, c): (usize, usize)| tables[t].rows[m[t]][c].clone();
        let outputs: Vec<(usize, usize)> = bq.select.iter().map(|o| slot(&o.column)).collect();
        let orders: Vec<((usize, usize), bool)> = bq.order_by.iter().map(|(s, d)| (slot(s), *d)).collect();
        let mut rows: Vec<(Vec<Value>, Vec<Value>)> = matches
            .iter()
            .map(|m| {
                (
                    orders.iter().map(|(c, _)| cell(m, *c)).collect(),
                    outputs.iter().map(|c| cell(m, *c)).collect(),
                )
            })
            .collect();
        rows.sort_by(|(ka, ra), (kb, rb)| {
            for ((a, b), (_, desc)) in ka.iter().zip(kb).zip(&orders) {
                let o = order_cmp(a, b, *desc);
                if o != Ordering::Equal {
                    return o;
                }
            }
            ra.cmp(rb)
        });
        if let Some(n) = bq.limit {
            rows.truncate(n as usize);
        }
        let columns = bq
            .select
            .iter()
            .map(|o| Column::new(o.name.clone(), o.column.bound().expect("bound").data_type))
            .collect();
        Ok(ResultTable { columns, rows: rows.into_iter().map(|(_, r)| r).collect() })
    }
}

pub type SharedDatabase = Arc<RwLock<Database>>;

/// Driver for [`Database`] stores. Connection URLs are `mem:<name>` for a
/// store registered with [`ReferenceDriver::add_store`], or `file:<path>`
/// to load a fixture file into a private store.
#[derive(Default)]
pub struct ReferenceDriver {
    stores: RwLock<BTreeMap<String, SharedDatabase>>,
    handles: RwLock<HashMap<Handle, SharedDatabase>>,
    next_handle: AtomicU64,
}

impl ReferenceDriver {
    pub const NAME: &'static str = "reference";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_store(&self, name: &str, db: Database) -> SharedDatabase {
        let shared = Arc::new(RwLock::new(db));
        self.stores.write().unwrap_or_else(PoisonError::into_inner).insert(name.to_string(), shared.clone());
        shared
    }

    pub fn store(&self, name: &str) -> Option<SharedDatabase> {
        self.stores.read().unwrap_or_else(PoisonError::into_inner).get(name).cloned()
    }

    /// Takes a store offline; open handles to it stop answering.
    pub fn remove_store(&self, name: &str) -> Option<SharedDatabase> {
        let db = self.stores.write().unwrap_or_else(PoisonError::into_inner).remove(name)?;
        self.handles
            .write()
            .unwrap_or_else(PoisonError::into_inner)
            .retain(|_, h| !Arc::ptr_eq(h, &db));
        Some(db)
    }

    fn db(&self, handle: Handle) -> Result<SharedDatabase> {
        self.handles
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(&handle)
            .cloned()
            .ok_or_else(|| Error::BackendUnavailable(format!("handle {} is not open", handle.0)))
    }
}

impl BackendAdapter for ReferenceDriver {
    fn driver_name(&self) -> &str {
        Self::NAME
    }

    fn open(&self, url: &str, _username: &str, _password: &str) -> Result<Handle> {
        let db = if let Some(name) = url.strip_prefix("mem:") {
            self.store(name).ok_or_else(|| Error::BackendUnavailable(format!("no store named `{name}`")))?
        } else if let Some(path) = url.strip_prefix("file:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::BackendUnavailable(format!("{path}: {e}")))?;
            Arc::new(RwLock::new(Database::from_fixture(&text)?))
        } else {
            return Err(Error::BackendUnavailable(format!("unsupported connection url `{url}`")));
        };
        let handle = Handle(self.next_handle.fetch_add(1, AtomicOrdering::Relaxed) + 1);
        self.handles.write().unwrap_or_else(PoisonError::into_inner).insert(handle, db);
        Ok(handle)
    }

    fn execute(&self, handle: Handle, select_fields: &[String], tables: &[String], where_clause: &str) -> Result<ResultTable> {
        let mut sql = format!("SELECT {} FROM {}", select_fields.join(", "), tables.join(", "));
        if !where_clause.trim().is_empty() {
            sql.push_str(" WHERE ");
            sql.push_str(where_clause);
        }
        let db = self.db(handle)?;
        let guard = db.read().unwrap_or_else(PoisonError::into_inner);
        guard.query(&sql)
    }

    fn list_tables(&self, handle: Handle) -> Result<Vec<TableSchema>> {
        Ok(self.db(handle)?.read().unwrap_or_else(PoisonError::into_inner).schemas())
    }

    fn close(&self, handle: Handle) {
        self.handles.write().unwrap_or_else(PoisonError::into_inner).remove(&handle);
    }

    fn create_table(&self, handle: Handle, name: &str, columns: &[Column]) -> Result<()> {
        self.db(handle)?.write().unwrap_or_else(PoisonError::into_inner).create_table(name, columns)
    }

    fn append_rows(&self, handle: Handle, table: &str, rows: Vec<Vec<Value>>) -> Result<usize> {
        self.db(handle)?.write().unwrap_or_else(PoisonError::into_inner).append_rows(table, rows)
    }
}

/// Loads a fixture file as a reference backend store.
pub fn load_reference_backend(path: impl AsRef<Path>) -> Result<Database> {
    Database::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::DataType;

    const FIXTURE: &str = "#table events\nid,run_id,energy\ninteger,integer,real\n1,10,0.5\n2,10,1.5\n3,11,2.5\n4,12,\n5,,0.1\n\n#table runs\nid,year\ninteger,integer\n10,2003\n11,2004\n12,2005\n";

    fn db() -> Database {
        Database::from_fixture(FIXTURE).unwrap()
    }

    #[test]
    fn select_star_returns_all_rows() {
        let t = db().query("SELECT * FROM events").unwrap();
        assert_eq!((t.len(), t.width()), (5, 3));
        assert_eq!(t.columns[0].name, "id");
    }

    #[test]
    fn join_filter_and_order() {
        let t = db()
            .query("SELECT e.id, r.year FROM events e, runs r WHERE e.run_id = r.id AND r.year > 2003 ORDER BY e.id DESC")
            .unwrap();
        assert_eq!(
            t.rows,
            vec![
                vec![Value::Integer(4), Value::Integer(2005)],
                vec![Value::Integer(3), Value::Integer(2004)],
            ]
        );
        assert_eq!(t.columns[1].name, "r.year");
    }

    #[test]
    fn limit_takes_canonical_prefix() {
        let t = db().query("SELECT energy FROM events LIMIT 2").unwrap();
        assert_eq!(t.rows, vec![vec![Value::Real(0.1)], vec![Value::Real(0.5)]]);
    }

    #[test]
    fn unknown_table() {
        assert_eq!(db().query("SELECT * FROM ghost"), Err(Error::UnknownTable("ghost".into())));
    }

    #[test]
    fn driver_lifecycle() {
        let driver = ReferenceDriver::new();
        driver.add_store("cern", db());
        let h = driver.open("mem:cern", "", "").unwrap();
        let t = driver
            .execute(h, &["e.id".into()], &["events e".into()], "e.energy > 1.0")
            .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(driver.list_tables(h).unwrap().len(), 2);
        driver.close(h);
        assert!(matches!(driver.execute(h, &["id".into()], &["runs".into()], ""), Err(Error::BackendUnavailable(_))));
        assert!(matches!(driver.open("mem:nowhere", "", ""), Err(Error::BackendUnavailable(_))));
    }

    #[test]
    fn fixture_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.tbl");
        let rows: String = (1..=5).map(|i| format!("{i},\"r{i}\"\n")).collect();
        std::fs::write(&path, format!("#table t\nid,name\ninteger,text\n{rows}")).unwrap();
        let db = load_reference_backend(&path).unwrap();
        assert_eq!(db.query("SELECT * FROM t").unwrap().len(), 5);

        std::fs::write(&path, "#table t\nid,name\ninteger,text\nx,\"a\"\n").unwrap();
        assert!(matches!(load_reference_backend(&path), Err(Error::MalformedFixture(_))));

        let wide: Vec<String> = (0..200).map(|i| format!("v{i}")).collect();
        let types = vec!["real"; 200].join(",");
        let row = vec!["0.5"; 200].join(",");
        std::fs::write(&path, format!("#table ntuple\n{}\n{types}\n{row}\n", wide.join(","))).unwrap();
        let db = load_reference_backend(&path).unwrap();
        assert_eq!(db.table("ntuple").unwrap().width(), 200);
    }

    #[test]
    fn mutations() {
        let mut d = db();
        d.add_column("runs", Column::new("site", DataType::Text)).unwrap();
        assert_eq!(d.query("SELECT site FROM runs").unwrap().rows[0], vec![Value::Null]);
        d.rename_table("runs", "rnns").unwrap();
        assert!(d.query("SELECT * FROM runs").is_err());
        d.drop_table("rnns");
        assert_eq!(d.table_names(), vec!["events".to_string()]);
        let err = d.append_rows("events", vec![vec![Value::Integer(9)]]).unwrap_err();
        assert!(matches!(err, Error::TypeMismatch(_)));
        assert_eq!(d.append_rows("events", vec![vec![Value::Integer(9), Value::Null, Value::Integer(2)]]).unwrap(), 1);
        assert_eq!(d.table("events").unwrap().rows[5][2], Value::Real(2.0));
    }
}
