use std::collections::BTreeMap;
use std::sync::Arc;

use gridfed_core::catalog::{build_dictionary, introspect, ColumnSpec, DataDictionary, UpperSpec, UpperSpecEntry};
use gridfed_core::executor::{
    execute_plan, open_sources, plan_query, run_query, Connection, Credentials, Database, DriverRegistry,
    ExecOptions, ReferenceDriver,
};
use gridfed_core::planner::{render_subquery, Target};
use gridfed_core::remote::{NoRemotes, PeerClient, RemoteResolver, RemoteTableInfo};
use gridfed_core::wire::{decode_table, encode_table};
use gridfed_core::{Error, ResultTable, Result, Value};

const A: &str = "#table events\nid,run_id,energy\ninteger,integer,real\n1,10,0.5\n2,11,1.5\n3,12,2.5\n4,,3.5\n5,10,\n";
const B: &str = "#table runs\nid,year\ninteger,integer\n10,2003\n11,2004\n13,2005\n\n#table calib\nrun_id,gain\ninteger,real\n10,0.25\n10,4.0\n11,1.0\n";

struct Fed {
    driver: Arc<ReferenceDriver>,
    dict: DataDictionary,
    conns: BTreeMap<String, Connection>,
    merged: Database,
}

fn federation(stores: &[(&str, &str)]) -> Fed {
    let driver = Arc::new(ReferenceDriver::new());
    let drivers = DriverRegistry::new().with(driver.clone());
    let mut upper = UpperSpec::default();
    let mut lowers = BTreeMap::new();
    let mut merged = Database::new();
    for (id, fixture) in stores {
        let db = Database::from_fixture(fixture).unwrap();
        for name in db.table_names() {
            merged.insert_table(&name, db.table(&name).unwrap().clone()).unwrap();
        }
        driver.add_store(id, db);
        let conn = drivers.open("reference", &format!("mem:{id}"), "", "").unwrap();
        lowers.insert(id.to_string(), introspect(&conn, id).unwrap());
        conn.close();
        upper.entries.push(UpperSpecEntry {
            source_id: id.to_string(),
            url: format!("mem:{id}"),
            driver_name: "reference".into(),
            lower_spec_ref: format!("{id}.xml"),
        });
    }
    let dict = build_dictionary(&upper, &lowers).unwrap();
    let conns = open_sources(&upper, &drivers, &Credentials::new()).unwrap();
    Fed { driver, dict, conns, merged }
}

fn fed_query(f: &Fed, sql: &str) -> Result<ResultTable> {
    run_query(sql, &f.dict, &f.conns, &NoRemotes, None, ExecOptions::default())
}

fn assert_oracle(f: &Fed, sql: &str) {
    let got = fed_query(f, sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    let want = f.merged.query(sql).unwrap();
    assert_eq!(got, want, "{sql}");
}

#[test]
fn cross_source_join_equals_oracle() {
    let f = federation(&[("A", A), ("B", B)]);
    for sql in [
        "SELECT * FROM events",
        "SELECT events.id, runs.year FROM events, runs WHERE events.run_id = runs.id AND runs.year > 2003",
        "SELECT e.id, c.gain FROM events e, calib c WHERE e.run_id = c.run_id",
        "SELECT e.id, c.gain FROM events e, calib c WHERE e.run_id = c.run_id AND e.energy < c.gain",
        "SELECT e.id, r.year, c.gain FROM events e, runs r, calib c WHERE e.run_id = r.id AND r.id = c.run_id ORDER BY c.gain DESC LIMIT 2",
        "SELECT r.year FROM runs r, calib c WHERE r.id = c.run_id",
        "SELECT energy FROM events WHERE energy >= 1.5 ORDER BY energy",
        "SELECT e.id FROM events e, runs r WHERE e.run_id = r.id AND e.run_id != 10 AND r.year <= 2004",
    ] {
        assert_oracle(&f, sql);
    }
}

#[test]
fn three_by_three_join_with_two_matches() {
    let left = "#table l\nk,v\ninteger,text\n1,\"a\"\n2,\"b\"\n3,\"c\"\n";
    let right = "#table r\nk,w\ninteger,text\n2,\"x\"\n3,\"y\"\n4,\"z\"\n";
    let f = federation(&[("L", left), ("R", right)]);
    let t = fed_query(&f, "SELECT l.v, r.w FROM l, r WHERE l.k = r.k").unwrap();
    assert_eq!(t.len(), 2);

    let (lt, rt) = (f.merged.table("l").unwrap(), f.merged.table("r").unwrap());
    let mut brute = Vec::new();
    for a in &lt.rows {
        for b in &rt.rows {
            if a[0] == b[0] {
                brute.push(vec![a[1].clone(), b[1].clone()]);
            }
        }
    }
    brute.sort();
    assert_eq!(t.rows, brute);
}

#[test]
fn single_subquery_passes_through_sorted() {
    let f = federation(&[("A", A)]);
    let plan = plan_query("SELECT id FROM events", &f.dict, &NoRemotes).unwrap();
    assert_eq!(plan.subqueries.len(), 1);
    let t = execute_plan(&plan, &f.conns, None, ExecOptions::default()).unwrap();
    let ids: Vec<Value> = (1..=5).map(Value::Integer).collect();
    assert_eq!(t.rows.into_iter().flatten().collect::<Vec<_>>(), ids);
}

#[test]
fn down_backend_aborts_whole_query() {
    let f = federation(&[("A", A), ("B", B)]);
    f.driver.remove_store("B");
    let err = fed_query(&f, "SELECT e.id FROM events e, runs r WHERE e.run_id = r.id").unwrap_err();
    assert_eq!(err, Error::BackendUnavailable("B".into()));
    assert!(fed_query(&f, "SELECT id FROM events").is_ok());
}

#[test]
fn sequential_and_concurrent_agree() {
    let f = federation(&[("A", A), ("B", B)]);
    let plan = plan_query(
        "SELECT e.id, r.year, c.gain FROM events e, runs r, calib c WHERE e.run_id = r.id AND e.run_id = c.run_id",
        &f.dict,
        &NoRemotes,
    )
    .unwrap();
    let seq = execute_plan(&plan, &f.conns, None, ExecOptions { concurrent: false, ..Default::default() }).unwrap();
    let par = execute_plan(&plan, &f.conns, None, ExecOptions::default()).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn cell_cap() {
    let f = federation(&[("A", A), ("B", B)]);
    let opts = ExecOptions { cell_cap: 8, concurrent: true };
    let err = run_query("SELECT * FROM events", &f.dict, &f.conns, &NoRemotes, None, opts).unwrap_err();
    assert!(matches!(err, Error::ResultTooLarge { cap: 8, .. }));
}

#[test]
fn cross_product_rejected() {
    let f = federation(&[("A", A), ("B", B)]);
    assert!(matches!(fed_query(&f, "SELECT events.id FROM events, runs"), Err(Error::CrossProductRejected(_))));
    // same-source products are the backend's business
    assert_oracle(&f, "SELECT runs.id, calib.gain FROM runs, calib WHERE calib.gain > 1.0");
}

/// A peer that owns its own reference store and answers through the wire
/// codec, recording every SQL text it receives.
struct LoopbackPeer {
    url: String,
    db: Database,
    log: std::sync::Mutex<Vec<(String, bool)>>,
}

impl PeerClient for LoopbackPeer {
    fn query(&self, url: &str, sql: &str, no_forward: bool) -> Result<ResultTable> {
        assert_eq!(url, self.url);
        self.log.lock().unwrap().push((sql.to_string(), no_forward));
        decode_table(&encode_table(&self.db.query(sql)?))
    }

    fn describe_table(&self, _url: &str, table: &str) -> Result<Option<Vec<ColumnSpec>>> {
        Ok(self.db.table(table).map(|t| t.columns.iter().map(|c| ColumnSpec::new(c.name.clone(), c.data_type)).collect()))
    }
}

impl RemoteResolver for LoopbackPeer {
    fn locate(&self, table: &str) -> Result<Option<RemoteTableInfo>> {
        let columns = self.describe_table(&self.url, table)?;
        Ok(columns.map(|columns| RemoteTableInfo { server_url: self.url.clone(), columns }))
    }
}

#[test]
fn remote_table_through_peer() {
    let f = federation(&[("A", A)]);
    let peer = LoopbackPeer { url: "http://peer:9".into(), db: Database::from_fixture(B).unwrap(), log: Default::default() };
    let sql = "SELECT e.id, r.year FROM events e, runs r WHERE e.run_id = r.id AND r.year > 2003";
    let plan = plan_query(sql, &f.dict, &peer).unwrap();
    assert_eq!(plan.subqueries[1].target, Target::Remote("http://peer:9".into()));
    assert_eq!(render_subquery(&plan.subqueries[1]), "SELECT r.id, r.year FROM runs r WHERE r.year > 2003");
    let got = execute_plan(&plan, &f.conns, Some(&peer), ExecOptions::default()).unwrap();
    let mut all = f.merged.clone();
    all.insert_table("runs", peer.db.table("runs").unwrap().clone()).unwrap();
    assert_eq!(got, all.query(sql).unwrap());
    let log = peer.log.lock().unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].1);
}

#[test]
fn unknown_table_everywhere() {
    let f = federation(&[("A", A)]);
    assert_eq!(fed_query(&f, "SELECT * FROM ghost"), Err(Error::UnknownTable("ghost".into())));
}

#[test]
fn lower_spec_of_empty_source_is_empty() {
    let f = federation(&[("E", "")]);
    assert!(f.dict.is_empty());
}
