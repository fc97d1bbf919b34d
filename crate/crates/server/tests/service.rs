use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gridfed_core::catalog::{serialize_lower_spec, Comparison};
use gridfed_core::executor::{BackendAdapter, Database, Handle, ReferenceDriver, TableSchema};
use gridfed_core::remote::ReplicaLocator;
use gridfed_core::wire::{encode_table, RegisterRequest};
use gridfed_core::{Column, DataType, Error, ResultTable, Result, Value};
use gridfed_server::cluster::{spec_for, Node, NodeOptions, RlsServer};
use gridfed_server::{bind, HttpClient, RlsClient, Timeouts};

const EVENTS: &str = "#table events\nid,run_id,energy\ninteger,integer,real\n1,10,0.5\n2,11,1.5\n3,12,2.5\n";
const RUNS: &str = "#table runs\nid,year\ninteger,integer\n10,2003\n11,2004\n12,2005\n\n#table detectors\nid,name\ninteger,text\n1,\"barrel\"\n";

fn db(fixture: &str) -> Database {
    Database::from_fixture(fixture).unwrap()
}

fn client() -> HttpClient {
    HttpClient::new(Timeouts { request: Duration::from_secs(10), connect: Duration::from_secs(2) })
}

#[test]
fn health_and_address_in_use() {
    let node = Node::start("127.0.0.1:0", NodeOptions::default()).unwrap();
    client().health(&node.url()).unwrap();
    let addr = node.server.addr().to_string();
    assert_eq!(bind(&addr).unwrap_err(), Error::AddressInUse(addr.clone()));
    assert!(matches!(Node::start(&addr, NodeOptions::default()), Err(Error::AddressInUse(_))));
}

#[test]
fn local_query_over_http() {
    let node = Node::start("127.0.0.1:0", NodeOptions::default()).unwrap();
    node.add_source("cern", db(EVENTS)).unwrap();
    let t = client().remote_query(&node.url(), "SELECT id FROM events WHERE energy > 1.0", false).unwrap();
    assert_eq!(t.len(), 2);
    let err = client().remote_query(&node.url(), "SELECT * FROM ghost", false).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "UnknownTable"), "{err}");
    let err = client().remote_query(&node.url(), "SELECT count(*) FROM events", false).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "UnsupportedFeature"), "{err}");
}

#[test]
fn registration_is_atomic() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let node = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    node.add_source("a", db(EVENTS)).unwrap();
    assert_eq!(rls.mapping.lookup("events").unwrap(), vec![node.url()]);

    // two tables, registered over the wire
    let spec = serialize_lower_spec(&spec_for(&db(RUNS), "b").unwrap());
    node.driver.add_store("b", db(RUNS));
    let req = RegisterRequest { spec_inline: Some(spec), driver: "reference".into(), url: "mem:b".into(), ..Default::default() };
    assert_eq!(client().register(&node.url(), &req).unwrap(), "b");
    assert_eq!(rls.mapping.lookup("detectors").unwrap(), vec![node.url()]);
    let t = client()
        .remote_query(&node.url(), "SELECT e.id, r.year FROM events e, runs r WHERE e.run_id = r.id", false)
        .unwrap();
    assert_eq!(t.len(), 3);

    let before = node.engine().snapshot().schema_fingerprint();
    let generation = node.engine().snapshot().generation;
    // colliding logical name
    let colliding = serialize_lower_spec(&spec_for(&db(EVENTS), "c").unwrap());
    node.driver.add_store("c", db(EVENTS));
    let req = RegisterRequest { spec_inline: Some(colliding), driver: "reference".into(), url: "mem:c".into(), ..Default::default() };
    let err = client().register(&node.url(), &req).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "LogicalNameCollision"), "{err}");
    // unreachable backend
    let fresh = serialize_lower_spec(&spec_for(&db("#table lonely\nx\ninteger\n"), "d").unwrap());
    let req = RegisterRequest { spec_inline: Some(fresh), driver: "reference".into(), url: "mem:nowhere".into(), ..Default::default() };
    let err = client().register(&node.url(), &req).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "BackendUnavailable"), "{err}");
    // malformed spec
    let req = RegisterRequest { spec_inline: Some("<xspec".into()), driver: "reference".into(), url: "mem:b".into(), ..Default::default() };
    assert!(client().register(&node.url(), &req).is_err());

    assert_eq!(node.engine().snapshot().schema_fingerprint(), before);
    assert_eq!(node.engine().snapshot().generation, generation);
    assert!(rls.mapping.lookup("lonely").unwrap().is_empty());
}

#[test]
fn register_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.xml");
    std::fs::write(&path, serialize_lower_spec(&spec_for(&db(RUNS), "b").unwrap())).unwrap();
    let node = Node::start("127.0.0.1:0", NodeOptions::default()).unwrap();
    node.driver.add_store("b", db(RUNS));
    let req = RegisterRequest {
        spec_url: Some(path.to_string_lossy().into_owned()),
        driver: "reference".into(),
        url: "mem:b".into(),
        ..Default::default()
    };
    assert_eq!(client().register(&node.url(), &req).unwrap(), "b");
    let missing = RegisterRequest { spec_url: Some("/no/such/file.xml".into()), ..req };
    let err = client().register(&node.url(), &missing).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "UnresolvableRef"), "{err}");
}

#[test]
fn refresh_tracks_drift() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let node = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    node.add_source("a", db(EVENTS)).unwrap();
    node.add_source("b", db(RUNS)).unwrap();
    assert!(client().refresh(&node.url()).unwrap().is_empty());

    let store = node.driver.store("b").unwrap();
    store.write().unwrap().add_column("runs", Column::new("site", DataType::Text)).unwrap();
    assert_eq!(client().refresh(&node.url()).unwrap(), vec!["b".to_string()]);
    assert_eq!(client().remote_query(&node.url(), "SELECT site FROM runs", false).unwrap().len(), 3);

    store.write().unwrap().drop_table("detectors");
    let report = node.engine().refresh();
    assert_eq!(report.changed_ids(), vec!["b".to_string()]);
    assert!(rls.mapping.lookup("detectors").unwrap().is_empty());
    let err = client().remote_query(&node.url(), "SELECT * FROM detectors", false).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "UnknownTable"));

    // same length name: only the md5 tells
    store.write().unwrap().rename_table("runs", "rnns").unwrap();
    let report = node.engine().refresh();
    assert_eq!(report.changed, vec![("b".to_string(), Comparison::Md5Differs)]);
    assert_eq!(rls.mapping.lookup("rnns").unwrap(), vec![node.url()]);
    assert!(rls.mapping.lookup("runs").unwrap().is_empty());

    node.driver.remove_store("a");
    let report = node.engine().refresh();
    assert!(report.changed.is_empty());
    assert_eq!(report.errors.len(), 1);
}

#[test]
fn refresh_timer_picks_up_changes() {
    let options = NodeOptions { refresh_interval: Some(Duration::from_millis(100)), ..Default::default() };
    let node = Node::start("127.0.0.1:0", options).unwrap();
    node.add_source("a", db(EVENTS)).unwrap();
    let store = node.driver.store("a").unwrap();
    store.write().unwrap().add_column("events", Column::new("tag", DataType::Text)).unwrap();
    let start = Instant::now();
    while client().remote_query(&node.url(), "SELECT tag FROM events", false).is_err() {
        assert!(start.elapsed() < Duration::from_secs(5), "change not picked up");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn forwarding_and_replica_choice() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let origin = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    let peer = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    origin.add_source("a", db(EVENTS)).unwrap();
    peer.add_source("b", db(RUNS)).unwrap();

    let sql = "SELECT e.id, r.year FROM events e, runs r WHERE e.run_id = r.id AND r.year > 2003";
    let got = client().remote_query(&origin.url(), sql, false).unwrap();
    let mut oracle = db(EVENTS);
    oracle.insert_table("runs", db(RUNS).table("runs").unwrap().clone()).unwrap();
    assert_eq!(got, oracle.query(sql).unwrap());

    let log = origin.engine().query_log();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].forwarded_to, vec![peer.url()]);
    let peer_log = peer.engine().query_log();
    assert_eq!(peer_log.len(), 1);
    assert!(peer_log[0].no_forward);
    assert!(peer_log[0].forwarded_to.is_empty());

    // with no_forward the origin refuses remote tables
    let err = client().remote_query(&origin.url(), sql, true).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "UnknownTable"));
}

#[test]
fn smallest_url_replica_wins() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let origin = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    let p1 = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    let p2 = Node::start("127.0.0.1:0", NodeOptions::with_rls(rls.url())).unwrap();
    origin.add_source("a", db(EVENTS)).unwrap();
    p2.add_source("b2", db(RUNS)).unwrap();
    p1.add_source("b1", db(RUNS)).unwrap();
    let expected = std::cmp::min(p1.url(), p2.url());
    assert_eq!(rls.mapping.lookup("runs").unwrap()[0], expected);
    for _ in 0..3 {
        client().remote_query(&origin.url(), "SELECT e.id FROM events e, runs r WHERE e.run_id = r.id", false).unwrap();
    }
    assert!(origin.engine().query_log().iter().all(|l| l.forwarded_to == vec![expected.clone()]));
}

#[test]
fn rls_over_the_wire() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let c = RlsClient::new(rls.url(), Timeouts::default());
    let tables = vec!["events".to_string(), "runs".to_string()];
    assert_eq!(c.publish("http://s1:1", &tables).unwrap(), 2);
    assert_eq!(c.publish("http://s2:1", &tables[..1]).unwrap(), 1);
    assert_eq!(c.lookup("events").unwrap(), vec!["http://s1:1".to_string(), "http://s2:1".to_string()]);
    assert!(c.lookup("a b&c").unwrap().is_empty());
    assert_eq!(c.unpublish("http://s1:1", &tables).unwrap(), 2);
    assert_eq!(c.lookup("events").unwrap(), vec!["http://s2:1".to_string()]);
    let err = c.publish("nonsense", &tables).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "MalformedUrl"));
    let err = client().post_raw(&rls.url(), "/rls/publish", "{\"server\":1}").unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "BadRequest"));
}

#[test]
fn unreachable_peer_times_out_quickly() {
    let port = {
        let l = bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let c = HttpClient::new(Timeouts { request: Duration::from_secs(2), connect: Duration::from_millis(500) });
    for url in [format!("http://127.0.0.1:{port}"), "http://10.255.255.1:9".to_string()] {
        let start = Instant::now();
        let err = c.remote_query(&url, "SELECT * FROM t", false).unwrap_err();
        assert!(matches!(err, Error::RemoteTimeout(_)), "{err}");
        assert!(start.elapsed() < Duration::from_millis(500 + 2000 + 1000), "{:?}", start.elapsed());
    }
}

#[test]
fn undecodable_peer_answer() {
    let t = ResultTable::with_rows(
        vec![Column::new("a", DataType::Integer), Column::new("b", DataType::Text)],
        vec![vec![Value::Integer(1), Value::Text("x".into())], vec![Value::Integer(2), Value::Null]],
    )
    .unwrap();
    let body = encode_table(&t);
    assert_eq!(gridfed_core::wire::decode_table(&body).unwrap(), t);
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    // the RLS has no /query, so the peer call gets a non-JSON 404 body
    let err = client().remote_query(&rls.url(), "SELECT 1", false).unwrap_err();
    assert!(matches!(err, Error::DecodeError(_)), "{err}");
}

/// Sleeps in `execute` until released, so a query can be caught in flight.
struct SlowDriver {
    inner: ReferenceDriver,
    release: AtomicBool,
}

impl BackendAdapter for SlowDriver {
    fn driver_name(&self) -> &str {
        "slow"
    }
    fn open(&self, url: &str, u: &str, p: &str) -> Result<Handle> {
        self.inner.open(url, u, p)
    }
    fn execute(&self, h: Handle, f: &[String], t: &[String], w: &str) -> Result<ResultTable> {
        let start = Instant::now();
        while !self.release.load(Ordering::SeqCst) && start.elapsed() < Duration::from_secs(5) {
            std::thread::sleep(Duration::from_millis(10));
        }
        self.inner.execute(h, f, t, w)
    }
    fn list_tables(&self, h: Handle) -> Result<Vec<TableSchema>> {
        self.inner.list_tables(h)
    }
    fn close(&self, h: Handle) {
        self.inner.close(h)
    }
}

#[test]
fn shutdown_during_query() {
    use gridfed_core::executor::DriverRegistry;
    use gridfed_server::{Engine, FederationServer, Registration, ServerConfig, SpecSource};

    let slow = Arc::new(SlowDriver { inner: ReferenceDriver::new(), release: AtomicBool::new(false) });
    slow.inner.add_store("a", db(EVENTS));
    let listener = bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let engine = Engine::new(ServerConfig::new(url.clone()), DriverRegistry::new().with(slow.clone()), Arc::new(client()), None).unwrap();
    engine
        .register(&Registration {
            spec: SpecSource::Inline(serialize_lower_spec(&spec_for(&db(EVENTS), "a").unwrap())),
            driver: "slow".into(),
            url: "mem:a".into(),
            username: String::new(),
            password: String::new(),
        })
        .unwrap();
    let server = FederationServer::start(Arc::new(engine), listener, false).unwrap();
    let engine = server.engine.clone();

    let u = url.clone();
    let in_flight = std::thread::spawn(move || client().remote_query(&u, "SELECT id FROM events", false));
    std::thread::sleep(Duration::from_millis(200));
    engine.begin_shutdown();
    let err = client().remote_query(&url, "SELECT id FROM events", false).unwrap_err();
    assert!(matches!(err, Error::RemoteError { ref code, .. } if code == "Shutdown"), "{err}");
    slow.release.store(true, Ordering::SeqCst);
    let start = Instant::now();
    server.shutdown();
    assert!(start.elapsed() < Duration::from_secs(11));
    // either completed or answered, never hung
    match in_flight.join().unwrap() {
        Ok(t) => assert_eq!(t.len(), 3),
        Err(e) => assert!(matches!(e, Error::RemoteError { ref code, .. } if code == "Shutdown"), "{e}"),
    }
    assert!(client().health(&url).is_err());
}

#[test]
fn queries_keep_working_while_sources_register() {
    let node = Arc::new(Node::start("127.0.0.1:0", NodeOptions::default()).unwrap());
    node.add_source("a", db(EVENTS)).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let started = Arc::new(std::sync::Barrier::new(5));
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let url = node.url();
            let stop = stop.clone();
            let started = started.clone();
            std::thread::spawn(move || {
                let c = client();
                let mut n = 0;
                started.wait();
                loop {
                    let t = c.remote_query(&url, "SELECT id FROM events", false).unwrap();
                    assert_eq!(t.len(), 3);
                    n += 1;
                    if stop.load(Ordering::SeqCst) {
                        break n;
                    }
                }
            })
        })
        .collect();
    started.wait();
    for i in 0..10 {
        let fixture = format!("#table extra{i}\nx\ninteger\n{i}\n");
        node.add_source(&format!("s{i}"), db(&fixture)).unwrap();
    }
    stop.store(true, Ordering::SeqCst);
    let total: usize = readers.into_iter().map(|r| r.join().unwrap()).sum();
    assert!(total >= 4);
    assert_eq!(node.engine().snapshot().lowers.len(), 11);
    let t = client().remote_query(&node.url(), "SELECT x FROM extra9", false).unwrap();
    assert_eq!(t.rows, vec![vec![Value::Integer(9)]]);
}
