//! Request and response bodies as they appear on the wire. Each golden file
//! holds one body; the live server must reproduce it byte for byte and the
//! decoded form must re-encode to the same bytes.
//!
//! Run with `GOLDEN_UPDATE=1` to rewrite the files after an intended change.

use std::path::PathBuf;

use gridfed_core::catalog::serialize_lower_spec;
use gridfed_core::executor::Database;
use gridfed_core::wire::*;
use gridfed_server::cluster::{spec_for, Node, NodeOptions, RlsServer};
use gridfed_server::HttpClient;


fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("GOLDEN_UPDATE").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected.trim_end_matches('\n'), "{name}");
}

fn roundtrip<T: serde::Serialize + for<'a> serde::Deserialize<'a>>(name: &str, body: &str) -> T {
    check(name, body);
    let decoded: T = from_json(body).unwrap();
    assert_eq!(to_json(&decoded), body, "{name} does not re-encode");
    decoded
}

#[test]
fn federation_bodies() {
    let node = Node::start("127.0.0.1:0", NodeOptions::default()).unwrap();
    let http = HttpClient::default();

    let lab = Database::load(golden("lab.fixture")).unwrap();
    let spec = serialize_lower_spec(&spec_for(&lab, "lab").unwrap());
    node.driver.add_store("lab", lab);
    let req = RegisterRequest { spec_inline: Some(spec), driver: "reference".into(), url: "mem:lab".into(), ..Default::default() };
    let req_body = to_json(&req);
    let decoded: RegisterRequest = from_json(&req_body).unwrap();
    assert_eq!(to_json(&decoded), req_body);
    let resp = http.post_raw(&node.url(), "/register", &req_body).unwrap();
    roundtrip::<RegisterResponse>("register_response.json", &resp);

    let by_url = RegisterRequest {
        spec_url: Some("http://specs.example/lab.xml".into()),
        driver: "reference".into(),
        url: "mem:lab".into(),
        username: Some("reader".into()),
        password: Some("secret".into()),
        ..Default::default()
    };
    roundtrip::<RegisterRequest>("register_request.json", &to_json(&by_url));

    let q = QueryRequest { sql: "SELECT id, energy, label, seen FROM events ORDER BY id".into(), no_forward: false };
    let q_body = roundtrip::<QueryRequest>("query_request.json", &to_json(&q));
    let resp = http.post_raw(&node.url(), "/query", &to_json(&q_body)).unwrap();
    check("query_response.json", &resp);
    assert_eq!(encode_table(&decode_table(&resp).unwrap()), resp);
    // no_forward may be omitted
    let short: QueryRequest = from_json(r#"{"sql":"SELECT id FROM events"}"#).unwrap();
    assert!(!short.no_forward);

    let err = http.post_raw(&node.url(), "/query", r#"{"sql":"SELECT nope FROM events"}"#).unwrap_err();
    let gridfed_core::Error::RemoteError { code, message, .. } = err else { panic!("{err}") };
    let body = to_json(&ErrorBody { error: ErrorCode { code }, message });
    roundtrip::<ErrorBody>("error_response.json", &body);

    let resp = http.post_raw(&node.url(), "/refresh", "").unwrap();
    roundtrip::<RefreshResponse>("refresh_response.json", &resp);
    let resp = http.get_raw(&node.url(), "/health").unwrap();
    roundtrip::<HealthResponse>("health_response.json", &resp);
}

#[test]
fn rls_bodies() {
    let rls = RlsServer::start("127.0.0.1:0").unwrap();
    let http = HttpClient::default();
    let req = PublishRequest { server: "http://fed-a.example:8080".into(), tables: vec!["events".into(), "runs".into()] };
    let body = to_json(&req);
    roundtrip::<PublishRequest>("rls_publish_request.json", &body);
    let resp = http.post_raw(&rls.url(), "/rls/publish", &body).unwrap();
    roundtrip::<AckResponse>("rls_publish_response.json", &resp);
    http.post_raw(&rls.url(), "/rls/publish", r#"{"server":"http://fed-b.example:8080","tables":["events"]}"#).unwrap();
    let resp = http.get_raw(&rls.url(), "/rls/lookup?table=events").unwrap();
    roundtrip::<LookupResponse>("rls_lookup_response.json", &resp);
    let resp = http.post_raw(&rls.url(), "/rls/unpublish", &body).unwrap();
    roundtrip::<AckResponse>("rls_unpublish_response.json", &resp);
    let resp = http.get_raw(&rls.url(), "/rls/lookup?table=runs").unwrap();
    roundtrip::<LookupResponse>("rls_lookup_empty.json", &resp);
}
