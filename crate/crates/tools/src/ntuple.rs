//! Synthetic event data: ntuples of uniform reals, plus a normalized
//! layout (events, runs, detectors, calibrations) for join workloads.

use gridfed_core::executor::Database;
use gridfed_core::fixture::{write_fixture, FixtureTable};
use gridfed_core::{Column, DataType, ResultTable, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtupleSpec {
    pub n_events: usize,
    pub n_vars: usize,
    pub seed: u64,
}

impl NtupleSpec {
    /// Panics when either dimension is zero.
    pub fn new(n_events: usize, n_vars: usize, seed: u64) -> Self {
        assert!(n_events >= 1 && n_vars >= 1, "an ntuple needs at least one event and one variable");
        NtupleSpec { n_events, n_vars, seed }
    }
}

fn var_columns(n_vars: usize) -> impl Iterator<Item = Column> {
    (0..n_vars).map(|i| Column::new(format!("v{i}"), DataType::Real))
}

/// `event_id` (0-based) then `v0..v{n-1}` drawn uniformly from [0, 1).
pub fn ntuple_table(spec: &NtupleSpec) -> ResultTable {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut columns = vec![Column::new("event_id", DataType::Integer)];
    columns.extend(var_columns(spec.n_vars));
    let rows = (0..spec.n_events)
        .map(|e| {
            let mut row = Vec::with_capacity(spec.n_vars + 1);
            row.push(Value::Integer(e as i64));
            row.extend((0..spec.n_vars).map(|_| Value::Real(rng.random::<f64>())));
            row
        })
        .collect();
    ResultTable { columns, rows }
}

/// The ntuple as a one-table fixture named `ntuple`.
pub fn generate_ntuple(spec: &NtupleSpec) -> String {
    write_fixture(&[FixtureTable::new("ntuple", ntuple_table(spec))]).expect("ntuples hold no text")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizedSpec {
    pub ntuple: NtupleSpec,
    pub n_runs: usize,
    pub n_detectors: usize,
}

impl NormalizedSpec {
    pub fn new(ntuple: NtupleSpec, n_runs: usize, n_detectors: usize) -> Self {
        assert!(n_runs >= 1 && n_detectors >= 1, "need at least one run and one detector");
        NormalizedSpec { ntuple, n_runs, n_detectors }
    }
}

const DETECTOR_NAMES: [&str; 4] = ["barrel", "endcap", "forward", "muon"];

/// Four tables linked by foreign keys:
///
/// * `ntuple(event_id, run_id, v0..)` with events spread round-robin over runs
/// * `runs(run_id, year, detector_id)`
/// * `detectors(detector_id, name)`
/// * `calibrations(detector_id, gain, taken)`, one row per detector
pub fn normalized_tables(spec: &NormalizedSpec) -> Vec<FixtureTable> {
    let base = ntuple_table(&spec.ntuple);
    let mut columns = vec![Column::new("event_id", DataType::Integer), Column::new("run_id", DataType::Integer)];
    columns.extend(var_columns(spec.ntuple.n_vars));
    let rows = base
        .rows
        .into_iter()
        .enumerate()
        .map(|(e, mut row)| {
            row.insert(1, Value::Integer((e % spec.n_runs) as i64));
            row
        })
        .collect();
    let ntuple = ResultTable { columns, rows };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.ntuple.seed.wrapping_add(1));
    let runs = ResultTable {
        columns: vec![
            Column::new("run_id", DataType::Integer),
            Column::new("year", DataType::Integer),
            Column::new("detector_id", DataType::Integer),
        ],
        rows: (0..spec.n_runs)
            .map(|r| {
                vec![
                    Value::Integer(r as i64),
                    Value::Integer(2000 + (r * 6 / spec.n_runs) as i64),
                    Value::Integer(rng.random_range(0..spec.n_detectors) as i64),
                ]
            })
            .collect(),
    };
    let detectors = ResultTable {
        columns: vec![Column::new("detector_id", DataType::Integer), Column::new("name", DataType::Text)],
        rows: (0..spec.n_detectors)
            .map(|d| {
                let name = format!("{}-{}", DETECTOR_NAMES[d % DETECTOR_NAMES.len()], d / DETECTOR_NAMES.len());
                vec![Value::Integer(d as i64), Value::Text(name)]
            })
            .collect(),
    };
    let calibrations = ResultTable {
        columns: vec![
            Column::new("detector_id", DataType::Integer),
            Column::new("gain", DataType::Real),
            Column::new("taken", DataType::Timestamp),
        ],
        rows: (0..spec.n_detectors)
            .map(|d| {
                let taken = chrono::NaiveDate::from_ymd_opt(2004, 1, 1)
                    .expect("valid date")
                    .and_hms_opt(0, 0, 0)
                    .expect("valid time")
                    + chrono::Duration::days(d as i64);
                vec![Value::Integer(d as i64), Value::Real(0.5 + rng.random::<f64>()), Value::Timestamp(taken)]
            })
            .collect(),
    };
    vec![
        FixtureTable::new("ntuple", ntuple),
        FixtureTable::new("runs", runs),
        FixtureTable::new("detectors", detectors),
        FixtureTable::new("calibrations", calibrations),
    ]
}

pub fn normalized_fixture(spec: &NormalizedSpec) -> String {
    write_fixture(&normalized_tables(spec)).expect("generated text has no line breaks")
}

/// Stores holding only the named tables of `tables`.
pub fn database_of(tables: &[FixtureTable], names: &[&str]) -> Database {
    let mut db = Database::new();
    for t in tables.iter().filter(|t| names.contains(&t.name.as_str())) {
        db.insert_table(&t.name, t.table.clone()).expect("generated tables are valid");
    }
    db
}

/// Builds the warehouse fact table from the normalized tables, then a
/// mart of the recent runs.
pub const EXAMPLE_JOB: &str = "\
# star schema over the normalized ntuple sources
target fact_events
query SELECT n.event_id, n.v0, n.v1, r.run_id, r.year, d.name, c.gain FROM ntuple n, runs r, detectors d, calibrations c WHERE n.run_id = r.run_id AND r.detector_id = d.detector_id AND c.detector_id = d.detector_id
map event_id=0:integer
map v0=1:real
map v1=2:real
map run_id=3:integer
map year=4:integer
map detector=5:text
map gain=6:real

view recent_events
query SELECT f.event_id, f.v0, f.detector FROM fact_events f WHERE f.year >= 2003
";
