//! Core of the gridfed federated query middleware: the XSpec catalog, the
//! SQL front end, planning, execution over backend adapters, the replica
//! mapping, the ETL pipeline and the JSON wire bodies.

pub mod catalog;
pub mod error;
pub mod etl;
pub mod executor;
pub mod fixture;
pub mod planner;
pub mod remote;
pub mod rls;
pub mod sql;
pub mod table;
pub mod value;
pub mod wire;

pub use error::{Error, Result};
pub use table::{Column, ResultTable};
pub use value::{DataType, Value};
