//! SQL front end: the supported query subset, its parser and renderer, and
//! name resolution against the data dictionary.

mod ast;
mod parser;
mod resolve;

pub use ast::*;
pub use parser::parse_sql;
pub use resolve::{
    bind_remote, resolve_names, BoundColumn, BoundOperand, BoundPredicate, BoundQuery, BoundTable,
    ColumnSlot, OutputColumn, TableLocation,
};
