//! JSON bodies of the federation and replica-location HTTP interfaces.
//!
//! Encoding is compact JSON with fields in declaration order, so a body
//! decoded and re-encoded reproduces the original bytes.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value as Json};

use crate::error::{Error, Result};
use crate::table::{Column, ResultTable};
use crate::value::{format_timestamp, parse_timestamp, DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub sql: String,
    #[serde(default)]
    pub no_forward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WireTable {
    columns: Vec<Column>,
    rows: Vec<Vec<Json>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCode {
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegisterRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_inline: Option<String>,
    pub driver: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshResponse {
    pub changed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowerSpecDoc {
    pub source_id: String,
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub upper: String,
    pub lowers: Vec<LowerSpecDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishRequest {
    pub server: String,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckResponse {
    pub ack: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupResponse {
    pub servers: Vec<String>,
}

pub fn to_json<T: Serialize>(body: &T) -> String {
    serde_json::to_string(body).expect("wire bodies always serialize")
}

pub fn from_json<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::DecodeError(e.to_string()))
}

fn encode_cell(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Integer(i) => Json::from(*i),
        Value::Real(r) => Number::from_f64(*r).map_or(Json::Null, Json::Number),
        Value::Text(s) => Json::String(s.clone()),
        Value::Timestamp(t) => Json::String(format_timestamp(t)),
    }
}

fn decode_cell(j: &Json, ty: DataType) -> Option<Value> {
    Some(match (j, ty) {
        (Json::Null, _) => Value::Null,
        (Json::Number(n), DataType::Integer) => Value::Integer(n.as_i64()?),
        (Json::Number(n), DataType::Real) => Value::Real(n.as_f64()?),
        (Json::String(s), DataType::Text) => Value::Text(s.clone()),
        (Json::String(s), DataType::Timestamp) => Value::Timestamp(parse_timestamp(s)?),
        _ => return None,
    })
}

pub fn encode_table(t: &ResultTable) -> String {
    to_json(&WireTable {
        columns: t.columns.clone(),
        rows: t.rows.iter().map(|r| r.iter().map(encode_cell).collect()).collect(),
    })
}

pub fn decode_table(text: &str) -> Result<ResultTable> {
    let w: WireTable = from_json(text)?;
    let mut rows = Vec::with_capacity(w.rows.len());
    for (i, row) in w.rows.iter().enumerate() {
        if row.len() != w.columns.len() {
            return Err(Error::DecodeError(format!("row {i} has {} cells, expected {}", row.len(), w.columns.len())));
        }
        let decoded = row
            .iter()
            .zip(&w.columns)
            .map(|(cell, col)| {
                decode_cell(cell, col.data_type).ok_or_else(|| {
                    Error::DecodeError(format!("row {i}: {cell} is not a valid {} for `{}`", col.data_type, col.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(decoded);
    }
    Ok(ResultTable { columns: w.columns, rows })
}

pub fn encode_error(e: &Error) -> String {
    to_json(&ErrorBody { error: ErrorCode { code: e.code().to_string() }, message: e.to_string() })
}

/// Decodes a peer's error body into a [`Error::RemoteError`] carrying the
/// peer's code.
pub fn decode_error(url: &str, text: &str) -> Error {
    match from_json::<ErrorBody>(text) {
        Ok(b) => Error::RemoteError { url: url.to_string(), code: b.error.code, message: b.message },
        Err(e) => e,
    }
}
