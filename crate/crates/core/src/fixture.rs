//! The line-oriented table-fixture format shared by backend fixtures and ETL
//! stage files.
//!
//! ```text
//! #table events
//! event_id,run_id,energy,tag
//! integer,integer,real,text
//! 1,10,0.25,"mu"
//! 2,,0.5,"say ""hi"""
//! ```
//!
//! An empty field is null; text is written quoted with doubled-quote
//! escaping. Tables are separated by a blank line.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::table::{Column, ResultTable};
use crate::value::{format_timestamp, DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureTable {
    pub name: String,
    pub table: ResultTable,
}

impl FixtureTable {
    pub fn new(name: impl Into<String>, table: ResultTable) -> Self {
        FixtureTable { name: name.into(), table }
    }
}

pub fn parse_fixture(text: &str) -> Result<Vec<FixtureTable>> {
    let mut tables: Vec<FixtureTable> = Vec::new();
    let mut lines = text.split('\n').enumerate().peekable();
    loop {
        // skip separators
        while let Some((_, l)) = lines.peek() {
            if l.trim_end_matches('\r').is_empty() {
                lines.next();
            } else {
                break;
            }
        }
        let Some((n, header)) = lines.next() else { break };
        let header = header.trim_end_matches('\r');
        let name = header
            .strip_prefix("#table ")
            .map(str::trim)
            .filter(|s| !s.is_empty() && !s.contains(char::is_whitespace))
            .ok_or_else(|| bad(n, "expected `#table <name>`"))?;
        if tables.iter().any(|t| t.name == name) {
            return Err(bad(n, &format!("table `{name}` defined twice")));
        }
        let (n_names, names) = lines.next().ok_or_else(|| bad(n, "missing column names"))?;
        let (n_types, types) = lines.next().ok_or_else(|| bad(n, "missing column types"))?;
        let names: Vec<&str> = names.trim_end_matches('\r').split(',').map(str::trim).collect();
        let types: Vec<&str> = types.trim_end_matches('\r').split(',').map(str::trim).collect();
        if names.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
            return Err(bad(n_names, "column names must be non-empty and contain no whitespace"));
        }
        if names.len() != types.len() {
            return Err(bad(n_types, "column name and type counts differ"));
        }
        let columns = names
            .iter()
            .zip(&types)
            .map(|(name, ty)| {
                ty.parse::<DataType>()
                    .map(|t| Column::new(*name, t))
                    .map_err(|_| bad(n_types, &format!("unknown type `{ty}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = ResultTable::new(columns);
        while let Some((n_row, line)) = lines.peek().copied() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                break;
            }
            lines.next();
            table.rows.push(parse_row(line, &table.columns).map_err(|m| bad(n_row, &m))?);
        }
        tables.push(FixtureTable { name: name.to_string(), table });
    }
    Ok(tables)
}

fn bad(line_index: usize, msg: &str) -> Error {
    Error::MalformedFixture(format!("line {}: {msg}", line_index + 1))
}

/// Parses one data line against a column list.
pub fn parse_row(line: &str, columns: &[Column]) -> Result<Vec<Value>, String> {
    let fields = split_fields(line)?;
    if fields.len() != columns.len() {
        return Err(format!("expected {} fields, found {}", columns.len(), fields.len()));
    }
    fields
        .into_iter()
        .zip(columns)
        .map(|(field, col)| match field {
            Field { text, quoted: false } if text.is_empty() => Ok(Value::Null),
            Field { text, .. } => Value::parse_as(&text, col.data_type)
                .map_err(|e| format!("column `{}`: {e}", col.name)),
        })
        .collect()
}

struct Field {
    text: String,
    quoted: bool,
}

fn split_fields(line: &str) -> Result<Vec<Field>, String> {
    let mut fields = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        let mut text = String::new();
        let quoted = chars.peek() == Some(&'"');
        if quoted {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        text.push('"');
                    }
                    Some('"') => break,
                    Some(c) => text.push(c),
                    None => return Err("unterminated quoted field".into()),
                }
            }
            match chars.next() {
                None => {
                    fields.push(Field { text, quoted });
                    return Ok(fields);
                }
                Some(',') => fields.push(Field { text, quoted }),
                Some(c) => return Err(format!("unexpected `{c}` after closing quote")),
            }
        } else {
            loop {
                match chars.next() {
                    None => {
                        fields.push(Field { text: text.trim().to_string(), quoted });
                        return Ok(fields);
                    }
                    Some(',') => break,
                    Some(c) => text.push(c),
                }
            }
            fields.push(Field { text: text.trim().to_string(), quoted });
        }
    }
}

/// Appends the textual form of one cell.
pub fn write_cell(out: &mut String, value: &Value) -> Result<()> {
    match value {
        Value::Null => {}
        Value::Integer(i) => write!(out, "{i}").unwrap(),
        Value::Real(r) => write!(out, "{r:?}").unwrap(),
        Value::Timestamp(t) => out.push_str(&format_timestamp(t)),
        Value::Text(s) => {
            if s.contains(['\n', '\r']) {
                return Err(Error::MalformedFixture(
                    "text cells cannot contain line breaks".into(),
                ));
            }
            out.push('"');
            for c in s.chars() {
                if c == '"' {
                    out.push('"');
                }
                out.push(c);
            }
            out.push('"');
        }
    }
    Ok(())
}

pub fn write_row(out: &mut String, row: &[Value]) -> Result<()> {
    // would come out as a blank line, which ends the table
    if let [Value::Null] = row {
        return Err(Error::MalformedFixture("a one-column row cannot be null".into()));
    }
    for (i, cell) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_cell(out, cell)?;
    }
    out.push('\n');
    Ok(())
}

/// Writes the three header lines of a table block.
pub fn write_header(out: &mut String, name: &str, columns: &[Column]) {
    out.push_str("#table ");
    out.push_str(name);
    out.push('\n');
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    let types: Vec<&str> = columns.iter().map(|c| c.data_type.as_str()).collect();
    out.push_str(&types.join(","));
    out.push('\n');
}

pub fn write_fixture(tables: &[FixtureTable]) -> Result<String> {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_header(&mut out, &t.name, &t.table.columns);
        for row in &t.table.rows {
            write_row(&mut out, row)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_TABLES: &str = "#table events\nevent_id,run_id,energy,tag\ninteger,integer,real,text\n1,10,0.25,\"mu\"\n2,,0.5,\"say \"\"hi\"\"\"\n\n#table runs\nid,started\ninteger,timestamp\n10,2004-01-02T03:04:05\n";

    #[test]
    fn parses_two_tables() {
        let tables = parse_fixture(TWO_TABLES).unwrap();
        assert_eq!(tables.len(), 2);
        let events = &tables[0].table;
        assert_eq!(events.len(), 2);
        assert_eq!(events.rows[1][1], Value::Null);
        assert_eq!(events.rows[1][3], Value::Text("say \"hi\"".into()));
        assert_eq!(tables[1].table.columns[1].data_type, DataType::Timestamp);
    }

    #[test]
    fn writer_reproduces_input() {
        let tables = parse_fixture(TWO_TABLES).unwrap();
        assert_eq!(write_fixture(&tables).unwrap(), TWO_TABLES);
    }

    #[test]
    fn empty_quoted_text_is_not_null() {
        let t = parse_fixture("#table t\na\ntext\n\"\"\n,\n").unwrap_err();
        // second data row has two fields for a one-column table
        assert!(matches!(t, Error::MalformedFixture(_)));
        let t = parse_fixture("#table t\na,b\ntext,text\n\"\",\n").unwrap();
        assert_eq!(t[0].table.rows[0], vec![Value::Text(String::new()), Value::Null]);
    }

    #[test]
    fn lone_null_cell_cannot_be_written() {
        let mut t = ResultTable::new(vec![Column::new("a", DataType::Integer)]);
        t.rows.push(vec![Value::Null]);
        let err = write_fixture(&[FixtureTable::new("t", t)]).unwrap_err();
        assert!(matches!(err, Error::MalformedFixture(_)));
    }

    #[test]
    fn non_numeric_cell_in_integer_column() {
        let err = parse_fixture("#table t\na,b\ninteger,text\nabc,\"x\"\n").unwrap_err();
        assert!(matches!(err, Error::MalformedFixture(m) if m.contains("line 4")));
    }

    #[test]
    fn rejects_bad_header() {
        assert!(parse_fixture("table t\na\ninteger\n").is_err());
        assert!(parse_fixture("#table t\na,b\ninteger\n").is_err());
        assert!(parse_fixture("#table t\na\nnumber\n").is_err());
        assert!(parse_fixture("#table t\na\ninteger\n\n#table t\na\ninteger\n").is_err());
    }

    #[test]
    fn empty_table_block() {
        let t = parse_fixture("#table t\na\ninteger\n").unwrap();
        assert!(t[0].table.is_empty());
        assert!(parse_fixture("").unwrap().is_empty());
    }

    fn cell(ty: DataType) -> BoxedStrategy<Value> {
        let v = match ty {
            DataType::Integer => any::<i64>().prop_map(Value::Integer).boxed(),
            DataType::Real => (-1e12f64..1e12).prop_map(Value::Real).boxed(),
            DataType::Text => "[ -~]{0,12}".prop_map(Value::Text).boxed(),
            DataType::Timestamp => (0i64..4_000_000_000)
                .prop_map(|s| {
                    Value::Timestamp(chrono::DateTime::from_timestamp(s, 0).unwrap().naive_utc())
                })
                .boxed(),
        };
        prop_oneof![1 => Just(Value::Null), 4 => v].boxed()
    }

    proptest! {
        #[test]
        fn round_trips(rows in proptest::collection::vec(
            (cell(DataType::Integer), cell(DataType::Real), cell(DataType::Text), cell(DataType::Timestamp)),
            0..20,
        )) {
            let columns = vec![
                Column::new("i", DataType::Integer),
                Column::new("r", DataType::Real),
                Column::new("s", DataType::Text),
                Column::new("ts", DataType::Timestamp),
            ];
            let rows = rows.into_iter().map(|(a, b, c, d)| vec![a, b, c, d]).collect();
            let t = vec![FixtureTable::new("t", ResultTable::with_rows(columns, rows).unwrap())];
            let text = write_fixture(&t).unwrap();
            prop_assert_eq!(parse_fixture(&text).unwrap(), t);
        }
    }
}
