//! Merge-phase operators over [`ResultTable`]s.

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::planner::{PlanOperand, PlanPredicate};
use crate::sql::CompareOp;
use crate::table::{Column, ResultTable};
use crate::value::Value;

/// Hashable join key component. Integral reals hash as integers so that
/// `2 = 2.0` matches, consistent with [`Value::sql_cmp`].
#[derive(Debug, PartialEq, Eq, Hash)]
enum KeyPart<'a> {
    Int(i64),
    Real(u64),
    Text(&'a str),
    Time(NaiveDateTime),
}

fn key_part(v: &Value) -> Option<KeyPart<'_>> {
    match v {
        Value::Null => None,
        Value::Integer(i) => Some(KeyPart::Int(*i)),
        Value::Real(r) if r.is_nan() => None,
        Value::Real(r) if r.fract() == 0.0 && *r >= i64::MIN as f64 && *r < i64::MAX as f64 => {
            Some(KeyPart::Int(*r as i64))
        }
        Value::Real(r) => Some(KeyPart::Real(r.to_bits())),
        Value::Text(s) => Some(KeyPart::Text(s)),
        Value::Timestamp(t) => Some(KeyPart::Time(*t)),
    }
}

fn row_key<'a>(row: &'a [Value], cols: &[usize]) -> Option<Vec<KeyPart<'a>>> {
    cols.iter().map(|&c| key_part(&row[c])).collect()
}

/// Inner equi-join on `keys` (left column index, right column index).
/// Output columns are the left columns followed by the right columns; null
/// keys never match.
pub fn hash_equi_join(left: &ResultTable, right: &ResultTable, keys: &[(usize, usize)]) -> Result<ResultTable> {
    hash_equi_join_capped(left, right, keys, usize::MAX)
}

/// [`hash_equi_join`] that fails once the output exceeds `cell_cap` cells.
pub fn hash_equi_join_capped(
    left: &ResultTable,
    right: &ResultTable,
    keys: &[(usize, usize)],
    cell_cap: usize,
) -> Result<ResultTable> {
    for &(l, r) in keys {
        let (lc, rc) = (
            left.columns.get(l).ok_or_else(|| Error::UnknownColumn(format!("left #{l}")))?,
            right.columns.get(r).ok_or_else(|| Error::UnknownColumn(format!("right #{r}")))?,
        );
        if !lc.data_type.comparable_with(rc.data_type) {
            return Err(Error::TypeMismatch(format!(
                "cannot join {} ({}) with {} ({})",
                lc.name, lc.data_type, rc.name, rc.data_type
            )));
        }
    }
    let mut columns = left.columns.clone();
    columns.extend(right.columns.iter().cloned());
    let width = columns.len();
    let mut out = ResultTable::new(columns);

    let left_cols: Vec<usize> = keys.iter().map(|k| k.0).collect();
    let right_cols: Vec<usize> = keys.iter().map(|k| k.1).collect();
    let mut build: HashMap<Vec<KeyPart<'_>>, Vec<usize>> = HashMap::new();
    for (i, row) in right.rows.iter().enumerate() {
        if let Some(k) = row_key(row, &right_cols) {
            build.entry(k).or_default().push(i);
        }
    }
    for lrow in &left.rows {
        let Some(k) = row_key(lrow, &left_cols) else { continue };
        if let Some(matches) = build.get(&k) {
            for &ri in matches {
                if (out.rows.len() + 1) * width > cell_cap {
                    return Err(Error::ResultTooLarge { cells: (out.rows.len() + 1) * width, cap: cell_cap });
                }
                let mut row = Vec::with_capacity(width);
                row.extend(lrow.iter().cloned());
                row.extend(right.rows[ri].iter().cloned());
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

fn column_index(table: &ResultTable, name: &str) -> Result<usize> {
    table.column_index(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

pub(crate) fn compare_holds(op: CompareOp, left: &Value, right: &Value) -> bool {
    left.sql_cmp(right).is_some_and(|o| op.holds(o))
}

/// Keeps the rows satisfying every predicate, in order. Comparisons
/// involving null are false.
pub fn apply_residual(mut table: ResultTable, predicates: &[PlanPredicate]) -> Result<ResultTable> {
    if predicates.is_empty() {
        return Ok(table);
    }
    enum Rhs {
        Col(usize),
        Lit(Value),
    }
    let compiled = predicates
        .iter()
        .map(|p| {
            let l = column_index(&table, &p.left)?;
            let r = match &p.right {
                PlanOperand::Column(c) => Rhs::Col(column_index(&table, c)?),
                PlanOperand::Literal(lit) => Rhs::Lit(lit.to_value()),
            };
            Ok((l, p.op, r))
        })
        .collect::<Result<Vec<_>>>()?;
    table.rows.retain(|row| {
        compiled.iter().all(|(l, op, r)| match r {
            Rhs::Col(c) => compare_holds(*op, &row[*l], &row[*c]),
            Rhs::Lit(v) => compare_holds(*op, &row[*l], v),
        })
    });
    Ok(table)
}

/// Selects columns by name in the requested order. Duplicate rows are kept.
pub fn project(table: &ResultTable, columns: &[&str]) -> Result<ResultTable> {
    let idx = columns.iter().map(|c| column_index(table, c)).collect::<Result<Vec<_>>>()?;
    Ok(ResultTable {
        columns: idx.iter().map(|&i| table.columns[i].clone()).collect(),
        rows: table.rows.iter().map(|row| idx.iter().map(|&i| row[i].clone()).collect()).collect(),
    })
}

/// Order-by comparison for one key: nulls last in either direction.
pub(crate) fn order_cmp(a: &Value, b: &Value, descending: bool) -> Ordering {
    match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ if descending => b.cmp(a),
        _ => a.cmp(b),
    }
}

/// Final ordering, limit and projection. Rows are sorted by the order keys
/// and then canonically by the projected row, so ties (and queries without
/// ORDER BY) are deterministic.
pub fn finalize(
    table: ResultTable,
    order_by: &[(usize, bool)],
    limit: Option<u64>,
    projection: &[usize],
    output: Vec<Column>,
) -> ResultTable {
    let mut keyed: Vec<(Vec<Value>, Vec<Value>)> = table
        .rows
        .into_iter()
        .map(|row| {
            let keys = order_by.iter().map(|(i, _)| row[*i].clone()).collect();
            let projected = projection.iter().map(|&i| row[i].clone()).collect();
            (keys, projected)
        })
        .collect();
    keyed.sort_unstable_by(|(ka, ra), (kb, rb)| {
        ka.iter()
            .zip(kb)
            .zip(order_by)
            .map(|((a, b), (_, desc))| order_cmp(a, b, *desc))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then_with(|| ra.cmp(rb))
    });
    if let Some(n) = limit {
        keyed.truncate(n as usize);
    }
    ResultTable { columns: output, rows: keyed.into_iter().map(|(_, r)| r).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::DataType;

    fn ints(name: &str, values: &[Option<i64>]) -> ResultTable {
        ResultTable::with_rows(
            vec![Column::new(name, DataType::Integer)],
            values.iter().map(|v| vec![v.map_or(Value::Null, Value::Integer)]).collect(),
        )
        .unwrap()
    }

    fn nested_loop(left: &ResultTable, right: &ResultTable, keys: &[(usize, usize)]) -> Vec<Vec<Value>> {
        let mut out = Vec::new();
        for l in &left.rows {
            for r in &right.rows {
                if keys.iter().all(|&(a, b)| compare_holds(CompareOp::Eq, &l[a], &r[b])) {
                    out.push(l.iter().chain(r).cloned().collect());
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn join_with_empty_is_empty() {
        let l = ints("a", &[Some(1), Some(2)]);
        let r = ints("b", &[]);
        assert!(hash_equi_join(&l, &r, &[(0, 0)]).unwrap().is_empty());
        assert!(hash_equi_join(&r, &l, &[(0, 0)]).unwrap().is_empty());
    }

    #[test]
    fn duplicate_keys_multiply() {
        let l = ints("a", &[Some(1), Some(2), Some(2)]);
        let r = ints("b", &[Some(2), Some(2), Some(3)]);
        let expected = nested_loop(&l, &r, &[(0, 0)]);
        assert_eq!(expected.len(), 4);
        let got = hash_equi_join(&l, &r, &[(0, 0)]).unwrap().into_canonical();
        assert_eq!(got.rows, expected);
        assert_eq!(got.columns.len(), 2);
    }

    #[test]
    fn null_keys_never_match() {
        let l = ints("a", &[None, Some(1)]);
        let r = ints("b", &[None, Some(1)]);
        assert_eq!(hash_equi_join(&l, &r, &[(0, 0)]).unwrap().len(), 1);
    }

    #[test]
    fn two_key_pairs() {
        let cols = vec![Column::new("x", DataType::Integer), Column::new("y", DataType::Text)];
        let row = |x: i64, y: &str| vec![Value::Integer(x), Value::Text(y.into())];
        let l = ResultTable::with_rows(cols.clone(), vec![row(1, "a"), row(1, "b"), row(2, "a")]).unwrap();
        let r = ResultTable::with_rows(cols, vec![row(1, "a"), row(2, "b"), row(1, "b"), row(1, "b")]).unwrap();
        let keys = [(0, 0), (1, 1)];
        let expected = nested_loop(&l, &r, &keys);
        assert_eq!(expected.len(), 3);
        assert_eq!(hash_equi_join(&l, &r, &keys).unwrap().into_canonical().rows, expected);
    }

    #[test]
    fn integer_and_real_keys_match_numerically() {
        let l = ints("a", &[Some(2), Some(3)]);
        let r = ResultTable::with_rows(
            vec![Column::new("b", DataType::Real)],
            vec![vec![Value::Real(2.0)], vec![Value::Real(3.5)]],
        )
        .unwrap();
        assert_eq!(hash_equi_join(&l, &r, &[(0, 0)]).unwrap().len(), 1);
    }

    #[test]
    fn incompatible_key_types() {
        let l = ints("a", &[Some(1)]);
        let r = ResultTable::with_rows(vec![Column::new("b", DataType::Text)], vec![vec![Value::Text("1".into())]]).unwrap();
        assert!(matches!(hash_equi_join(&l, &r, &[(0, 0)]), Err(Error::TypeMismatch(_))));
    }

    #[test]
    fn join_respects_cap() {
        let l = ints("a", &[Some(1); 10]);
        let r = ints("b", &[Some(1); 10]);
        assert!(matches!(hash_equi_join_capped(&l, &r, &[(0, 0)], 50), Err(Error::ResultTooLarge { .. })));
    }

    fn pair_table() -> ResultTable {
        let cols = vec![Column::new("a", DataType::Integer), Column::new("b", DataType::Real), Column::new("c", DataType::Text)];
        let rows = vec![
            vec![Value::Integer(1), Value::Real(2.0), Value::Text("x".into())],
            vec![Value::Integer(3), Value::Real(2.5), Value::Text("y".into())],
            vec![Value::Null, Value::Real(9.0), Value::Text("z".into())],
            vec![Value::Integer(2), Value::Null, Value::Text("w".into())],
        ];
        ResultTable::with_rows(cols, rows).unwrap()
    }

    #[test]
    fn residual_filters_like_an_oracle() {
        let t = pair_table();
        assert_eq!(apply_residual(t.clone(), &[]).unwrap(), t);
        let pred = PlanPredicate { left: "a".into(), op: CompareOp::Lt, right: PlanOperand::Column("b".into()) };
        let got = apply_residual(t.clone(), std::slice::from_ref(&pred)).unwrap();
        let expected: Vec<_> = t
            .rows
            .iter()
            .filter(|r| r[0].sql_cmp(&r[1]) == Some(Ordering::Less))
            .cloned()
            .collect();
        assert_eq!(got.rows, expected);
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn residual_drops_null_comparisons() {
        let pred = PlanPredicate {
            left: "b".into(),
            op: CompareOp::NotEq,
            right: PlanOperand::Literal(crate::sql::Literal::Real(100.0)),
        };
        let got = apply_residual(pair_table(), &[pred]).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.rows.iter().all(|r| !r[1].is_null()));
    }

    #[test]
    fn projection() {
        let t = pair_table();
        assert_eq!(project(&t, &["a", "b", "c"]).unwrap(), t);
        let one = project(&t, &["b"]).unwrap();
        assert_eq!((one.width(), one.len()), (1, 4));
        let swapped = project(&t, &["c", "a"]).unwrap();
        assert_eq!(swapped.rows[1], vec![Value::Text("y".into()), Value::Integer(3)]);
        assert_eq!(swapped.columns[0].name, "c");
        assert!(matches!(project(&t, &["nope"]), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn finalize_orders_with_nulls_last() {
        let t = pair_table();
        let out = finalize(t.clone(), &[(0, true)], None, &[0], vec![Column::new("a", DataType::Integer)]);
        let a: Vec<Value> = out.rows.into_iter().map(|mut r| r.remove(0)).collect();
        assert_eq!(a, vec![Value::Integer(3), Value::Integer(2), Value::Integer(1), Value::Null]);
        let limited = finalize(t, &[], Some(2), &[2], vec![Column::new("c", DataType::Text)]);
        assert_eq!(limited.rows, vec![vec![Value::Text("w".into())], vec![Value::Text("x".into())]]);
    }
}
