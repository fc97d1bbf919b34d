//! Decomposes a bound query into one sub-query per target plus a merge
//! plan of cross-target equi-joins, residual filters and a projection.
//!
//! Placement rule: a predicate whose columns all live on one target is
//! pushed into that target's sub-query; an equality between columns of two
//! targets becomes a join key; anything else spanning targets is applied
//! after the joins. Joins are left-deep in canonical target order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::remote::RemoteResolver;
use crate::sql::{
    bind_remote, BoundColumn, BoundOperand, BoundQuery, ColumnRef, ColumnSlot, CompareOp, Literal,
    Operand, Predicate, QueryAst, SelectList, TableLocation, TableRef,
};
use crate::table::Column;
use crate::catalog::ColumnSpec;

/// Where a sub-query runs. Ordering is the canonical target order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Local(String),
    Remote(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Local(id) => write!(f, "{id}"),
            Target::Remote(url) => write!(f, "{url}"),
        }
    }
}

/// Tables grouped by target, with the schemas of remote tables as their
/// hosts describe them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub groups: BTreeMap<Target, Vec<usize>>,
    pub remote_schemas: BTreeMap<usize, Vec<ColumnSpec>>,
}

pub fn partition_tables(bq: &BoundQuery, resolver: &dyn RemoteResolver) -> Result<Partition> {
    let mut partition = Partition::default();
    let mut located = BTreeMap::new();
    for (idx, table) in bq.tables.iter().enumerate() {
        let target = match &table.location {
            TableLocation::Local { source_id } => Target::Local(source_id.clone()),
            TableLocation::Remote => {
                if !located.contains_key(&table.logical) {
                    let info = resolver
                        .locate(&table.logical)?
                        .ok_or_else(|| Error::UnknownTable(table.logical.clone()))?;
                    located.insert(table.logical.clone(), info);
                }
                let info = &located[&table.logical];
                partition.remote_schemas.insert(idx, info.columns.clone());
                Target::Remote(info.server_url.clone())
            }
        };
        partition.groups.entry(target).or_default().push(idx);
    }
    Ok(partition)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTable {
    /// Physical name for local targets, logical name for remote ones.
    pub name: String,
    pub binding: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubField {
    pub binding: String,
    /// Column name as the target knows it.
    pub column: String,
    /// `binding.logical`, unique within the plan.
    pub internal: String,
    pub data_type: crate::value::DataType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubQuery {
    pub target: Target,
    pub tables: Vec<SubTable>,
    pub select_fields: Vec<SubField>,
    /// Conjunction, in target names, of every predicate local to the target.
    pub where_clause: Vec<Predicate>,
    pub output_schema: Vec<Column>,
}

impl SubQuery {
    /// Select-field strings for an adapter call (`binding.column`).
    pub fn field_list(&self) -> Vec<String> {
        self.select_fields.iter().map(|f| format!("{}.{}", f.binding, f.column)).collect()
    }

    /// Table strings for an adapter call (`name` or `name binding`).
    pub fn table_list(&self) -> Vec<String> {
        self.to_ast().from.iter().map(ToString::to_string).collect()
    }

    pub fn where_string(&self) -> String {
        crate::sql::render_conjunction(&self.where_clause)
    }

    pub fn to_ast(&self) -> QueryAst {
        QueryAst {
            select: SelectList::Items(
                self.select_fields.iter().map(|f| ColumnRef::qualified(&f.binding, &f.column)).collect(),
            ),
            from: self
                .tables
                .iter()
                .map(|t| TableRef { name: t.name.clone(), alias: (t.binding != t.name).then(|| t.binding.clone()) })
                .collect(),
            predicates: self.where_clause.clone(),
            order_by: vec![],
            limit: None,
        }
    }
}

/// Renders a sub-query as SQL in the front-end grammar.
pub fn render_subquery(sq: &SubQuery) -> String {
    sq.to_ast().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinStep {
    /// Sub-queries already joined into the left input.
    pub left: Vec<usize>,
    pub right: usize,
    /// (left internal column, right internal column) equality pairs.
    pub keys: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOperand {
    Column(String),
    Literal(Literal),
}

/// A predicate over internal column names, evaluated after the joins.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanPredicate {
    pub left: String,
    pub op: CompareOp,
    pub right: PlanOperand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedColumn {
    /// Client-visible name.
    pub name: String,
    pub internal: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergePlan {
    pub join_steps: Vec<JoinStep>,
    pub residual_predicates: Vec<PlanPredicate>,
    pub projection: Vec<ProjectedColumn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub subqueries: Vec<SubQuery>,
    pub merge: MergePlan,
    /// (internal column, descending)
    pub order_by: Vec<(String, bool)>,
    pub limit: Option<u64>,
}

impl QueryPlan {
    pub fn pushed_predicate_count(&self) -> usize {
        self.subqueries.iter().map(|s| s.where_clause.len()).sum()
    }

    pub fn join_key_count(&self) -> usize {
        self.merge.join_steps.iter().map(|j| j.keys.len()).sum()
    }
}

fn internal_name(bq: &BoundQuery, c: &BoundColumn) -> String {
    format!("{}.{}", bq.tables[c.table].binding, c.logical)
}

fn bound(slot: &ColumnSlot) -> Result<&BoundColumn> {
    slot.bound().ok_or_else(|| match slot {
        ColumnSlot::Deferred(r) => Error::UnknownColumn(r.to_string()),
        ColumnSlot::Bound(_) => unreachable!(),
    })
}

pub fn plan(bq: &BoundQuery, partition: &Partition) -> Result<QueryPlan> {
    let completed;
    let bq = if bq.is_complete() && partition.remote_schemas.is_empty() {
        bq
    } else {
        completed = bind_remote(bq, &partition.remote_schemas)?;
        &completed
    };
    if !bq.is_complete() {
        return Err(Error::UnknownTable("remote table was not described by its host".into()));
    }

    let groups = split_remote_groups(bq, &partition.groups)?;
    let targets: Vec<&Target> = groups.iter().map(|(t, _)| t).collect();
    let mut target_of = vec![usize::MAX; bq.tables.len()];
    for (t, (_, tables)) in groups.iter().enumerate() {
        for &idx in tables {
            target_of[idx] = t;
        }
    }
    if let Some(idx) = target_of.iter().position(|&t| t == usize::MAX) {
        return Err(Error::UnknownTable(bq.tables[idx].logical.clone()));
    }

    // (table, column position) needed downstream of each target
    let mut needed: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); targets.len()];
    let position = |c: &BoundColumn| -> usize {
        bq.tables[c.table]
            .columns
            .as_ref()
            .and_then(|cols| cols.iter().position(|s| s.logical_name == c.logical))
            .unwrap_or(usize::MAX)
    };
    let mut need = |c: &BoundColumn| needed[target_of[c.table]].insert((c.table, position(c)));

    let mut pushed: Vec<Vec<Predicate>> = vec![Vec::new(); targets.len()];
    // (left target, right target, left column, right column)
    let mut edges: Vec<(usize, usize, BoundColumn, BoundColumn)> = Vec::new();
    let mut residual = Vec::new();

    let target_ref = |c: &BoundColumn| {
        let t = &bq.tables[c.table];
        ColumnRef::qualified(&t.binding, if t.is_local() { &c.physical } else { &c.logical })
    };

    for p in &bq.predicates {
        let left = bound(&p.left)?;
        match &p.right {
            BoundOperand::Literal(lit) => pushed[target_of[left.table]].push(Predicate {
                left: target_ref(left),
                op: p.op,
                right: Operand::Literal(lit.clone()),
            }),
            BoundOperand::Column(slot) => {
                let right = bound(slot)?;
                let (lt, rt) = (target_of[left.table], target_of[right.table]);
                if lt == rt {
                    pushed[lt].push(Predicate {
                        left: target_ref(left),
                        op: p.op,
                        right: Operand::Column(target_ref(right)),
                    });
                } else if p.op == CompareOp::Eq {
                    need(left);
                    need(right);
                    edges.push((lt, rt, left.clone(), right.clone()));
                } else {
                    need(left);
                    need(right);
                    residual.push(PlanPredicate {
                        left: internal_name(bq, left),
                        op: p.op,
                        right: PlanOperand::Column(internal_name(bq, right)),
                    });
                }
            }
        }
    }

    let mut projection = Vec::new();
    for out in &bq.select {
        let c = bound(&out.column)?;
        need(c);
        projection.push(ProjectedColumn { name: out.name.clone(), internal: internal_name(bq, c) });
    }
    let mut order_by = Vec::new();
    for (slot, desc) in &bq.order_by {
        let c = bound(slot)?;
        need(c);
        order_by.push((internal_name(bq, c), *desc));
    }

    let subqueries = groups
        .iter()
        .enumerate()
        .map(|(t, (target, tables))| {
            let select_fields: Vec<SubField> = needed[t]
                .iter()
                .map(|&(table, pos)| {
                    let bt = &bq.tables[table];
                    let spec = &bt.columns.as_ref().expect("complete query")[pos];
                    SubField {
                        binding: bt.binding.clone(),
                        column: if bt.is_local() { spec.physical_name.clone() } else { spec.logical_name.clone() },
                        internal: format!("{}.{}", bt.binding, spec.logical_name),
                        data_type: spec.data_type,
                    }
                })
                .collect();
            let output_schema = select_fields.iter().map(|f| Column::new(&f.internal, f.data_type)).collect();
            SubQuery {
                target: target.clone(),
                tables: tables
                    .iter()
                    .map(|&i| SubTable { name: bq.tables[i].physical.clone(), binding: bq.tables[i].binding.clone() })
                    .collect(),
                select_fields,
                where_clause: std::mem::take(&mut pushed[t]),
                output_schema,
            }
        })
        .collect::<Vec<_>>();

    let join_steps = order_joins(&subqueries, &edges, bq)?;
    Ok(QueryPlan {
        subqueries,
        merge: MergePlan { join_steps, residual_predicates: residual, projection },
        order_by,
        limit: bq.limit,
    })
}

/// A peer answers a forwarded sub-query with its own planner, which would
/// reject tables that are only linked through tables of other targets. So
/// the tables bound for one peer are split into groups connected by
/// equalities among themselves, each forwarded on its own.
fn split_remote_groups(bq: &BoundQuery, groups: &BTreeMap<Target, Vec<usize>>) -> Result<Vec<(Target, Vec<usize>)>> {
    let mut out = Vec::new();
    for (target, tables) in groups {
        if let Target::Local(_) = target {
            out.push((target.clone(), tables.clone()));
            continue;
        }
        let members: BTreeSet<usize> = tables.iter().copied().collect();
        let mut local_parent: BTreeMap<usize, usize> = tables.iter().map(|&t| (t, t)).collect();
        let find = |lp: &BTreeMap<usize, usize>, mut i: usize| {
            while lp[&i] != i {
                i = lp[&i];
            }
            i
        };
        for p in &bq.predicates {
            if let (CompareOp::Eq, BoundOperand::Column(slot)) = (p.op, &p.right) {
                let (a, b) = (bound(&p.left)?.table, bound(slot)?.table);
                if members.contains(&a) && members.contains(&b) {
                    let (ra, rb) = (find(&local_parent, a), find(&local_parent, b));
                    local_parent.insert(ra.max(rb), ra.min(rb));
                }
            }
        }
        let mut parts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &t in tables {
            let r = find(&local_parent, t);
            parts.entry(r).or_default().push(t);
        }
        out.extend(parts.into_values().map(|part| (target.clone(), part)));
    }
    Ok(out)
}

/// Left-deep join order: start from the first target and repeatedly attach
/// the lowest-ordered target that shares an equality with the joined set.
fn order_joins(
    subqueries: &[SubQuery],
    edges: &[(usize, usize, BoundColumn, BoundColumn)],
    bq: &BoundQuery,
) -> Result<Vec<JoinStep>> {
    let n = subqueries.len();
    let mut joined = vec![0];
    let mut steps = Vec::new();
    while joined.len() < n {
        let next = (0..n).filter(|t| !joined.contains(t)).find(|t| {
            edges.iter().any(|(a, b, _, _)| (a == t && joined.contains(b)) || (b == t && joined.contains(a)))
        });
        let Some(next) = next else {
            let isolated: Vec<String> = (0..n)
                .filter(|t| !joined.contains(t))
                .map(|t| subqueries[t].target.to_string())
                .collect();
            let connected: Vec<String> = joined.iter().map(|&t| subqueries[t].target.to_string()).collect();
            return Err(Error::CrossProductRejected(format!(
                "[{}] and [{}]: no equality links them",
                connected.join(", "),
                isolated.join(", ")
            )));
        };
        let keys = edges
            .iter()
            .filter_map(|(a, b, l, r)| {
                if *b == next && joined.contains(a) {
                    Some((internal_name(bq, l), internal_name(bq, r)))
                } else if *a == next && joined.contains(b) {
                    Some((internal_name(bq, r), internal_name(bq, l)))
                } else {
                    None
                }
            })
            .collect();
        steps.push(JoinStep { left: joined.clone(), right: next, keys });
        joined.push(next);
    }
    Ok(steps)
}
