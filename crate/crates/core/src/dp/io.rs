//! CSV serialization of value tables and policies.

use super::solver::{Policy, Stage, StateGrid, ValueTable};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    /// Stage index, empty for a stationary table.
    stage: Option<usize>,
    info_index: usize,
    info_trace: f64,
    gain: f64,
    harvest: Option<f64>,
    battery: f64,
    value: f64,
    action: f64,
}

fn stage_index(stage: Stage) -> Option<usize> {
    match stage {
        Stage::Finite(k) => Some(k),
        Stage::Stationary => None,
    }
}

/// One row per (stage, grid state): axis coordinates, value and action.
///
/// The harvest column is empty when the harvest process is i.i.d. and the tables
/// carry a single harvest slice.
pub fn write_tables_csv<W: Write>(grid: &StateGrid, tables: &[ValueTable], policies: &[Policy], out: W) -> Result<()> {
    if tables.len() != policies.len() {
        return Err(Error::InvalidModel("every table needs its policy".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    for (table, policy) in tables.iter().zip(policies) {
        if table.values.len() != grid.len() || policy.actions.len() != grid.len() {
            return Err(Error::InvalidModel("table and policy must match the grid".into()));
        }
        for s in 0..grid.len() {
            let (i, g, h, b) = grid.coords(s);
            w.serialize(TableRow {
                stage: stage_index(policy.stage),
                info_index: i,
                info_trace: grid.info.coordinate(i),
                gain: grid.gain.value(g),
                harvest: (!grid.harvest.is_iid()).then(|| grid.harvest.value(h)),
                battery: grid.battery()[b],
                value: table.values[s],
                action: policy.actions[s],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A single table; see [`write_tables_csv`].
pub fn write_table_csv<W: Write>(grid: &StateGrid, table: &ValueTable, policy: &Policy, out: W) -> Result<()> {
    write_tables_csv(grid, std::slice::from_ref(table), std::slice::from_ref(policy), out)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Read policies written by [`write_tables_csv`] for the same grid, in stage order.
///
/// Every row must carry the coordinates of the grid state it stands for; a file
/// produced for a different grid is rejected as a schema error.
pub fn read_policies_csv<R: Read>(grid: &StateGrid, input: R) -> Result<Vec<Policy>> {
    let mut policies: Vec<Policy> = Vec::new();
    let mismatch = |row: usize, what: &str| Error::schema(format!("policy row {}", row + 1), what.to_string());
    for (n, record) in csv::Reader::from_reader(input).deserialize::<TableRow>().enumerate() {
        let row = record.map_err(|e| Error::schema(format!("policy row {}", n + 1), e.to_string()))?;
        let s = n % grid.len();
        if s == 0 {
            let stage = match row.stage {
                Some(k) if k == policies.len() => Stage::Finite(k),
                None if policies.is_empty() => Stage::Stationary,
                _ => {
                    let expected = format!(
                        "stages numbered 0, 1, ... or one stationary table, {} rows each",
                        grid.len()
                    );
                    return Err(mismatch(n, &expected));
                }
            };
            policies.push(Policy {
                stage,
                actions: Vec::with_capacity(grid.len()),
            });
        }
        let policy = policies.last_mut().expect("a policy was pushed at the first row");
        if row.stage != stage_index(policy.stage) {
            return Err(mismatch(n, "the same stage for every state of a table"));
        }
        let (i, g, h, b) = grid.coords(s);
        let harvest_ok = match row.harvest {
            Some(v) => !grid.harvest.is_iid() && close(v, grid.harvest.value(h)),
            None => grid.harvest.is_iid(),
        };
        if row.info_index != i
            || !close(row.info_trace, grid.info.coordinate(i))
            || !close(row.gain, grid.gain.value(g))
            || !harvest_ok
            || !close(row.battery, grid.battery()[b])
        {
            return Err(mismatch(n, "coordinates of the configured grid"));
        }
        if !(row.action >= 0.0 && row.action <= grid.battery()[b] + 1e-9) {
            return Err(mismatch(n, "an action between 0 and the battery level"));
        }
        policy.actions.push(row.action);
    }
    match policies.last() {
        None => Err(Error::schema("policy", "at least one table")),
        Some(p) if p.actions.len() != grid.len() => {
            Err(Error::schema("policy", format!("{} rows per table", grid.len())))
        }
        Some(_) => Ok(policies),
    }
}
