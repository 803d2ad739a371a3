//! Trace CSV: one row per evaluation in id order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::store::{CandidateRecord, CandidateStore, Source, StoreError};
use crate::pose::REGMSE_FLOOR;
use crate::snap::SnapSequence;

pub const TRACE_HEADER: [&str; 6] = ["id", "snap", "value", "regmse", "source", "wall_time_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub id: usize,
    pub snap: String,
    pub value: f64,
    pub regmse: f64,
    pub source: String,
    pub wall_time_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace header must be {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("trace row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_trace<W: Write>(store: &CandidateStore, w: W) -> Result<(), TraceError> {
    let mut out = csv::Writer::from_writer(w);
    for r in store.records() {
        out.serialize(TraceRow {
            id: r.id,
            snap: r.snap.render(),
            value: r.value,
            regmse: r.regmse,
            source: r.source.to_string(),
            wall_time_s: r.wall_time_s,
        })
        .map_err(|e| TraceError::Row {
            row: r.id + 2,
            msg: e.to_string(),
        })?;
    }
    if store.is_empty() {
        out.write_record(TRACE_HEADER).map_err(|e| TraceError::Row { row: 1, msg: e.to_string() })?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace; errors carry the 1-based line number (the header is line 1).
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| TraceError::Row { row: 1, msg: e.to_string() })?;
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: TRACE_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| TraceError::Row {
            row: i + 2,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuilds a store from trace rows, validating sequences, sources and ids.
pub fn store_from_rows(rows: &[TraceRow]) -> Result<CandidateStore, TraceError> {
    let mut records = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let err = |msg: String| TraceError::Row { row: i + 2, msg };
        let snap: SnapSequence = r.snap.parse().map_err(|e| err(format!("{e}")))?;
        let check = snap.validate();
        if !check.valid {
            return Err(err(format!("{} is invalid ({check})", r.snap)));
        }
        records.push(CandidateRecord {
            id: r.id,
            snap,
            value: r.value,
            regmse: r.regmse,
            failed: r.regmse >= 1.0 / REGMSE_FLOOR,
            source: r.source.parse::<Source>().map_err(err)?,
            wall_time_s: r.wall_time_s,
        });
    }
    Ok(CandidateStore::from_records(records)?)
}
