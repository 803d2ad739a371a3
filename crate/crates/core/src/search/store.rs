//! Evaluated candidates keyed by canonical SNAP text.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::pose::CandidateResult;
use crate::snap::SnapSequence;

/// How a candidate was proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Initial,
    Ascent,
    Resample,
    RandomBaseline,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Initial => "initial",
            Source::Ascent => "ascent",
            Source::Resample => "resample",
            Source::RandomBaseline => "random_baseline",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initial" => Ok(Source::Initial),
            "ascent" => Ok(Source::Ascent),
            "resample" => Ok(Source::Resample),
            "random_baseline" => Ok(Source::RandomBaseline),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: usize,
    pub snap: SnapSequence,
    pub value: f64,
    pub regmse: f64,
    pub failed: bool,
    pub source: Source,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("{0} is already in the store")]
    Duplicate(String),
    #[error("record id {got} breaks the insertion order (expected {expected})")]
    OutOfOrder { got: usize, expected: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateStore {
    records: Vec<CandidateRecord>,
    index: HashMap<String, usize>,
}

impl CandidateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a store from records in id order.
    pub fn from_records(records: Vec<CandidateRecord>) -> Result<Self, StoreError> {
        let mut s = Self::new();
        for r in records {
            if r.id != s.len() {
                return Err(StoreError::OutOfOrder {
                    got: r.id,
                    expected: s.len(),
                });
            }
            s.push(r)?;
        }
        Ok(s)
    }

    fn push(&mut self, r: CandidateRecord) -> Result<usize, StoreError> {
        let key = r.snap.render();
        if self.index.contains_key(&key) {
            return Err(StoreError::Duplicate(key));
        }
        self.index.insert(key, r.id);
        self.records.push(r);
        Ok(self.records.len() - 1)
    }

    /// Inserts an evaluation result under the next id.
    pub fn insert(
        &mut self,
        snap: SnapSequence,
        result: &CandidateResult,
        source: Source,
        wall_time_s: f64,
    ) -> Result<usize, StoreError> {
        self.push(CandidateRecord {
            id: self.records.len(),
            snap,
            value: result.value,
            regmse: result.regmse,
            failed: result.failed,
            source,
            wall_time_s,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, snap: &SnapSequence) -> bool {
        self.index.contains_key(&snap.render())
    }

    pub fn get(&self, snap: &SnapSequence) -> Option<&CandidateRecord> {
        self.index.get(&snap.render()).map(|i| &self.records[*i])
    }

    pub fn records(&self) -> &[CandidateRecord] {
        &self.records
    }

    /// Highest values first; equal values keep the lower id first.
    pub fn best_k(&self, k: usize) -> Vec<&CandidateRecord> {
        let mut all: Vec<&CandidateRecord> = self.records.iter().collect();
        all.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.id.cmp(&b.id)));
        all.truncate(k);
        all
    }

    pub fn best(&self) -> Option<&CandidateRecord> {
        self.best_k(1).into_iter().next()
    }

    /// 1-based rank a value would take among the stored values (ties rank
    /// behind stored records).
    pub fn rank_of(&self, value: f64) -> usize {
        1 + self.records.iter().filter(|r| r.value >= value).count()
    }

    pub fn known(&self) -> Vec<(SnapSequence, f64)> {
        self.records.iter().map(|r| (r.snap.clone(), r.value)).collect()
    }

    /// Running maximum of the value over ids.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.max(r.value);
                best
            })
            .collect()
    }
}
