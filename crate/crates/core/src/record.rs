//! Mergelogs and spans: the two records controllers send to the trace server.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpid::{Cpid, SpanId};
use crate::time::{self, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidRecord {
    #[error("mergelog new_cpid {0} is listed among its own sources")]
    SelfSource(Cpid),
    #[error("mergelog source {0} is listed twice")]
    DuplicateSource(Cpid),
    #[error("span {0} ends before it starts")]
    NegativeDuration(SpanId),
}

/// Links the CPIDs a controller observed to the CPID it minted for the merged
/// change. An empty source list registers a root CPID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MergelogWire")]
pub struct Mergelog {
    pub new_cpid: Cpid,
    pub source_cpids: Vec<Cpid>,
    #[serde(with = "time::rfc3339_millis")]
    pub timestamp: Timestamp,
}

#[derive(Deserialize)]
struct MergelogWire {
    new_cpid: Cpid,
    source_cpids: Vec<Cpid>,
    #[serde(with = "time::rfc3339_millis")]
    timestamp: Timestamp,
}

impl TryFrom<MergelogWire> for Mergelog {
    type Error = InvalidRecord;

    fn try_from(w: MergelogWire) -> Result<Self, Self::Error> {
        Mergelog::new(w.new_cpid, w.source_cpids, w.timestamp)
    }
}

impl Mergelog {
    pub fn new(
        new_cpid: Cpid,
        source_cpids: Vec<Cpid>,
        timestamp: Timestamp,
    ) -> Result<Self, InvalidRecord> {
        for (i, s) in source_cpids.iter().enumerate() {
            if *s == new_cpid {
                return Err(InvalidRecord::SelfSource(new_cpid));
            }
            if source_cpids[..i].contains(s) {
                return Err(InvalidRecord::DuplicateSource(*s));
            }
        }
        Ok(Mergelog {
            new_cpid,
            source_cpids,
            timestamp: time::truncate_millis(timestamp),
        })
    }

    pub fn registration(cpid: Cpid, timestamp: Timestamp) -> Self {
        Mergelog {
            new_cpid: cpid,
            source_cpids: Vec::new(),
            timestamp: time::truncate_millis(timestamp),
        }
    }

    pub fn is_registration(&self) -> bool {
        self.source_cpids.is_empty()
    }
}

/// One timed processing step inside a controller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpanWire")]
pub struct Span {
    pub cpid: Cpid,
    pub span_id: SpanId,
    pub parent_id: Option<SpanId>,
    pub service: String,
    pub name: String,
    #[serde(with = "time::rfc3339_micros")]
    pub start_time: Timestamp,
    #[serde(with = "time::rfc3339_micros")]
    pub end_time: Timestamp,
}

#[derive(Deserialize)]
struct SpanWire {
    cpid: Cpid,
    span_id: SpanId,
    parent_id: Option<SpanId>,
    service: String,
    name: String,
    #[serde(with = "time::rfc3339_micros")]
    start_time: Timestamp,
    #[serde(with = "time::rfc3339_micros")]
    end_time: Timestamp,
}

impl TryFrom<SpanWire> for Span {
    type Error = InvalidRecord;

    fn try_from(w: SpanWire) -> Result<Self, Self::Error> {
        if w.end_time < w.start_time {
            return Err(InvalidRecord::NegativeDuration(w.span_id));
        }
        Ok(Span {
            cpid: w.cpid,
            span_id: w.span_id,
            parent_id: w.parent_id,
            service: w.service,
            name: w.name,
            start_time: w.start_time,
            end_time: w.end_time,
        })
    }
}

impl Span {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }

    pub fn duration_micros(&self) -> i64 {
        (self.end_time - self.start_time)
            .num_microseconds()
            .unwrap_or(i64::MAX)
    }
}
