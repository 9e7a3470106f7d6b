//! Limit-order-book event CSV ingestion.
//!
//! Expected header: `delta_mid,delta_spread,vol_imbalance,event_type,delta_t`
//! with `event_type` one of `T`, `C`, `L`.

use std::io::BufRead;

use qatok_core::corpus::{EventType, LobEvent};

use crate::{IoFormatError, Result};

/// CSV column order.
pub const LOB_HEADER: &str = "delta_mid,delta_spread,vol_imbalance,event_type,delta_t";

fn csv_err(line: usize, what: impl Into<String>) -> IoFormatError {
    IoFormatError::Csv {
        line,
        what: what.into(),
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| csv_err(line, format!("bad {name} value {raw:?}")))
}

/// Reads LOB events from CSV; the header line is required.
pub fn read_lob_csv<R: BufRead>(reader: R) -> Result<Vec<LobEvent>> {
    let mut events = Vec::new();
    let mut lines = reader.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(csv_err(0, "empty input"));
    };
    let header = header?;
    if header.trim() != LOB_HEADER {
        return Err(csv_err(0, format!("expected header {LOB_HEADER:?}")));
    }
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(csv_err(idx, format!("expected 5 fields, got {}", fields.len())));
        }
        let event_type = match fields[3].trim() {
            "T" => EventType::Trade,
            "C" => EventType::Cancel,
            "L" => EventType::LimitOrder,
            other => return Err(csv_err(idx, format!("event_type must be T/C/L, got {other:?}"))),
        };
        events.push(LobEvent {
            delta_mid: parse_field(idx, "delta_mid", fields[0])?,
            delta_spread: parse_field(idx, "delta_spread", fields[1])?,
            vol_imbalance: parse_field(idx, "vol_imbalance", fields[2])?,
            event_type,
            delta_t: parse_field(idx, "delta_t", fields[4])?,
        });
    }
    Ok(events)
}
