//! Delimited-text ingestion of OD records and zone features.

use std::collections::BTreeSet;
use std::io::Read;

use chrono::{NaiveDate, NaiveDateTime};

use super::{ODGraphResult, ODRecord, OdGraphError};

/// Where the hourly timestamp lives in the source schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TimeColumns {
    /// One column formatted `YYYY-MM-DDTHH` (minutes/seconds, if present,
    /// must be zero).
    Single { column: String },
    /// A `YYYY-MM-DD` date column plus an integer hour column in 0..=23.
    Split { date: String, hour: String },
}

/// Maps the logical record fields onto source column names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaMapping {
    pub origin: String,
    pub dest: String,
    pub time: TimeColumns,
    pub travel_time: String,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        SchemaMapping {
            origin: "origin".into(),
            dest: "destination".into(),
            time: TimeColumns::Single {
                column: "timestamp".into(),
            },
            travel_time: "travel_time_seconds".into(),
        }
    }
}

/// One unusable row: source line number plus what went wrong.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Parse outcome: usable records plus, in lenient mode, the rows skipped.
#[derive(Clone, Debug, Default)]
pub struct ParsedRecords {
    pub records: Vec<ODRecord>,
    pub skipped: Vec<RowError>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> ODGraphResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| OdGraphError::SchemaMissingColumn(name.to_string()))
}

fn parse_hour_token(token: &str) -> Result<u32, String> {
    // Accepts "HH", "HH:00" or "HH:00:00"; rejects sub-hour times.
    let mut parts = token.split(':');
    let hour_part = parts.next().unwrap_or("");
    let hour: u32 = hour_part
        .parse()
        .map_err(|_| format!("bad hour `{token}`"))?;
    if hour > 23 {
        return Err(format!("hour {hour} out of range 0..=23"));
    }
    for rest in parts {
        if rest.parse::<u32>() != Ok(0) {
            return Err(format!("timestamp `{token}` is not on the hour"));
        }
    }
    Ok(hour)
}

fn parse_timestamp_single(value: &str) -> Result<NaiveDateTime, String> {
    let (date_part, hour_part) = value
        .split_once('T')
        .ok_or_else(|| format!("timestamp `{value}` is not in YYYY-MM-DDTHH form"))?;
    let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d")
        .map_err(|e| format!("bad date `{date_part}`: {e}"))?;
    let hour = parse_hour_token(hour_part)?;
    Ok(date.and_hms_opt(hour, 0, 0).expect("hour validated"))
}

fn parse_timestamp_split(date: &str, hour: &str) -> Result<NaiveDateTime, String> {
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|e| format!("bad date `{date}`: {e}"))?;
    let hour = parse_hour_token(hour)?;
    Ok(date.and_hms_opt(hour, 0, 0).expect("hour validated"))
}

/// Reads OD records from delimited text with a header row. In strict mode the
/// first malformed row aborts; in lenient mode malformed rows are collected
/// into `skipped` and parsing continues.
pub fn parse_od_records<R: Read>(
    reader: R,
    schema: &SchemaMapping,
    delimiter: u8,
    lenient: bool,
) -> ODGraphResult<ParsedRecords> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let origin_idx = column_index(&headers, &schema.origin)?;
    let dest_idx = column_index(&headers, &schema.dest)?;
    let travel_idx = column_index(&headers, &schema.travel_time)?;
    let time_idx = match &schema.time {
        TimeColumns::Single { column } => (column_index(&headers, column)?, None),
        TimeColumns::Split { date, hour } => (
            column_index(&headers, date)?,
            Some(column_index(&headers, hour)?),
        ),
    };

    let mut out = ParsedRecords::default();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, origin_idx, dest_idx, travel_idx, time_idx) {
            Ok(record) => out.records.push(record),
            Err(message) => {
                if lenient {
                    out.skipped.push(RowError { line, message });
                } else {
                    return Err(OdGraphError::Row { line, message });
                }
            }
        }
    }
    Ok(out)
}

fn parse_row(
    row: &csv::StringRecord,
    origin_idx: usize,
    dest_idx: usize,
    travel_idx: usize,
    time_idx: (usize, Option<usize>),
) -> Result<ODRecord, String> {
    let field = |idx: usize, what: &str| -> Result<&str, String> {
        row.get(idx)
            .ok_or_else(|| format!("row too short, no {what} field"))
    };
    let origin = field(origin_idx, "origin")?.trim();
    let dest = field(dest_idx, "destination")?.trim();
    if origin.is_empty() || dest.is_empty() {
        return Err("empty zone id".into());
    }
    let timestamp = match time_idx {
        (single, None) => parse_timestamp_single(field(single, "timestamp")?.trim())?,
        (date, Some(hour)) => {
            parse_timestamp_split(field(date, "date")?.trim(), field(hour, "hour")?.trim())?
        }
    };
    let travel_raw = field(travel_idx, "travel time")?.trim();
    let travel_time: f64 = travel_raw
        .parse()
        .map_err(|_| format!("bad travel time `{travel_raw}`"))?;
    if !travel_time.is_finite() || travel_time <= 0.0 {
        return Err(format!("travel time must be positive, got {travel_raw}"));
    }
    Ok(ODRecord {
        origin: origin.to_string(),
        dest: dest.to_string(),
        timestamp,
        travel_time,
    })
}

/// A zone feature row before scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct RawZone {
    pub zone_id: String,
    /// min_lat, min_lon, max_lat, max_lon.
    pub bbox: [f64; 4],
}

/// Reads zone bounding boxes from delimited text with a header row holding
/// `zone_id,min_lat,min_lon,max_lat,max_lon`. Strict: any bad row aborts.
pub fn parse_zone_features<R: Read>(reader: R, delimiter: u8) -> ODGraphResult<Vec<RawZone>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let id_idx = column_index(&headers, "zone_id")?;
    let coord_idx = [
        column_index(&headers, "min_lat")?,
        column_index(&headers, "min_lon")?,
        column_index(&headers, "max_lat")?,
        column_index(&headers, "max_lon")?,
    ];
    let mut zones = Vec::new();
    let mut seen = BTreeSet::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let fail = |message: String| OdGraphError::Row { line, message };
        let zone_id = row
            .get(id_idx)
            .ok_or_else(|| fail("row too short, no zone_id field".into()))?
            .trim()
            .to_string();
        if zone_id.is_empty() {
            return Err(fail("empty zone id".into()));
        }
        if !seen.insert(zone_id.clone()) {
            return Err(fail(format!("duplicate zone id `{zone_id}`")));
        }
        let mut bbox = [0.0; 4];
        for (slot, &idx) in bbox.iter_mut().zip(&coord_idx) {
            let raw = row
                .get(idx)
                .ok_or_else(|| fail("row too short, missing coordinate".into()))?
                .trim();
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("bad coordinate `{raw}`")))?;
        }
        if bbox[0] > bbox[2] || bbox[1] > bbox[3] {
            return Err(fail(format!(
                "bounding box of `{zone_id}` has min above max"
            )));
        }
        zones.push(RawZone { zone_id, bbox });
    }
    Ok(zones)
}
