//! Binary dataset container.
//!
//! Layout (all integers little-endian, all floats f64 bit patterns):
//!
//! ```text
//! magic      8 bytes  "ODGDATA1"
//! version    u32      1
//! kind       u8       0 = plain dataset, 1 = labeled dataset
//! zone_count u32
//!   per zone: id (u32 length + utf8), bbox 4 x f64, scaled_bbox 4 x f64
//! scaler     inv_min f64, inv_max f64
//! snap_count u32
//!   per snapshot: timestamp i64 (epoch seconds), hour u8, dow u8,
//!                 edge_count u32, edges (origin u32, dest u32, weight f64)
//! labels     snap_count x u8, present only when kind = 1
//! ```
//!
//! Write -> read -> write reproduces identical bytes.

use chrono::DateTime;

use crate::bytesio::{
    read_exact_array, read_f64, read_i64, read_str, read_u32, read_u8, write_f64, write_i64,
    write_str, write_u32, write_u8,
};

use super::{
    Dataset, Edge, ODGraphResult, ODSnapshot, OdGraphError, TimeContext, WeightScaler, ZoneFeatures,
};

const MAGIC: &[u8; 8] = b"ODGDATA1";
const VERSION: u32 = 1;
const KIND_PLAIN: u8 = 0;
const KIND_LABELED: u8 = 1;

fn corrupt(detail: impl Into<String>) -> OdGraphError {
    OdGraphError::Container(detail.into())
}

fn write_body(out: &mut Vec<u8>, dataset: &Dataset, labels: Option<&[bool]>) {
    out.extend_from_slice(MAGIC);
    write_u32(out, VERSION).unwrap();
    write_u8(
        out,
        if labels.is_some() {
            KIND_LABELED
        } else {
            KIND_PLAIN
        },
    )
    .unwrap();
    write_u32(out, dataset.zones().len() as u32).unwrap();
    for z in dataset.zones() {
        write_str(out, &z.zone_id).unwrap();
        for v in z.bbox.iter().chain(z.scaled_bbox.iter()) {
            write_f64(out, *v).unwrap();
        }
    }
    write_f64(out, dataset.scaler().inv_min()).unwrap();
    write_f64(out, dataset.scaler().inv_max()).unwrap();
    write_u32(out, dataset.snapshots().len() as u32).unwrap();
    for s in dataset.snapshots() {
        write_i64(out, s.timestamp().and_utc().timestamp()).unwrap();
        write_u8(out, s.context().hour() as u8).unwrap();
        write_u8(out, s.context().dow() as u8).unwrap();
        write_u32(out, s.edges().len() as u32).unwrap();
        for e in s.edges() {
            write_u32(out, e.origin as u32).unwrap();
            write_u32(out, e.dest as u32).unwrap();
            write_f64(out, e.weight).unwrap();
        }
    }
    if let Some(labels) = labels {
        for &l in labels {
            write_u8(out, l as u8).unwrap();
        }
    }
}

fn read_body(bytes: &[u8]) -> ODGraphResult<(Dataset, Option<Vec<bool>>)> {
    let mut r = bytes;
    let magic: [u8; 8] =
        read_exact_array(&mut r).map_err(|_| corrupt("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic, not a dataset container"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported container version {version}")));
    }
    let kind = read_u8(&mut r)?;
    if kind != KIND_PLAIN && kind != KIND_LABELED {
        return Err(corrupt(format!("unknown container kind {kind}")));
    }
    let zone_count = read_u32(&mut r)? as usize;
    let mut zones = Vec::with_capacity(zone_count);
    for _ in 0..zone_count {
        let zone_id = read_str(&mut r)?;
        let mut vals = [0.0; 8];
        for v in &mut vals {
            *v = read_f64(&mut r)?;
        }
        zones.push(ZoneFeatures {
            zone_id,
            bbox: [vals[0], vals[1], vals[2], vals[3]],
            scaled_bbox: [vals[4], vals[5], vals[6], vals[7]],
        });
    }
    let inv_min = read_f64(&mut r)?;
    let inv_max = read_f64(&mut r)?;
    let scaler = WeightScaler::from_bounds(inv_min, inv_max)?;
    let snap_count = read_u32(&mut r)? as usize;
    let mut snapshots = Vec::with_capacity(snap_count);
    for _ in 0..snap_count {
        let epoch = read_i64(&mut r)?;
        let timestamp = DateTime::from_timestamp(epoch, 0)
            .ok_or_else(|| corrupt(format!("timestamp {epoch} out of range")))?
            .naive_utc();
        let hour = read_u8(&mut r)? as u32;
        let dow = read_u8(&mut r)? as u32;
        let context = TimeContext::new(hour, dow)?;
        let edge_count = read_u32(&mut r)? as usize;
        let mut edges = Vec::with_capacity(edge_count);
        for _ in 0..edge_count {
            let origin = read_u32(&mut r)? as usize;
            let dest = read_u32(&mut r)? as usize;
            let weight = read_f64(&mut r)?;
            edges.push(Edge {
                origin,
                dest,
                weight,
            });
        }
        snapshots.push(ODSnapshot::new(timestamp, context, zone_count, edges)?);
    }
    let labels = if kind == KIND_LABELED {
        let mut labels = Vec::with_capacity(snap_count);
        for _ in 0..snap_count {
            labels.push(read_u8(&mut r)? != 0);
        }
        Some(labels)
    } else {
        None
    };
    if !r.is_empty() {
        return Err(corrupt(format!(
            "{} trailing bytes after container body",
            r.len()
        )));
    }
    Ok((Dataset::new(zones, scaler, snapshots)?, labels))
}

pub(crate) fn dataset_to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_body(&mut out, dataset, None);
    out
}

pub(crate) fn dataset_from_bytes(bytes: &[u8]) -> ODGraphResult<Dataset> {
    let (dataset, labels) = read_body(bytes)?;
    if labels.is_some() {
        return Err(corrupt("expected a plain dataset, found a labeled one"));
    }
    Ok(dataset)
}

pub(crate) fn labeled_to_bytes(dataset: &Dataset, labels: &[bool]) -> Vec<u8> {
    assert_eq!(
        dataset.snapshots().len(),
        labels.len(),
        "one label per snapshot"
    );
    let mut out = Vec::new();
    write_body(&mut out, dataset, Some(labels));
    out
}

pub(crate) fn labeled_from_bytes(bytes: &[u8]) -> ODGraphResult<(Dataset, Vec<bool>)> {
    let (dataset, labels) = read_body(bytes)?;
    let labels = labels.ok_or_else(|| corrupt("expected a labeled dataset, found a plain one"))?;
    Ok((dataset, labels))
}
