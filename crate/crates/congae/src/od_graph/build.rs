//! Zone selection, node-feature scaling, and snapshot assembly.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;

use super::{
    context_of, Dataset, Edge, ODGraphResult, ODRecord, ODSnapshot, OdGraphError, RawZone,
    TimeContext, WeightScaler, ZoneFeatures,
};

/// Time context of a timestamp: hour of day, ISO day of week with Monday = 0.
pub fn time_context(ts: NaiveDateTime) -> TimeContext {
    context_of(ts)
}

/// Picks the k best-connected zones: most distinct counterpart zones, ties
/// broken by total record count (descending) then zone id (ascending). The
/// result is sorted lexicographically and is the canonical node order.
pub fn select_top_zones(records: &[ODRecord], k: usize) -> ODGraphResult<Vec<String>> {
    if k == 0 {
        return Err(OdGraphError::EmptyInput("requested zero zones"));
    }
    let mut counterparts: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut record_count: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        counterparts.entry(&r.origin).or_default();
        counterparts.entry(&r.dest).or_default();
        *record_count.entry(&r.origin).or_default() += 1;
        if r.dest != r.origin {
            *record_count.entry(&r.dest).or_default() += 1;
            counterparts
                .get_mut(r.origin.as_str())
                .unwrap()
                .insert(&r.dest);
            counterparts
                .get_mut(r.dest.as_str())
                .unwrap()
                .insert(&r.origin);
        }
    }
    if counterparts.len() < k {
        return Err(OdGraphError::NotEnoughZones {
            requested: k,
            available: counterparts.len(),
        });
    }
    let mut ranked: Vec<(&str, usize, usize)> = counterparts
        .iter()
        .map(|(zone, peers)| {
            (
                *zone,
                peers.len(),
                record_count.get(zone).copied().unwrap_or(0),
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(b.0)));
    let mut selected: Vec<String> = ranked
        .into_iter()
        .take(k)
        .map(|(z, _, _)| z.to_string())
        .collect();
    selected.sort();
    Ok(selected)
}

/// Looks up features for the selected zones and min-max scales each of the
/// four bounding-box coordinates to [0, 1] over that set. A coordinate that
/// is constant across all selected zones scales to 0.5.
pub fn scale_zone_features(
    raw: &[RawZone],
    selected: &[String],
) -> ODGraphResult<Vec<ZoneFeatures>> {
    if selected.is_empty() {
        return Err(OdGraphError::EmptyInput("no zones selected"));
    }
    let by_id: BTreeMap<&str, &RawZone> = raw.iter().map(|z| (z.zone_id.as_str(), z)).collect();
    let mut ordered = selected.to_vec();
    ordered.sort();
    let mut picked = Vec::with_capacity(ordered.len());
    for id in &ordered {
        let z = by_id
            .get(id.as_str())
            .ok_or_else(|| OdGraphError::MissingZoneFeatures(id.clone()))?;
        picked.push((*z).clone());
    }
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for z in &picked {
        for d in 0..4 {
            lo[d] = lo[d].min(z.bbox[d]);
            hi[d] = hi[d].max(z.bbox[d]);
        }
    }
    Ok(picked
        .into_iter()
        .map(|z| {
            let mut scaled = [0.5; 4];
            for d in 0..4 {
                if hi[d] > lo[d] {
                    scaled[d] = (z.bbox[d] - lo[d]) / (hi[d] - lo[d]);
                }
            }
            ZoneFeatures {
                zone_id: z.zone_id,
                bbox: z.bbox,
                scaled_bbox: scaled,
            }
        })
        .collect())
}

/// Groups records into one snapshot per distinct hour. Records outside the
/// zone set are ignored, self-loops are dropped, duplicate (origin, dest,
/// hour) observations are averaged before scaling, and the result is sorted
/// by timestamp. Hours left with no edges produce no snapshot.
pub fn build_snapshots(
    records: &[ODRecord],
    zones: &[ZoneFeatures],
    scaler: &WeightScaler,
) -> ODGraphResult<Dataset> {
    let index: BTreeMap<&str, usize> = zones
        .iter()
        .enumerate()
        .map(|(i, z)| (z.zone_id.as_str(), i))
        .collect();
    let mut grouped: BTreeMap<NaiveDateTime, BTreeMap<(usize, usize), Vec<f64>>> = BTreeMap::new();
    for r in records {
        let (Some(&o), Some(&d)) = (index.get(r.origin.as_str()), index.get(r.dest.as_str()))
        else {
            continue;
        };
        if o == d {
            continue;
        }
        grouped
            .entry(r.timestamp)
            .or_default()
            .entry((o, d))
            .or_default()
            .push(r.travel_time);
    }
    let mut snapshots = Vec::with_capacity(grouped.len());
    for (ts, cells) in grouped {
        let mut edges = Vec::with_capacity(cells.len());
        for ((o, d), mut times) in cells {
            // Sort before averaging so the mean is independent of record order.
            times.sort_by(f64::total_cmp);
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            edges.push(Edge {
                origin: o,
                dest: d,
                weight: scaler.scale(mean)?,
            });
        }
        snapshots.push(ODSnapshot::new(ts, time_context(ts), zones.len(), edges)?);
    }
    Dataset::new(zones.to_vec(), scaler.clone(), snapshots)
}
