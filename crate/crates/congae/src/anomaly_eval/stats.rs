//! Hour-of-week Gaussian statistics over OD travel times: fitting from raw
//! records or a built dataset, clean test-set resampling, and the
//! historical-average baseline score.

use super::{EvalResult, LabeledDataset};
use crate::nn_core::RngStream;
use crate::od_graph::{
    context_of, Dataset, Edge, ODRecord, ODSnapshot, TimeContext, WeightScaler, ZoneFeatures,
};
use chrono::{Duration, NaiveDateTime, Timelike};
use std::collections::BTreeMap;

/// Sample statistics of one (origin, dest) pair at one hour of the week.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    /// Mean travel time in seconds.
    pub mean: f64,
    /// Population variance (divides by the count), in seconds squared.
    pub variance: f64,
    pub count: usize,
}

/// Mean and variance of each OD pair's travel time per (hour of day, day of
/// week). Cells exist only where at least one sample was observed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HourOfWeekStats {
    cells: BTreeMap<(usize, usize), BTreeMap<(usize, usize), CellStats>>,
}

impl HourOfWeekStats {
    /// Fits from raw records. Records outside the zone set and self-loops are
    /// ignored, matching how snapshots are built.
    pub fn fit_records(records: &[ODRecord], zones: &[ZoneFeatures]) -> Self {
        let index: BTreeMap<&str, usize> = zones
            .iter()
            .enumerate()
            .map(|(i, z)| (z.zone_id.as_str(), i))
            .collect();
        let mut samples: BTreeMap<(usize, usize), BTreeMap<(usize, usize), Vec<f64>>> =
            BTreeMap::new();
        for r in records {
            let (Some(&o), Some(&d)) = (index.get(r.origin.as_str()), index.get(r.dest.as_str()))
            else {
                continue;
            };
            if o == d {
                continue;
            }
            let ctx = context_of(r.timestamp);
            samples
                .entry((ctx.hour(), ctx.dow()))
                .or_default()
                .entry((o, d))
                .or_default()
                .push(r.travel_time);
        }
        Self::from_samples(samples)
    }

    /// Fits from an already-built dataset; samples are the unscaled edge
    /// weights, keyed by each snapshot's claimed context.
    pub fn fit_dataset(data: &Dataset) -> Self {
        let scaler = data.scaler();
        let mut samples: BTreeMap<(usize, usize), BTreeMap<(usize, usize), Vec<f64>>> =
            BTreeMap::new();
        for snap in data.snapshots() {
            let ctx = snap.context();
            let slot = samples.entry((ctx.hour(), ctx.dow())).or_default();
            for e in snap.edges() {
                slot.entry((e.origin, e.dest))
                    .or_default()
                    .push(scaler.unscale(e.weight));
            }
        }
        Self::from_samples(samples)
    }

    fn from_samples(samples: BTreeMap<(usize, usize), BTreeMap<(usize, usize), Vec<f64>>>) -> Self {
        let mut cells: BTreeMap<(usize, usize), BTreeMap<(usize, usize), CellStats>> =
            BTreeMap::new();
        for (when, pairs) in samples {
            let slot = cells.entry(when).or_default();
            for (pair, mut values) in pairs {
                // Sort before summing so the fit is independent of record order.
                values.sort_by(f64::total_cmp);
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                slot.insert(
                    pair,
                    CellStats {
                        mean,
                        variance,
                        count: values.len(),
                    },
                );
            }
        }
        HourOfWeekStats { cells }
    }

    pub fn cell(&self, ctx: TimeContext, origin: usize, dest: usize) -> Option<&CellStats> {
        self.cells
            .get(&(ctx.hour(), ctx.dow()))?
            .get(&(origin, dest))
    }

    fn slot(&self, ctx: TimeContext) -> Option<&BTreeMap<(usize, usize), CellStats>> {
        self.cells.get(&(ctx.hour(), ctx.dow()))
    }

    /// Total number of (OD, hour, dow) cells.
    pub fn cell_count(&self) -> usize {
        self.cells.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn floor_hour(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date()
        .and_hms_opt(ts.hour(), 0, 0)
        .expect("hour from a valid timestamp")
}

/// Builds a clean test set by refitting hour-of-week statistics on the raw
/// test records and redrawing every present cell from Normal(mean, variance),
/// truncated below at one second. Cells with no historical sample stay
/// absent, so the missingness pattern is preserved. Snapshots are emitted on
/// the hourly grid spanned by the contributing records; hours whose context
/// has no cells produce no snapshot. Cells with zero variance take the mean
/// without consuming a draw.
pub fn synth_clean_testset(
    raw_test_records: &[ODRecord],
    zones: &[ZoneFeatures],
    scaler: &WeightScaler,
    rng: &mut RngStream,
) -> EvalResult<Dataset> {
    let stats = HourOfWeekStats::fit_records(raw_test_records, zones);
    let index: BTreeMap<&str, usize> = zones
        .iter()
        .enumerate()
        .map(|(i, z)| (z.zone_id.as_str(), i))
        .collect();
    let mut span: Option<(NaiveDateTime, NaiveDateTime)> = None;
    for r in raw_test_records {
        let (Some(&o), Some(&d)) = (index.get(r.origin.as_str()), index.get(r.dest.as_str()))
        else {
            continue;
        };
        if o == d {
            continue;
        }
        let h = floor_hour(r.timestamp);
        span = Some(match span {
            None => (h, h),
            Some((lo, hi)) => (lo.min(h), hi.max(h)),
        });
    }
    let mut snapshots = Vec::new();
    if let Some((lo, hi)) = span {
        let mut ts = lo;
        while ts <= hi {
            let ctx = context_of(ts);
            if let Some(slot) = stats.slot(ctx) {
                let mut edges = Vec::with_capacity(slot.len());
                for (&(o, d), cs) in slot {
                    let tau = rng.normal(cs.mean, cs.variance.sqrt()).max(1.0);
                    edges.push(Edge {
                        origin: o,
                        dest: d,
                        weight: scaler.scale(tau)?,
                    });
                }
                snapshots.push(ODSnapshot::new(ts, ctx, zones.len(), edges)?);
            }
            ts += Duration::hours(1);
        }
    }
    Ok(Dataset::new(zones.to_vec(), scaler.clone(), snapshots)?)
}

/// Historical-average scores plus the indices of snapshots that matched no
/// historical cell (scored 0; callers should surface them as a warning).
#[derive(Clone, Debug, PartialEq)]
pub struct HaScores {
    pub scores: Vec<f64>,
    pub unmatched: Vec<usize>,
}

/// Historical-average baseline: each snapshot scores the mean squared
/// deviation, in travel-time space, of its observed edges from the fitted
/// mean at the snapshot's claimed hour and weekday. Edges with no historical
/// cell are skipped.
pub fn ha_score(test: &LabeledDataset, stats: &HourOfWeekStats) -> HaScores {
    let scaler = test.dataset().scaler();
    let snapshots = test.dataset().snapshots();
    let mut scores = Vec::with_capacity(snapshots.len());
    let mut unmatched = Vec::new();
    for (i, snap) in snapshots.iter().enumerate() {
        let ctx = snap.context();
        let mut sum = 0.0;
        let mut n = 0usize;
        for e in snap.edges() {
            if let Some(cs) = stats.cell(ctx, e.origin, e.dest) {
                let diff = scaler.unscale(e.weight) - cs.mean;
                sum += diff * diff;
                n += 1;
            }
        }
        if n == 0 {
            unmatched.push(i);
            scores.push(0.0);
        } else {
            scores.push(sum / n as f64);
        }
    }
    HaScores { scores, unmatched }
}
