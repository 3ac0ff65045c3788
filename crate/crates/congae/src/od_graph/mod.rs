//! Data model for hourly origin-destination travel-time graphs.
//!
//! A raw feed of (origin zone, destination zone, hour, travel time) records
//! becomes a `Dataset`: a canonical zone list with scaled bounding-box
//! features, a travel-time-to-weight scaler, and one weighted directed graph
//! snapshot per hour. Invariants are enforced by the constructors:
//!
//! - zones are sorted by id and duplicate-free; node index = position
//! - snapshot edges are sorted by (dest, origin), duplicate-free, self-loop
//!   free, with weights in [0, 1]
//! - snapshot timestamps are strictly increasing

mod build;
mod container;
mod parse;
mod scaler;

pub use build::{build_snapshots, scale_zone_features, select_top_zones, time_context};
pub use parse::{
    parse_od_records, parse_zone_features, ParsedRecords, RawZone, RowError, SchemaMapping,
    TimeColumns,
};
pub use scaler::WeightScaler;

use std::io;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use thiserror::Error;

use crate::nn_core::DenseMatrix;

pub type ODGraphResult<T> = Result<T, OdGraphError>;

#[derive(Debug, Error)]
pub enum OdGraphError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: required column `{0}` not found in header")]
    SchemaMissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("{count} malformed rows, first at line {first_line}: {first_message}")]
    RowErrors {
        count: usize,
        first_line: u64,
        first_message: String,
    },
    #[error("requested {requested} zones but records mention only {available}")]
    NotEnoughZones { requested: usize, available: usize },
    #[error("zone `{0}` selected from records but missing from the zone feature file")]
    MissingZoneFeatures(String),
    #[error("degenerate weight scaler: {0}")]
    DegenerateScaler(String),
    #[error("travel time must be finite and positive, got {0}")]
    ScaleDomain(f64),
    #[error("invalid time context: hour {hour}, day-of-week {dow}")]
    InvalidContext { hour: u32, dow: u32 },
    #[error("snapshot {timestamp}: {detail}")]
    SnapshotInvariant { timestamp: String, detail: String },
    #[error("dataset invariant violated: {0}")]
    DatasetInvariant(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// One raw observation: mean travel time between two zones for one hour.
#[derive(Clone, Debug, PartialEq)]
pub struct ODRecord {
    pub origin: String,
    pub dest: String,
    /// Truncated to the hour.
    pub timestamp: NaiveDateTime,
    /// Seconds, finite and positive.
    pub travel_time: f64,
}

/// Hour of day and day of week a snapshot claims to belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeContext {
    hour: u8,
    dow: u8,
}

impl TimeContext {
    /// hour in 0..=23, dow in 0..=6 with 0 = Monday.
    pub fn new(hour: u32, dow: u32) -> Result<Self, OdGraphError> {
        if hour > 23 || dow > 6 {
            return Err(OdGraphError::InvalidContext { hour, dow });
        }
        Ok(TimeContext {
            hour: hour as u8,
            dow: dow as u8,
        })
    }

    pub fn hour(&self) -> usize {
        self.hour as usize
    }

    pub fn dow(&self) -> usize {
        self.dow as usize
    }

    /// The same context shifted by half a day; hour 8 becomes 20. Applying
    /// the shift twice restores the original context.
    pub fn shifted_half_day(&self) -> TimeContext {
        TimeContext {
            hour: (self.hour + 12) % 24,
            dow: self.dow,
        }
    }
}

/// Node feature width: the four scaled bounding-box coordinates.
pub const FEATURE_DIM: usize = 4;

/// A zone with its raw bounding box and the box scaled to [0,1] over the
/// selected zone set. The scaled values are the model's node features.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoneFeatures {
    pub zone_id: String,
    /// min_lat, min_lon, max_lat, max_lon.
    pub bbox: [f64; 4],
    pub scaled_bbox: [f64; 4],
}

/// Directed weighted edge between node indices of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub origin: usize,
    pub dest: usize,
    pub weight: f64,
}

/// One hourly graph: edges observed that hour plus the hour's time context.
#[derive(Clone, Debug, PartialEq)]
pub struct ODSnapshot {
    timestamp: NaiveDateTime,
    context: TimeContext,
    node_count: usize,
    edges: Vec<Edge>,
    /// edges[in_offsets[i]..in_offsets[i+1]] are the in-edges of node i.
    in_offsets: Vec<usize>,
}

impl ODSnapshot {
    /// Sorts edges by (dest, origin) and validates: indices in range, no
    /// self-loops, no duplicate (origin, dest), weights finite in [0, 1].
    pub fn new(
        timestamp: NaiveDateTime,
        context: TimeContext,
        node_count: usize,
        mut edges: Vec<Edge>,
    ) -> Result<Self, OdGraphError> {
        let fail = |detail: String| OdGraphError::SnapshotInvariant {
            timestamp: timestamp.format("%Y-%m-%dT%H:%M").to_string(),
            detail,
        };
        edges.sort_by_key(|e| (e.dest, e.origin));
        for e in &edges {
            if e.origin >= node_count || e.dest >= node_count {
                return Err(fail(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    e.origin, e.dest, node_count
                )));
            }
            if e.origin == e.dest {
                return Err(fail(format!("self-loop on node {}", e.origin)));
            }
            if !e.weight.is_finite() || !(0.0..=1.0).contains(&e.weight) {
                return Err(fail(format!(
                    "edge ({}, {}) weight {} outside [0, 1]",
                    e.origin, e.dest, e.weight
                )));
            }
        }
        for pair in edges.windows(2) {
            if pair[0].origin == pair[1].origin && pair[0].dest == pair[1].dest {
                return Err(fail(format!(
                    "duplicate edge ({}, {})",
                    pair[0].origin, pair[0].dest
                )));
            }
        }
        let mut in_offsets = vec![0usize; node_count + 1];
        for e in &edges {
            in_offsets[e.dest + 1] += 1;
        }
        for i in 0..node_count {
            in_offsets[i + 1] += in_offsets[i];
        }
        Ok(ODSnapshot {
            timestamp,
            context,
            node_count,
            edges,
            in_offsets,
        })
    }

    pub fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }

    pub fn context(&self) -> TimeContext {
        self.context
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges in canonical (dest, origin) order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// In-edges of `node`, ordered by origin.
    pub fn in_edges(&self, node: usize) -> &[Edge] {
        &self.edges[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    /// Same timestamp/context/node count with a different edge set.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self, OdGraphError> {
        ODSnapshot::new(self.timestamp, self.context, self.node_count, edges)
    }

    /// Same data relabeled with a different time context.
    pub fn with_context(&self, context: TimeContext) -> Self {
        let mut s = self.clone();
        s.context = context;
        s
    }
}

/// A snapshot series over a fixed zone set, plus the scaler that produced
/// the edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    zones: Vec<ZoneFeatures>,
    scaler: WeightScaler,
    snapshots: Vec<ODSnapshot>,
}

impl Dataset {
    pub fn new(
        zones: Vec<ZoneFeatures>,
        scaler: WeightScaler,
        snapshots: Vec<ODSnapshot>,
    ) -> Result<Self, OdGraphError> {
        if zones.is_empty() {
            return Err(OdGraphError::DatasetInvariant("zone list is empty".into()));
        }
        for pair in zones.windows(2) {
            if pair[0].zone_id >= pair[1].zone_id {
                return Err(OdGraphError::DatasetInvariant(format!(
                    "zones must be sorted and unique, found `{}` before `{}`",
                    pair[0].zone_id, pair[1].zone_id
                )));
            }
        }
        for z in &zones {
            for v in z.scaled_bbox {
                if !(0.0..=1.0).contains(&v) {
                    return Err(OdGraphError::DatasetInvariant(format!(
                        "zone `{}` scaled feature {} outside [0, 1]",
                        z.zone_id, v
                    )));
                }
            }
        }
        for s in &snapshots {
            if s.node_count() != zones.len() {
                return Err(OdGraphError::DatasetInvariant(format!(
                    "snapshot {} has node_count {} but {} zones",
                    s.timestamp(),
                    s.node_count(),
                    zones.len()
                )));
            }
        }
        for pair in snapshots.windows(2) {
            if pair[0].timestamp() >= pair[1].timestamp() {
                return Err(OdGraphError::DatasetInvariant(format!(
                    "snapshot timestamps must be strictly increasing, found {} before {}",
                    pair[0].timestamp(),
                    pair[1].timestamp()
                )));
            }
        }
        Ok(Dataset {
            zones,
            scaler,
            snapshots,
        })
    }

    pub fn zones(&self) -> &[ZoneFeatures] {
        &self.zones
    }

    pub fn scaler(&self) -> &WeightScaler {
        &self.scaler
    }

    pub fn snapshots(&self) -> &[ODSnapshot] {
        &self.snapshots
    }

    pub fn node_count(&self) -> usize {
        self.zones.len()
    }

    /// Node-feature matrix: one row of scaled bounding-box values per zone.
    pub fn feature_matrix(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.zones.len(), 4);
        for (i, z) in self.zones.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&z.scaled_bbox);
        }
        m
    }

    /// Same zones and scaler with a different snapshot series.
    pub fn with_snapshots(&self, snapshots: Vec<ODSnapshot>) -> Result<Self, OdGraphError> {
        Dataset::new(self.zones.clone(), self.scaler.clone(), snapshots)
    }

    pub fn avg_edges_per_snapshot(&self) -> f64 {
        if self.snapshots.is_empty() {
            return 0.0;
        }
        let total: usize = self.snapshots.iter().map(|s| s.edges().len()).sum();
        total as f64 / self.snapshots.len() as f64
    }

    /// Fraction of possible directed OD pairs absent from an average snapshot.
    pub fn missing_rate(&self) -> f64 {
        let n = self.zones.len();
        let possible = (n * (n - 1)) as f64;
        if possible == 0.0 {
            return 0.0;
        }
        1.0 - self.avg_edges_per_snapshot() / possible
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::dataset_to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OdGraphError> {
        container::dataset_from_bytes(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), OdGraphError> {
        crate::bytesio::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OdGraphError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) use container::{labeled_from_bytes, labeled_to_bytes};

/// Hour of day and ISO day of week (Monday = 0) of a timestamp.
pub fn context_of(ts: NaiveDateTime) -> TimeContext {
    use chrono::Datelike;
    TimeContext {
        hour: ts.hour() as u8,
        dow: ts.weekday().num_days_from_monday() as u8,
    }
}
