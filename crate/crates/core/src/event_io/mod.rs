//! Event-stream types, file formats, windowing, and the synthetic dataset
//! generator used for desk-scale experiments.

mod nmnist;
mod portable;
mod synth;

pub use nmnist::parse_nmnist_binary;
pub use portable::{parse_portable_events, write_portable_events};
pub use synth::{synthesize_dataset, SynthDataset, SynthStream};

use serde::{Deserialize, Serialize};

/// One camera event: pixel, microsecond timestamp, polarity (+1 or -1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub p: i8,
}

/// Ordered event sequence with sensor dimensions and an optional label.
///
/// Order is whatever the source provided; timestamps are normally
/// non-decreasing but parsers keep violations (with a warning) because real
/// recordings contain timer resets. Downstream consumers must not assume
/// sortedness.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub label: Option<usize>,
    events: Vec<Event>,
}

impl EventStream {
    /// Panics if any event lies outside the sensor bounds or has a polarity
    /// other than +1/-1; parsers validate before constructing.
    pub fn new(width: u16, height: u16, label: Option<usize>, events: Vec<Event>) -> Self {
        for e in &events {
            assert!(e.x < width && e.y < height, "event ({}, {}) outside {}x{}", e.x, e.y, width, height);
            assert!(e.p == 1 || e.p == -1, "polarity {} not in {{+1, -1}}", e.p);
        }
        EventStream { width, height, label, events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Earliest and latest timestamp, scanning the whole stream so unsorted
    /// input still yields correct bounds. None for empty streams.
    pub fn time_bounds(&self) -> Option<(i64, i64)> {
        let mut it = self.events.iter();
        let first = it.next()?.t;
        let (mut lo, mut hi) = (first, first);
        for e in it {
            lo = lo.min(e.t);
            hi = hi.max(e.t);
        }
        Some((lo, hi))
    }

    /// Splits into `w` windows of equal event count, remainder on the last
    /// window; window 0 is the anchor. Order is preserved, so concatenating
    /// the windows reproduces the stream.
    pub fn split_windows(&self, w: usize) -> Result<Vec<EventStream>, EventIoError> {
        if w == 0 || self.events.len() < w {
            return Err(EventIoError::TooFewEvents { events: self.events.len(), windows: w });
        }
        let base = self.events.len() / w;
        let mut out = Vec::with_capacity(w);
        for i in 0..w {
            let start = i * base;
            let end = if i + 1 == w { self.events.len() } else { start + base };
            out.push(EventStream {
                width: self.width,
                height: self.height,
                label: self.label,
                events: self.events[start..end].to_vec(),
            });
        }
        Ok(out)
    }
}

/// Train/test split tag carried by manifest entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Index of a dataset on disk: stream paths, labels, split tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub width: u16,
    pub height: u16,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Option<usize>,
    pub split: Split,
}

impl DatasetManifest {
    /// Checks the label-range and class-count invariants.
    pub fn validate(&self) -> Result<(), EventIoError> {
        if self.classes.len() < 2 {
            return Err(EventIoError::InvalidConfig(format!(
                "manifest needs at least 2 classes, has {}",
                self.classes.len()
            )));
        }
        for e in &self.entries {
            if let Some(l) = e.label {
                if l >= self.classes.len() {
                    return Err(EventIoError::InvalidConfig(format!(
                        "label {} out of range for {} classes ({})",
                        l,
                        self.classes.len(),
                        e.path
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EventIoError> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Recoverable oddities noticed while parsing; surfaced to the caller
/// instead of failing the load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// Timestamp at `index` is smaller than its predecessor's.
    NonMonotonicTimestamp { index: usize },
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseWarning::NonMonotonicTimestamp { index } => {
                write!(f, "timestamp at event {index} decreases; keeping file order")
            }
        }
    }
}

pub(crate) fn monotonicity_warnings(events: &[Event]) -> Vec<ParseWarning> {
    let mut warnings = Vec::new();
    for i in 1..events.len() {
        if events[i].t < events[i - 1].t {
            warnings.push(ParseWarning::NonMonotonicTimestamp { index: i });
        }
    }
    warnings
}

#[derive(Debug, thiserror::Error)]
pub enum EventIoError {
    #[error("byte length {len} is not a multiple of 5")]
    TruncatedRecord { len: usize },
    #[error("event {index} at ({x}, {y}) outside sensor bounds {width}x{height}")]
    CoordinateOutOfBounds { index: usize, x: u16, y: u16, width: u16, height: u16 },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("missing or malformed header line")]
    MissingHeader,
    #[error("stream of {events} events cannot fill {windows} windows")]
    TooFewEvents { events: usize, windows: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests;
