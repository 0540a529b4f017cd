//! Events, sequences, mark spaces and the JSON Lines dataset format.
//!
//! A dataset file holds one sequence per line:
//!
//! ```text
//! {"marks":3,"truth":{"name":"hawkes","mu":10.0,"alpha":1.0,"beta":1.0}}
//! {"T":1.0,"events":[{"t":0.2,"mark":1},{"t":0.7,"mark":0}]}
//! ```
//!
//! The first line is an optional header. Sequence lines may carry a `"u"`
//! field with the per-sequence latent scale of the non-homogeneous Poisson
//! generators.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulation::Process;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("event {index} at t={t} does not come strictly after its predecessor")]
    NonMonotoneTimes { index: usize, t: f64 },
    #[error("event {index} at t={t} lies outside [0, {horizon})")]
    TimeOutOfHorizon { index: usize, t: f64, horizon: f64 },
    #[error("non-finite value in {what}")]
    NonFiniteValue { what: &'static str },
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("mark {mark} out of range for a mark space of size {size}")]
    MarkOutOfRange { mark: usize, size: usize },
    #[error("event carries no mark but the mark space has {size} marks")]
    MissingMark { size: usize },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: EventError,
    },
    #[error("line {line}: horizon {found} differs from the dataset horizon {expected}")]
    InconsistentHorizon {
        line: usize,
        expected: f64,
        found: f64,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One point `(t, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mark: Option<usize>,
}

impl Event {
    pub fn new(t: f64) -> Self {
        Self { t, mark: None }
    }

    pub fn marked(t: f64, mark: usize) -> Self {
        Self { t, mark: Some(mark) }
    }
}

/// Finite discrete mark set. Size 0 means purely temporal data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkSpace {
    size: usize,
}

impl MarkSpace {
    pub const TEMPORAL: MarkSpace = MarkSpace { size: 0 };

    pub fn new(size: usize) -> Self {
        Self { size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_temporal(&self) -> bool {
        self.size == 0
    }

    /// Embedding width: time plus a one-hot block for the mark.
    pub fn dim(&self) -> usize {
        1 + self.size
    }

    /// Number of intensity components (1 for temporal-only data).
    pub fn components(&self) -> usize {
        self.size.max(1)
    }

    /// Marks to integrate over: `[None]` for temporal data.
    pub fn marks(&self) -> Vec<Option<usize>> {
        if self.size == 0 {
            vec![None]
        } else {
            (0..self.size).map(Some).collect()
        }
    }

    /// Row of the base-intensity table for `mark`.
    pub fn component(&self, mark: Option<usize>) -> usize {
        mark.unwrap_or(0)
    }

    pub fn check(&self, mark: Option<usize>) -> Result<(), EventError> {
        match (mark, self.size) {
            (None, 0) => Ok(()),
            (None, size) => Err(EventError::MissingMark { size }),
            (Some(m), size) if m >= size => Err(EventError::MarkOutOfRange { mark: m, size }),
            (Some(_), _) => Ok(()),
        }
    }
}

/// Embeds `e` into R^d: coordinate 0 is time, the rest a one-hot mark code.
pub fn embed_event(e: &Event, ms: &MarkSpace) -> Result<Vec<f64>, EventError> {
    ms.check(e.mark)?;
    let mut x = vec![0.0; ms.dim()];
    x[0] = e.t;
    if let Some(m) = e.mark {
        x[1 + m] = 1.0;
    }
    Ok(x)
}

/// Checks finiteness, strict ordering and `0 <= t < horizon`.
pub fn validate_sequence(events: &[Event], horizon: f64) -> Result<(), EventError> {
    if !horizon.is_finite() {
        return Err(EventError::NonFiniteValue { what: "horizon" });
    }
    if horizon <= 0.0 {
        return Err(EventError::InvalidHorizon(horizon));
    }
    let mut prev: Option<f64> = None;
    for (index, e) in events.iter().enumerate() {
        if !e.t.is_finite() {
            return Err(EventError::NonFiniteValue { what: "event time" });
        }
        if e.t < 0.0 || e.t >= horizon {
            return Err(EventError::TimeOutOfHorizon {
                index,
                t: e.t,
                horizon,
            });
        }
        if let Some(p) = prev {
            if e.t <= p {
                return Err(EventError::NonMonotoneTimes { index, t: e.t });
            }
        }
        prev = Some(e.t);
    }
    Ok(())
}

/// Strictly time-ordered events on `[0, horizon)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    events: Vec<Event>,
    horizon: f64,
    latent_scale: Option<f64>,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, horizon: f64) -> Result<Self, EventError> {
        validate_sequence(&events, horizon)?;
        Ok(Self {
            events,
            horizon,
            latent_scale: None,
        })
    }

    pub fn from_times(times: &[f64], horizon: f64) -> Result<Self, EventError> {
        Self::new(times.iter().map(|&t| Event::new(t)).collect(), horizon)
    }

    /// Attaches the per-sequence uniform scale used by the NHPP generators.
    pub fn with_latent_scale(mut self, u: f64) -> Self {
        self.latent_scale = Some(u);
        self
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn latent_scale(&self) -> Option<f64> {
        self.latent_scale
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A collection of sequences sharing a horizon and a mark space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub mark_space: MarkSpace,
    pub truth: Option<Process>,
    /// Free-form provenance (generator settings, seed) kept in the header.
    pub meta: Option<serde_json::Value>,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, mark_space: MarkSpace) -> Self {
        Self {
            sequences,
            mark_space,
            truth: None,
            meta: None,
        }
    }

    pub fn with_truth(mut self, truth: Process) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).sum()
    }

    pub fn max_len(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).max().unwrap_or(0)
    }

    pub fn mean_len(&self) -> f64 {
        if self.sequences.is_empty() {
            0.0
        } else {
            self.event_count() as f64 / self.sequences.len() as f64
        }
    }

    /// Splits off the last `1 - fraction` of sequences as a second dataset.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.sequences.len() as f64) * fraction).round() as usize;
        let cut = cut.min(self.sequences.len());
        let mut a = self.clone();
        let mut b = self.clone();
        a.sequences.truncate(cut);
        b.sequences.drain(..cut);
        (a, b)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = File::open(path)?;
        read_dataset(BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_dataset(self, &mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    Dataset::load(path)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    ds.save(path)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    #[serde(default)]
    marks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<Process>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    #[serde(rename = "T")]
    horizon: f64,
    events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<f64>,
}

pub fn read_dataset(reader: impl BufRead) -> Result<Dataset, DatasetError> {
    let mut sequences = Vec::new();
    let mut header: Option<HeaderRecord> = None;
    let mut horizon: Option<f64> = None;
    let mut max_mark: Option<usize> = None;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let is_header = value
            .as_object()
            .is_some_and(|o| !o.contains_key("events") && !o.contains_key("T"));
        if is_header {
            if header.is_some() || !sequences.is_empty() {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: "header record must be the first line".into(),
                });
            }
            header = Some(serde_json::from_value(value).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?);
            continue;
        }
        let rec: SequenceRecord =
            serde_json::from_value(value).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        match horizon {
            None => horizon = Some(rec.horizon),
            Some(h) if h.to_bits() != rec.horizon.to_bits() => {
                return Err(DatasetError::InconsistentHorizon {
                    line: line_no,
                    expected: h,
                    found: rec.horizon,
                })
            }
            Some(_) => {}
        }
        for e in &rec.events {
            if let Some(m) = e.mark {
                max_mark = Some(max_mark.map_or(m, |x| x.max(m)));
            }
        }
        let mut seq = EventSequence::new(rec.events, rec.horizon).map_err(|source| {
            DatasetError::Invalid {
                line: line_no,
                source,
            }
        })?;
        seq.latent_scale = rec.u;
        sequences.push((line_no, seq));
    }

    let (marks, truth, meta) = match header {
        Some(h) => (h.marks, h.truth, h.meta),
        None => (max_mark.map_or(0, |m| m + 1), None, None),
    };
    let mark_space = MarkSpace::new(marks);
    for (line, seq) in &sequences {
        for e in seq.events() {
            mark_space
                .check(e.mark)
                .map_err(|source| DatasetError::Invalid {
                    line: *line,
                    source,
                })?;
        }
    }
    Ok(Dataset {
        sequences: sequences.into_iter().map(|(_, s)| s).collect(),
        mark_space,
        truth,
        meta,
    })
}

pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> Result<(), DatasetError> {
    if ds.mark_space.size() > 0 || ds.truth.is_some() || ds.meta.is_some() {
        let header = HeaderRecord {
            marks: ds.mark_space.size(),
            truth: ds.truth,
            meta: ds.meta.clone(),
        };
        serde_json::to_writer(&mut *w, &header).map_err(io::Error::from)?;
        writeln!(w)?;
    }
    for seq in &ds.sequences {
        let rec = SequenceRecord {
            horizon: seq.horizon,
            events: seq.events.clone(),
            u: seq.latent_scale,
        };
        serde_json::to_writer(&mut *w, &rec).map_err(io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}
