//! Week-slot time conventions, observation ingestion and the train/test split.
//!
//! A week is cut into [`H`] half-day slots. Slot 1 starts Monday 00:00, slot 2
//! starts Monday 12:00, and slot 14 covers Sunday afternoon and evening.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of periodic slots per week.
pub const H: usize = 14;

/// Days in the weekly period.
pub const DAYS: usize = 7;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: tower {tower} outside [0, {tower_count})")]
    TowerOutOfRange {
        line: u64,
        tower: u32,
        tower_count: u32,
    },
    #[error("expected header `participant,tower,timestamp`, found `{0}`")]
    Header(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sighting of a participant near a tower.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub participant: String,
    pub tower: u32,
    pub timestamp: NaiveDateTime,
}

impl ObservationRecord {
    pub fn week_point(&self) -> WeekPoint {
        to_week_point(&self.timestamp)
    }
}

/// Records keyed by participant, each group sorted by timestamp.
pub type Grouped = BTreeMap<String, Vec<ObservationRecord>>;

/// Position within the week: day 0 is Monday, hour is fractional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekPoint {
    pub day: u8,
    pub hour: f64,
}

impl WeekPoint {
    pub fn new(day: u8, hour: f64) -> Option<Self> {
        (usize::from(day) < DAYS && (0.0..24.0).contains(&hour)).then_some(Self { day, hour })
    }
}

/// A half-day slot in `1..=H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SlotIndex(u8);

impl SlotIndex {
    pub fn new(value: u8) -> Option<Self> {
        (1..=H as u8).contains(&value).then_some(Self(value))
    }

    /// Slot from a zero-based position; wraps modulo `H`.
    pub fn from_zero_based(index: usize) -> Self {
        Self((index % H) as u8 + 1)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn zero_based(self) -> usize {
        usize::from(self.0) - 1
    }

    /// The slot reached after `delay` further slots.
    pub fn advance(self, delay: usize) -> Self {
        Self::from_zero_based(self.zero_based() + delay)
    }

    pub fn day(self) -> u8 {
        (self.zero_based() / 2) as u8
    }

    pub fn is_afternoon(self) -> bool {
        self.zero_based() % 2 == 1
    }

    /// Quarter points of the slot's twelve hours, e.g. 3 and 9 for a morning slot.
    pub fn quarter_hours(self) -> [f64; 2] {
        let base = if self.is_afternoon() { 12.0 } else { 0.0 };
        [base + 3.0, base + 9.0]
    }

    pub fn all() -> impl Iterator<Item = SlotIndex> {
        (1..=H as u8).map(SlotIndex)
    }
}

impl TryFrom<u8> for SlotIndex {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| format!("slot {value} outside [1, {H}]"))
    }
}

impl From<SlotIndex> for u8 {
    fn from(slot: SlotIndex) -> u8 {
        slot.0
    }
}

impl fmt::Display for SlotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn to_week_point(timestamp: &NaiveDateTime) -> WeekPoint {
    let day = timestamp.weekday().num_days_from_monday() as u8;
    let hour = f64::from(timestamp.hour())
        + f64::from(timestamp.minute()) / 60.0
        + f64::from(timestamp.second()) / 3600.0;
    WeekPoint { day, hour }
}

pub fn to_slot(point: WeekPoint) -> SlotIndex {
    let afternoon = usize::from(point.hour >= 12.0);
    SlotIndex::from_zero_based(2 * usize::from(point.day) + afternoon)
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 3] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .or_else(|| {
            DateTime::parse_from_rfc3339(raw)
                .ok()
                .map(|dt| dt.naive_local())
        })
}

/// Reads `participant,tower,timestamp` CSV and groups rows by participant.
pub fn parse_records<R: Read>(source: R, tower_count: u32) -> Result<Grouped, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let header = reader.headers()?.clone();
    let mut groups = Grouped::new();
    if header.is_empty() {
        return Ok(groups);
    }
    let fields: Vec<&str> = header.iter().collect();
    if fields != ["participant", "tower", "timestamp"] {
        return Err(DataError::Header(fields.join(",")));
    }

    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let participant = row[0].to_string();
        if participant.is_empty() {
            return Err(DataError::Malformed {
                line,
                message: "empty participant id".into(),
            });
        }
        let tower: u32 = row[1].parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("tower `{}` is not a non-negative integer", &row[1]),
        })?;
        if tower >= tower_count {
            return Err(DataError::TowerOutOfRange {
                line,
                tower,
                tower_count,
            });
        }
        let timestamp = parse_timestamp(&row[2]).ok_or_else(|| DataError::Malformed {
            line,
            message: format!("unparseable timestamp `{}`", &row[2]),
        })?;
        groups
            .entry(participant.clone())
            .or_default()
            .push(ObservationRecord {
                participant,
                tower,
                timestamp,
            });
    }

    for records in groups.values_mut() {
        records.sort_by_key(|r| r.timestamp);
    }
    Ok(groups)
}

pub fn write_records<W: Write>(sink: W, groups: &Grouped) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["participant", "tower", "timestamp"])?;
    for record in groups.values().flatten() {
        writer.write_record([
            record.participant.as_str(),
            &record.tower.to_string(),
            &record.timestamp.format(TIMESTAMP_FORMAT).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HoldoutSplit {
    pub train: Grouped,
    pub test: Vec<ObservationRecord>,
    /// Participants with fewer than two records.
    pub skipped: Vec<String>,
}

/// Holds out one uniformly chosen record per participant.
pub fn split_holdout(groups: &Grouped, seed: u64) -> HoldoutSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = HoldoutSplit::default();
    for (participant, records) in groups {
        if records.len() < 2 {
            split.skipped.push(participant.clone());
            continue;
        }
        let held = rng.random_range(0..records.len());
        let mut train = records.clone();
        split.test.push(train.remove(held));
        split.train.insert(participant.clone(), train);
    }
    split
}

/// Plain-text listing of participants left out of a holdout split.
pub fn skip_report(skipped: &[String]) -> String {
    let mut out = format!(
        "# participants skipped by holdout split (fewer than 2 records): {}\n",
        skipped.len()
    );
    for id in skipped {
        out.push_str(id);
        out.push('\n');
    }
    out
}

pub fn visit_set(records: &[ObservationRecord]) -> BTreeSet<u32> {
    records.iter().map(|r| r.tower).collect()
}
