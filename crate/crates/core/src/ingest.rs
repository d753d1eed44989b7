//! Parsing of trajectories, outcome tables, and demographics into validated
//! domain objects.
//!
//! Loaders skip invalid rows and count them instead of aborting, so a single
//! corrupt GPS fix cannot kill a cohort-scale audit. Hard errors are reserved
//! for unusable inputs: missing files, unmappable columns, duplicate cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One geo-located record: WGS-84 coordinates plus a UTC timestamp in
/// seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, timestamp: f64) -> Option<Self> {
        let p = GeoPoint {
            lat,
            lon,
            timestamp,
        };
        p.is_valid().then_some(p)
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.timestamp.is_finite()
            && self.timestamp >= 0.0
    }
}

/// One user's time-ordered sequence of geo-located records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    user_id: String,
    points: Vec<GeoPoint>,
}

impl Trajectory {
    /// Build a trajectory; points are stably sorted by timestamp so the
    /// non-decreasing invariant always holds.
    pub fn new(user_id: impl Into<String>, mut points: Vec<GeoPoint>) -> Result<Self> {
        let user_id = user_id.into();
        if points.is_empty() {
            return Err(Error::EmptyTrajectory { user: user_id });
        }
        points.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Trajectory { user_id, points })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maps logical trajectory fields onto CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub user: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            user: "user_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
        }
    }
}

/// Trajectories plus row-level diagnostics from a load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrajectories {
    /// One trajectory per user, sorted by user id.
    pub trajectories: Vec<Trajectory>,
    /// Rows rejected for violating the point invariants or failing to parse.
    pub rejected_rows: usize,
    /// Users whose rows were all rejected (or whose files held no records).
    pub empty_users: usize,
}

/// Parse a timestamp that is either integer epoch seconds or ISO-8601 with a
/// required `Z` suffix.
fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(epoch) = raw.parse::<i64>() {
        return (epoch >= 0).then_some(epoch as f64);
    }
    if !raw.ends_with('Z') {
        return None;
    }
    let dt = DateTime::parse_from_rfc3339(raw).ok()?;
    let secs = dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9;
    (secs >= 0.0).then_some(secs)
}

/// Load trajectories from a CSV file with one point per row.
///
/// Rows violating the point invariants are rejected and counted; the load
/// fails only when no user retains a valid row.
pub fn load_trajectories(path: &Path, schema: &ColumnSchema) -> Result<LoadedTrajectories> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let user_col = col(&schema.user)?;
    let ts_col = col(&schema.timestamp)?;
    let lat_col = col(&schema.lat)?;
    let lon_col = col(&schema.lon)?;

    let mut per_user: BTreeMap<String, Vec<GeoPoint>> = BTreeMap::new();
    let mut seen_users: BTreeSet<String> = BTreeSet::new();
    let mut rejected = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let user = record.get(user_col).unwrap_or("").to_string();
        if !user.is_empty() {
            seen_users.insert(user.clone());
        }
        let parsed = (|| -> Option<GeoPoint> {
            let ts = parse_timestamp(record.get(ts_col)?)?;
            let lat = record.get(lat_col)?.parse::<f64>().ok()?;
            let lon = record.get(lon_col)?.parse::<f64>().ok()?;
            GeoPoint::new(lat, lon, ts)
        })();
        match parsed {
            Some(p) if !user.is_empty() => per_user.entry(user).or_default().push(p),
            _ => rejected += 1,
        }
    }

    if per_user.is_empty() {
        return Err(Error::NoValidRows {
            path: path.to_path_buf(),
        });
    }
    let empty_users = seen_users.len() - per_user.len();
    let trajectories = per_user
        .into_iter()
        .map(|(user, points)| Trajectory::new(user, points))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedTrajectories {
        trajectories,
        rejected_rows: rejected,
        empty_users,
    })
}

/// Number of header lines in a Geolife PLT file.
const PLT_HEADER_LINES: usize = 6;

fn parse_plt_record(line: &str) -> Option<GeoPoint> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 7 {
        return None;
    }
    let lat = fields[0].trim().parse::<f64>().ok()?;
    let lon = fields[1].trim().parse::<f64>().ok()?;
    let date = NaiveDate::parse_from_str(fields[5].trim(), "%Y-%m-%d").ok()?;
    let time = NaiveTime::parse_from_str(fields[6].trim(), "%H:%M:%S").ok()?;
    // Geolife stamps are naive local times; they are read as UTC uniformly,
    // which keeps the cohort internally consistent.
    let naive = NaiveDateTime::new(date, time);
    let ts = naive.and_utc().timestamp() as f64;
    GeoPoint::new(lat, lon, ts)
}

/// Load a directory in the public Geolife layout: `<user>/Trajectory/*.plt`,
/// each file carrying six header lines before its records. All files of one
/// user merge into a single time-sorted trajectory.
pub fn load_geolife_plt(dir: &Path) -> Result<LoadedTrajectories> {
    let io_err = |source: std::io::Error, p: &Path| Error::Io {
        path: p.to_path_buf(),
        source,
    };

    let mut user_dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(e, dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    user_dirs.sort();

    let mut trajectories = Vec::new();
    let mut rejected = 0usize;
    let mut empty_users = 0usize;

    for user_dir in user_dirs {
        let user = user_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let traj_dir = user_dir.join("Trajectory");
        if !traj_dir.is_dir() {
            continue;
        }
        let mut plt_files: Vec<PathBuf> = fs::read_dir(&traj_dir)
            .map_err(|e| io_err(e, &traj_dir))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "plt"))
            .collect();
        plt_files.sort();

        let mut points = Vec::new();
        for file in &plt_files {
            let reader = BufReader::new(fs::File::open(file).map_err(|e| io_err(e, file))?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| io_err(e, file))?;
                if idx < PLT_HEADER_LINES {
                    continue;
                }
                if line.trim().is_empty() {
                    continue;
                }
                match parse_plt_record(&line) {
                    Some(p) => points.push(p),
                    None => rejected += 1,
                }
            }
        }
        if points.is_empty() {
            if !plt_files.is_empty() {
                empty_users += 1;
            }
            continue;
        }
        trajectories.push(Trajectory::new(user, points)?);
    }

    if trajectories.is_empty() {
        return Err(Error::NoValidRows {
            path: dir.to_path_buf(),
        });
    }
    Ok(LoadedTrajectories {
        trajectories,
        rejected_rows: rejected,
        empty_users,
    })
}

/// The audited outcome columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeColumn {
    UniquenessAccuracy,
    PredictabilityAccuracy,
    PrivacyGain,
    UtilityDecline,
}

impl OutcomeColumn {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "uniqueness_accuracy" => Some(OutcomeColumn::UniquenessAccuracy),
            "predictability_accuracy" => Some(OutcomeColumn::PredictabilityAccuracy),
            "privacy_gain" => Some(OutcomeColumn::PrivacyGain),
            "utility_decline" => Some(OutcomeColumn::UtilityDecline),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeColumn::UniquenessAccuracy => "uniqueness_accuracy",
            OutcomeColumn::PredictabilityAccuracy => "predictability_accuracy",
            OutcomeColumn::PrivacyGain => "privacy_gain",
            OutcomeColumn::UtilityDecline => "utility_decline",
        }
    }
}

impl fmt::Display for OutcomeColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The reserved source name for the unprotected single-task models.
pub const ORIGINAL_SOURCE: &str = "original";

/// Per-user, per-source outcome values in [0, 1].
///
/// The `original` source carries the task accuracies of the unprotected
/// models; every other source is a privacy-utility trade-off model carrying
/// privacy gain and utility decline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeTable {
    cells: BTreeMap<(String, String, OutcomeColumn), f64>,
}

impl OutcomeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Columns that make sense for a source: (privacy-flavoured,
    /// utility-flavoured).
    pub fn columns_for(source: &str) -> [OutcomeColumn; 2] {
        if source == ORIGINAL_SOURCE {
            [
                OutcomeColumn::UniquenessAccuracy,
                OutcomeColumn::PredictabilityAccuracy,
            ]
        } else {
            [OutcomeColumn::PrivacyGain, OutcomeColumn::UtilityDecline]
        }
    }

    pub fn insert(
        &mut self,
        user: impl Into<String>,
        source: impl Into<String>,
        column: OutcomeColumn,
        value: f64,
    ) -> Result<()> {
        let user = user.into();
        let source = source.into();
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(Error::ValueOutOfRange {
                path: PathBuf::new(),
                row: 0,
                what: column.as_str().into(),
                value,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !Self::columns_for(&source).contains(&column) {
            return Err(Error::MetricSourceMismatch {
                path: PathBuf::new(),
                row: 0,
                metric: column.as_str().into(),
                outcome_source: source,
            });
        }
        let key = (user, source, column);
        if self.cells.contains_key(&key) {
            return Err(Error::DuplicateOutcome {
                path: PathBuf::new(),
                row: 0,
                user: key.0,
                outcome_source: key.1,
                metric: column.as_str().into(),
            });
        }
        self.cells.insert(key, value);
        Ok(())
    }

    pub fn value(&self, user: &str, source: &str, column: OutcomeColumn) -> Option<f64> {
        self.cells
            .get(&(user.to_string(), source.to_string(), column))
            .copied()
    }

    pub fn users(&self) -> BTreeSet<String> {
        self.cells.keys().map(|(u, _, _)| u.clone()).collect()
    }

    /// Distinct sources, `original` first, models sorted by name.
    pub fn sources(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.cells.keys().map(|(_, s, _)| s.as_str()).collect();
        let mut out = Vec::new();
        if set.contains(ORIGINAL_SOURCE) {
            out.push(ORIGINAL_SOURCE.to_string());
        }
        out.extend(
            set.into_iter()
                .filter(|s| *s != ORIGINAL_SOURCE)
                .map(String::from),
        );
        out
    }

    /// Distinct (source, column) cells present in the table, `original`
    /// first. These are the audited outcomes.
    pub fn audited_cells(&self) -> Vec<(String, OutcomeColumn)> {
        let mut out = Vec::new();
        for source in self.sources() {
            let mut cols: Vec<OutcomeColumn> = self
                .cells
                .keys()
                .filter(|(_, s, _)| *s == source)
                .map(|(_, _, c)| *c)
                .collect();
            cols.sort();
            cols.dedup();
            for c in cols {
                out.push((source.clone(), c));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }
}

/// Load an outcome table from a CSV with header `user_id,source,metric,value`.
pub fn load_outcomes(path: &Path) -> Result<OutcomeTable> {
    #[derive(Deserialize)]
    struct Row {
        user_id: String,
        source: String,
        metric: String,
        value: f64,
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut table = OutcomeTable::new();
    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = idx as u64 + 2; // header is line 1
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let column = OutcomeColumn::parse(&row.metric).ok_or_else(|| Error::UnknownMetric {
            path: path.to_path_buf(),
            row: row_no,
            metric: row.metric.clone(),
        })?;
        table
            .insert(row.user_id, row.source, column, row.value)
            .map_err(|e| match e {
                Error::ValueOutOfRange {
                    what,
                    value,
                    lo,
                    hi,
                    ..
                } => Error::ValueOutOfRange {
                    path: path.to_path_buf(),
                    row: row_no,
                    what,
                    value,
                    lo,
                    hi,
                },
                Error::DuplicateOutcome {
                    user,
                    outcome_source,
                    metric,
                    ..
                } => Error::DuplicateOutcome {
                    path: path.to_path_buf(),
                    row: row_no,
                    user,
                    outcome_source,
                    metric,
                },
                Error::MetricSourceMismatch {
                    metric,
                    outcome_source,
                    ..
                } => Error::MetricSourceMismatch {
                    path: path.to_path_buf(),
                    row: row_no,
                    metric,
                    outcome_source,
                },
                other => other,
            })?;
    }
    Ok(table)
}

/// Categorical sensitive attributes, one value per (user, attribute).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemographicTable {
    values: BTreeMap<(String, String), String>,
}

impl DemographicTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        user: impl Into<String>,
        attribute: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<()> {
        let user = user.into();
        let attribute = attribute.into();
        let value = value.into();
        if value.is_empty() {
            return Err(Error::EmptyAttributeValue {
                path: PathBuf::new(),
                row: 0,
                user,
                attribute,
            });
        }
        let key = (user, attribute);
        if self.values.contains_key(&key) {
            return Err(Error::DuplicateAttribute {
                path: PathBuf::new(),
                row: 0,
                user: key.0,
                attribute: key.1,
            });
        }
        self.values.insert(key, value);
        Ok(())
    }

    pub fn value(&self, user: &str, attribute: &str) -> Option<&str> {
        self.values
            .get(&(user.to_string(), attribute.to_string()))
            .map(|s| s.as_str())
    }

    pub fn attributes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.values.keys().map(|(_, a)| a.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Users per subgroup value of an attribute.
    pub fn subgroups(&self, attribute: &str) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for ((user, attr), value) in &self.values {
            if attr == attribute {
                out.entry(value.clone()).or_default().push(user.clone());
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Load demographics from a CSV with header `user_id,attribute,value`.
pub fn load_demographics(path: &Path) -> Result<DemographicTable> {
    #[derive(Deserialize)]
    struct Row {
        user_id: String,
        attribute: String,
        value: String,
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut table = DemographicTable::new();
    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = idx as u64 + 2;
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        table
            .insert(row.user_id, row.attribute, row.value)
            .map_err(|e| match e {
                Error::DuplicateAttribute {
                    user, attribute, ..
                } => Error::DuplicateAttribute {
                    path: path.to_path_buf(),
                    row: row_no,
                    user,
                    attribute,
                },
                Error::EmptyAttributeValue {
                    user, attribute, ..
                } => Error::EmptyAttributeValue {
                    path: path.to_path_buf(),
                    row: row_no,
                    user,
                    attribute,
                },
                other => other,
            })?;
    }
    Ok(table)
}

/// Resample a trajectory onto a uniform time grid from its first to its
/// last observation, carrying the last observation forward at each grid
/// instant. A terminal observation that falls off the grid is appended so
/// the resampled series always ends at the final fix.
pub fn resample_trajectory(traj: &Trajectory, interval: f64) -> Result<Trajectory> {
    if !(interval > 0.0) {
        return Err(Error::NonPositiveInterval(interval));
    }
    let points = traj.points();
    if points.len() == 1 {
        return Trajectory::new(traj.user_id(), vec![points[0]]);
    }
    let t0 = points[0].timestamp;
    let t_end = points[points.len() - 1].timestamp;

    let mut out = Vec::new();
    let mut idx = 0usize;
    let mut step = 0u64;
    loop {
        let t = t0 + step as f64 * interval;
        if t > t_end {
            break;
        }
        while idx + 1 < points.len() && points[idx + 1].timestamp <= t {
            idx += 1;
        }
        out.push(GeoPoint {
            lat: points[idx].lat,
            lon: points[idx].lon,
            timestamp: t,
        });
        step += 1;
    }
    let covered_end = out.last().is_some_and(|p| p.timestamp == t_end);
    if !covered_end {
        out.push(points[points.len() - 1]);
    }
    Trajectory::new(traj.user_id(), out)
}
