//! Interaction logs: CSV ingestion, id densification, dataset manifests,
//! user splits, windowing and synthetic generation.
//!
//! The CSV contract is a header row
//! `user_id,timestamp,exercise_id,category_id,response,elapsed_seconds`
//! followed by one record per line; timestamps are epoch milliseconds.

mod split;
mod synthetic;
mod window;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use split::{split_users, Split, SplitIndices, SplitRatios};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData, Truth};
pub use window::{window, windows_for, WindowedExample};

use crate::error::{Error, Result};
use crate::interaction::{CalendarHour, ExerciseInfo, Interaction, ResponseInfo};

pub const CSV_HEADER: [&str; 6] = [
    "user_id",
    "timestamp",
    "exercise_id",
    "category_id",
    "response",
    "elapsed_seconds",
];

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One CSV row with raw (not yet densified) ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub exercise_id: String,
    pub category_id: String,
    pub response: u8,
    pub elapsed_seconds: f64,
}

/// Raw id ↔ dense index maps. Index order is the sorted order of raw ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub exercises: Vec<String>,
    pub categories: Vec<String>,
}

impl Vocabulary {
    pub fn num_exercises(&self) -> usize {
        self.exercises.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// Dense exercise index, or the out-of-vocabulary index
    /// `num_exercises()` for unknown ids.
    pub fn exercise_index(&self, raw: &str) -> usize {
        self.exercises
            .binary_search_by(|e| e.as_str().cmp(raw))
            .unwrap_or(self.exercises.len())
    }

    pub fn category_index(&self, raw: &str) -> usize {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(raw))
            .unwrap_or(self.categories.len())
    }

    pub fn exercise_info(&self, exercise: &str, category: &str) -> ExerciseInfo {
        ExerciseInfo {
            exercise_id: self.exercise_index(exercise),
            category_id: self.category_index(category),
        }
    }

    /// Raw exercise id of a dense index, `None` for the out-of-vocabulary row.
    pub fn exercise_raw(&self, index: usize) -> Option<&str> {
        self.exercises.get(index).map(String::as_str)
    }

    pub fn category_raw(&self, index: usize) -> Option<&str> {
        self.categories.get(index).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    /// Ascending by timestamp.
    pub interactions: Vec<Interaction>,
}

/// Per-user histories, ordered by user id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserHistory>,
    pub vocabulary: Vocabulary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCount {
    pub users: usize,
    pub responses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub num_exercises: usize,
    pub num_categories: usize,
    pub num_users: usize,
    pub num_responses: usize,
    /// Present once a split has been applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, SplitCount>,
    /// SHA-256 of the canonical CSV rendering of the dataset.
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest schema version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        DatasetManifest::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl Dataset {
    /// Groups records by user, sorts each history by timestamp (stable) and
    /// densifies ids.
    pub fn from_records(records: Vec<RawRecord>) -> Result<Self> {
        let exercises: BTreeSet<&str> = records.iter().map(|r| r.exercise_id.as_str()).collect();
        let categories: BTreeSet<&str> = records.iter().map(|r| r.category_id.as_str()).collect();
        let vocabulary = Vocabulary {
            exercises: exercises.into_iter().map(str::to_string).collect(),
            categories: categories.into_iter().map(str::to_string).collect(),
        };
        Dataset::from_records_with(records, vocabulary)
    }

    /// As [`Dataset::from_records`] but with a fixed vocabulary; unknown ids
    /// map to the out-of-vocabulary rows.
    pub fn from_records_with(records: Vec<RawRecord>, vocabulary: Vocabulary) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<(i64, Interaction)>> = BTreeMap::new();
        for r in records {
            let interaction = Interaction {
                exercise: vocabulary.exercise_info(&r.exercise_id, &r.category_id),
                response: ResponseInfo {
                    correct: r.response == 1,
                    elapsed_seconds: r.elapsed_seconds,
                    received: CalendarHour::from_epoch_millis(r.timestamp)?,
                },
                timestamp_ms: r.timestamp,
            };
            grouped.entry(r.user_id).or_default().push((r.timestamp, interaction));
        }
        let users = grouped
            .into_iter()
            .map(|(user_id, mut rows)| {
                rows.sort_by_key(|(t, _)| *t);
                UserHistory {
                    user_id,
                    interactions: rows.into_iter().map(|(_, x)| x).collect(),
                }
            })
            .collect();
        Ok(Dataset { users, vocabulary })
    }

    pub fn num_responses(&self) -> usize {
        self.users.iter().map(|u| u.interactions.len()).sum()
    }

    /// Records in canonical order: users by id, then by time.
    pub fn records(&self) -> Vec<RawRecord> {
        let v = &self.vocabulary;
        let mut out = Vec::with_capacity(self.num_responses());
        for u in &self.users {
            for x in &u.interactions {
                out.push(RawRecord {
                    user_id: u.user_id.clone(),
                    timestamp: x.timestamp_ms,
                    exercise_id: v.exercise_raw(x.exercise.exercise_id).unwrap_or("").to_string(),
                    category_id: v.category_raw(x.exercise.category_id).unwrap_or("").to_string(),
                    response: u8::from(x.response.correct),
                    elapsed_seconds: x.response.elapsed_seconds,
                });
            }
        }
        out
    }

    pub fn content_hash(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_records(&self.records(), &mut buf)?;
        Ok(hex::encode(Sha256::digest(&buf)))
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        Ok(DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            num_exercises: self.vocabulary.num_exercises(),
            num_categories: self.vocabulary.num_categories(),
            num_users: self.users.len(),
            num_responses: self.num_responses(),
            split_seed: None,
            splits: BTreeMap::new(),
            content_hash: self.content_hash()?,
        })
    }

    /// Manifest including per-split user and response counts.
    pub fn manifest_with_splits(&self, splits: &SplitIndices, seed: u64) -> Result<DatasetManifest> {
        let mut m = self.manifest()?;
        m.split_seed = Some(seed);
        for split in Split::ALL {
            let idx = splits.get(split);
            m.splits.insert(
                split.name().to_string(),
                SplitCount {
                    users: idx.len(),
                    responses: idx.iter().map(|&i| self.users[i].interactions.len()).sum(),
                },
            );
        }
        Ok(m)
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.user_id.as_str(), i))
            .collect()
    }
}

/// Reads CSV records. Line numbers in errors are 1-based file lines.
pub fn read_records(source: impl Read) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |field: &str, value: &str| Error::Parse {
            line,
            message: format!("invalid {field} {value:?}"),
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let timestamp: i64 = field(1).parse().map_err(|_| parse_err("timestamp", field(1)))?;
        let response = match field(4) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Validation(format!(
                    "line {line}: response must be 0 or 1, got {other:?}"
                )))
            }
        };
        let elapsed: f64 = field(5)
            .parse()
            .map_err(|_| parse_err("elapsed_seconds", field(5)))?;
        if !(elapsed >= 0.0) || !elapsed.is_finite() {
            return Err(Error::Validation(format!(
                "line {line}: elapsed_seconds must be finite and nonnegative, got {elapsed}"
            )));
        }
        for (i, name) in [(0, "user_id"), (2, "exercise_id"), (3, "category_id")] {
            if field(i).is_empty() {
                return Err(parse_err(name, ""));
            }
        }
        out.push(RawRecord {
            user_id: field(0).to_string(),
            timestamp,
            exercise_id: field(2).to_string(),
            category_id: field(3).to_string(),
            response,
            elapsed_seconds: elapsed,
        });
    }
    Ok(out)
}

pub fn write_records(records: &[RawRecord], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.user_id.clone(),
            r.timestamp.to_string(),
            r.exercise_id.clone(),
            r.category_id.clone(),
            r.response.to_string(),
            r.elapsed_seconds.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Parses a log into per-user histories and its manifest.
pub fn parse_log(source: impl Read) -> Result<(Dataset, DatasetManifest)> {
    let dataset = Dataset::from_records(read_records(source)?)?;
    let manifest = dataset.manifest()?;
    Ok((dataset, manifest))
}

pub fn parse_log_file(path: impl AsRef<Path>) -> Result<(Dataset, DatasetManifest)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(std::io::BufReader::new(file))
}

pub fn write_log_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(&dataset.records(), std::io::BufWriter::new(file))
}
