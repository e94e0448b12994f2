//! Two-parameter response simulator with known ground truth.
//!
//! Each student has an ability `a ~ N(0, 1)` and each exercise a difficulty
//! `d ~ N(0, 1)` and a uniformly drawn category. A student answers a
//! uniformly drawn exercise correctly with probability `sigmoid(a - d)`.
//! History lengths are uniform on `min_len..=max_len`. Elapsed times are
//! log-normal with median 20 s. Sessions start at a uniform instant of 2019
//! and successive receive times are separated by the elapsed time plus an
//! exponential pause with a mean of 5 minutes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, RawRecord};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, RngStream};

/// 2019-01-01T00:00:00Z
const YEAR_START_MS: i64 = 1_546_300_800_000;
const YEAR_MS: i64 = 365 * 24 * 3600 * 1000;
const MEAN_PAUSE_SECONDS: f64 = 300.0;
const ELAPSED_LOG_MEDIAN: f64 = 2.995_732_273_553_991; // ln 20
const ELAPSED_LOG_SD: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_exercises: usize,
    pub num_categories: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(num_users: usize, num_exercises: usize, num_categories: usize, seed: u64) -> Self {
        SyntheticConfig {
            num_users,
            num_exercises,
            num_categories,
            min_len: 20,
            max_len: 60,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("users", self.num_users),
            ("exercises", self.num_exercises),
            ("categories", self.num_categories),
            ("min_len", self.min_len),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if self.min_len > self.max_len {
            return Err(Error::Validation(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Hidden parameters of a generated dataset, keyed by raw id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SyntheticConfig,
    pub ability: BTreeMap<String, f64>,
    pub difficulty: BTreeMap<String, f64>,
    pub category: BTreeMap<String, String>,
}

impl Truth {
    /// Oracle probability of a correct answer.
    pub fn probability(&self, user: &str, exercise: &str) -> Option<f64> {
        Some(sigmoid(self.ability.get(user)? - self.difficulty.get(exercise)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<RawRecord>,
    pub truth: Truth,
}

impl SyntheticData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_records(self.records.clone())
    }
}

fn id(prefix: char, i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

pub fn generate_synthetic(config: SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let mut items = root.derive(1);
    let exercises: Vec<String> = (0..config.num_exercises)
        .map(|i| id('e', i, config.num_exercises))
        .collect();
    let categories: Vec<String> = (0..config.num_categories)
        .map(|i| id('c', i, config.num_categories))
        .collect();
    let mut difficulty = BTreeMap::new();
    let mut category = BTreeMap::new();
    let mut item_params = Vec::with_capacity(exercises.len());
    for e in &exercises {
        let d = items.normal();
        let c = categories[items.below(categories.len())].clone();
        difficulty.insert(e.clone(), d);
        category.insert(e.clone(), c.clone());
        item_params.push((d, c));
    }

    let mut ability = BTreeMap::new();
    let mut records = Vec::new();
    for u in 0..config.num_users {
        let user_id = id('u', u, config.num_users);
        let mut rng = root.derive(1_000 + u as u64);
        let a = rng.normal();
        ability.insert(user_id.clone(), a);
        let len = config.min_len + rng.below(config.max_len - config.min_len + 1);
        let mut t = YEAR_START_MS + (rng.uniform() * YEAR_MS as f64) as i64;
        for _ in 0..len {
            let e = rng.below(exercises.len());
            let (d, ref c) = item_params[e];
            let correct = rng.uniform() < sigmoid(a - d);
            let elapsed = (ELAPSED_LOG_MEDIAN + ELAPSED_LOG_SD * rng.normal()).exp();
            let elapsed = (elapsed * 1000.0).round() / 1000.0;
            records.push(RawRecord {
                user_id: user_id.clone(),
                timestamp: t,
                exercise_id: exercises[e].clone(),
                category_id: c.clone(),
                response: u8::from(correct),
                elapsed_seconds: elapsed,
            });
            let pause = -MEAN_PAUSE_SECONDS * (1.0 - rng.uniform()).ln();
            t += ((elapsed + pause) * 1000.0) as i64 + 1;
        }
    }
    Ok(SyntheticData {
        records,
        truth: Truth {
            config,
            ability,
            difficulty,
            category,
        },
    })
}
