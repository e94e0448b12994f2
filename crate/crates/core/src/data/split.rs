use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::UserHistory;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split ratios must be positive and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Indices into a user list, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn user_key(seed: u64, user_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user_id.as_bytes());
    h.finalize().into()
}

/// Assigns whole users to splits. Users are ordered by a seeded hash of
/// their id; the first `round(train·n)` go to train, the next
/// `round(val·n)` to validation and the rest to test.
pub fn split_users(users: &[UserHistory], ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    let n = users.len();
    let mut order: Vec<(usize, [u8; 32])> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (i, user_key(seed, &u.user_id)))
        .collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then(users[a.0].user_id.cmp(&users[b.0].user_id)));
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
    let take = |range: std::ops::Range<usize>| {
        let mut v: Vec<usize> = order[range].iter().map(|(i, _)| *i).collect();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}
