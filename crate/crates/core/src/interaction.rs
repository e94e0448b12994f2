//! One student's interaction records: what was asked, and how they answered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exercise-side information, with ids already densified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExerciseInfo {
    pub exercise_id: usize,
    pub category_id: usize,
}

/// Calendar hour at which an exercise was received.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CalendarHour {
    /// 1-12
    pub month: u32,
    /// 1-31
    pub day: u32,
    /// 0-23
    pub hour: u32,
}

impl CalendarHour {
    /// UTC calendar hour of an epoch-millisecond instant.
    pub fn from_epoch_millis(ms: i64) -> Result<Self> {
        use chrono::{Datelike, Timelike};
        let t = chrono::DateTime::from_timestamp_millis(ms)
            .ok_or_else(|| Error::Validation(format!("timestamp {ms} out of range")))?;
        Ok(CalendarHour {
            month: t.month(),
            day: t.day(),
            hour: t.hour(),
        })
    }
}

/// Response-side information.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseInfo {
    pub correct: bool,
    pub elapsed_seconds: f64,
    pub received: CalendarHour,
}

impl ResponseInfo {
    pub fn label(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Exercise and response at one step of a history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub exercise: ExerciseInfo,
    pub response: ResponseInfo,
    /// Absolute receive time, epoch milliseconds.
    pub timestamp_ms: i64,
}

impl Interaction {
    /// A placeholder for the exercise being predicted, whose response is not
    /// known. Its response fields are never read as model input.
    pub fn query(exercise: ExerciseInfo) -> Self {
        Interaction {
            exercise,
            response: ResponseInfo {
                correct: false,
                elapsed_seconds: 0.0,
                received: CalendarHour {
                    month: 1,
                    day: 1,
                    hour: 0,
                },
            },
            timestamp_ms: 0,
        }
    }
}
