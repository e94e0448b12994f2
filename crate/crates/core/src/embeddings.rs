//! Attribute lookup tables and the additive composition of model inputs.
//!
//! Every input vector is the sum of a handful of table rows. A stream is first
//! described as a list of [`SlotRows`] (which row of which table each slot
//! sums), then rendered either into a plain [`Tensor`] or into a graph node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{ExerciseInfo, Interaction, ResponseInfo};
use crate::numerics::{xavier_uniform, Graph, RngStream, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// Elapsed times are bucketed to whole seconds in `0..=ELAPSED_CAP`.
pub const ELAPSED_CAP: usize = 300;
pub const ELAPSED_BUCKETS: usize = ELAPSED_CAP + 1;
/// Dense month × day × hour grid, impossible dates included.
pub const TIMESTAMP_BUCKETS: usize = 12 * 31 * 24;

/// How much response-side information enters the response embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingDetail {
    /// Response value and position.
    #[default]
    A,
    /// Adds exercise category, receive timestamp and elapsed time.
    B,
}

/// Rounds half-up to whole seconds and caps at 300.
pub fn bucket_elapsed(elapsed_seconds: f64) -> Result<usize> {
    if !(elapsed_seconds >= 0.0) || !elapsed_seconds.is_finite() {
        return Err(Error::Validation(format!(
            "elapsed time must be a finite nonnegative number, got {elapsed_seconds}"
        )));
    }
    let rounded = (elapsed_seconds + 0.5).floor();
    Ok((rounded.min(ELAPSED_CAP as f64)) as usize)
}

/// `((month - 1) * 31 + (day - 1)) * 24 + hour`.
pub fn bucket_timestamp(month: u32, day: u32, hour: u32) -> Result<usize> {
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) || hour > 23 {
        return Err(Error::Validation(format!(
            "calendar fields out of range: month {month}, day {day}, hour {hour}"
        )));
    }
    Ok((((month - 1) * 31 + (day - 1)) * 24 + hour) as usize)
}

/// Sizes that determine the table shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSizes {
    pub num_exercises: usize,
    pub num_categories: usize,
    pub window: usize,
    pub d_model: usize,
    pub detail: EmbeddingDetail,
}

/// Table rows summed into one input vector. `None` contributes nothing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SlotRows {
    pub exercise: Option<usize>,
    pub category: Option<usize>,
    pub position: Option<usize>,
    pub response: Option<usize>,
    pub elapsed: Option<usize>,
    pub timestamp: Option<usize>,
    pub start: bool,
}

impl SlotRows {
    /// The learned start token on its own.
    pub fn start_token() -> Self {
        SlotRows {
            start: true,
            ..SlotRows::default()
        }
    }
}

/// Handles to the lookup tables inside a [`ParamStore`].
///
/// Exercise and category tables carry one extra trailing row that unknown ids
/// map to. The elapsed and timestamp tables exist only at detail B.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub sizes: EmbeddingSizes,
    pub exercise_id_table: ParamId,
    pub category_table: ParamId,
    pub position_table: ParamId,
    pub response_table: ParamId,
    pub elapsed_table: Option<ParamId>,
    pub timestamp_table: Option<ParamId>,
    pub start_token: ParamId,
}

impl EmbeddingTables {
    pub fn register(store: &mut ParamStore, sizes: EmbeddingSizes, rng: &mut RngStream) -> Result<Self> {
        let d = sizes.d_model;
        let mut table = |store: &mut ParamStore, name: &str, rows: usize| {
            store.add(format!("embedding.{name}"), xavier_uniform(rows, d, rng)?)
        };
        let exercise_id_table = table(store, "exercise", sizes.num_exercises + 1)?;
        let category_table = table(store, "category", sizes.num_categories + 1)?;
        let position_table = table(store, "position", sizes.window)?;
        let response_table = table(store, "response", 2)?;
        let (elapsed_table, timestamp_table) = match sizes.detail {
            EmbeddingDetail::A => (None, None),
            EmbeddingDetail::B => (
                Some(table(store, "elapsed", ELAPSED_BUCKETS)?),
                Some(table(store, "timestamp", TIMESTAMP_BUCKETS)?),
            ),
        };
        let start_token = table(store, "start", 1)?;
        Ok(EmbeddingTables {
            sizes,
            exercise_id_table,
            category_table,
            position_table,
            response_table,
            elapsed_table,
            timestamp_table,
            start_token,
        })
    }

    /// Closed-form scalar count of the tables for `sizes`.
    pub fn scalar_count(sizes: &EmbeddingSizes) -> usize {
        let rows = (sizes.num_exercises + 1)
            + (sizes.num_categories + 1)
            + sizes.window
            + 2
            + 1
            + match sizes.detail {
                EmbeddingDetail::A => 0,
                EmbeddingDetail::B => ELAPSED_BUCKETS + TIMESTAMP_BUCKETS,
            };
        rows * sizes.d_model
    }

    pub fn oov_exercise(&self) -> usize {
        self.sizes.num_exercises
    }

    pub fn oov_category(&self) -> usize {
        self.sizes.num_categories
    }

    fn check_position(&self, position: usize) -> Result<usize> {
        if position >= self.sizes.window {
            return Err(Error::Window {
                len: position + 1,
                window: self.sizes.window,
            });
        }
        Ok(position)
    }

    fn check_exercise(&self, e: &ExerciseInfo) -> Result<()> {
        if e.exercise_id > self.sizes.num_exercises || e.category_id > self.sizes.num_categories {
            return Err(Error::Validation(format!(
                "exercise {} / category {} outside vocabulary ({} exercises, {} categories)",
                e.exercise_id, e.category_id, self.sizes.num_exercises, self.sizes.num_categories
            )));
        }
        Ok(())
    }

    /// Exercise id + category + position.
    pub fn exercise_rows(&self, e: &ExerciseInfo, position: usize) -> Result<SlotRows> {
        self.check_exercise(e)?;
        Ok(SlotRows {
            exercise: Some(e.exercise_id),
            category: Some(e.category_id),
            position: Some(self.check_position(position)?),
            ..SlotRows::default()
        })
    }

    /// Response value + position, plus category, timestamp and elapsed time
    /// at detail B. `category` is the category of the answered exercise.
    pub fn response_rows(
        &self,
        r: &ResponseInfo,
        category: usize,
        position: usize,
        detail: EmbeddingDetail,
    ) -> Result<SlotRows> {
        let mut rows = SlotRows {
            response: Some(usize::from(r.correct)),
            position: Some(self.check_position(position)?),
            ..SlotRows::default()
        };
        if detail == EmbeddingDetail::B {
            if self.elapsed_table.is_none() {
                return Err(Error::State(
                    "detail-B response embedding requested from detail-A tables".into(),
                ));
            }
            if category > self.sizes.num_categories {
                return Err(Error::Validation(format!("category {category} outside vocabulary")));
            }
            rows.category = Some(category);
            rows.elapsed = Some(bucket_elapsed(r.elapsed_seconds)?);
            let c = r.received;
            rows.timestamp = Some(bucket_timestamp(c.month, c.day, c.hour)?);
        }
        Ok(rows)
    }

    /// Exercise attributes + response attributes with a single position row.
    pub fn interaction_rows(&self, x: &Interaction, position: usize) -> Result<SlotRows> {
        let ex = self.exercise_rows(&x.exercise, position)?;
        let resp = self.response_rows(&x.response, x.exercise.category_id, position, self.sizes.detail)?;
        Ok(SlotRows {
            response: resp.response,
            elapsed: resp.elapsed,
            timestamp: resp.timestamp,
            ..ex
        })
    }

    fn table_ids(&self) -> [(Option<ParamId>, fn(&SlotRows) -> Option<usize>); 7] {
        [
            (Some(self.exercise_id_table), |s| s.exercise),
            (Some(self.category_table), |s| s.category),
            (Some(self.position_table), |s| s.position),
            (Some(self.response_table), |s| s.response),
            (self.elapsed_table, |s| s.elapsed),
            (self.timestamp_table, |s| s.timestamp),
            (Some(self.start_token), |s| s.start.then_some(0)),
        ]
    }

    /// Plain `[slots × d_model]` rendering.
    pub fn render(&self, store: &ParamStore, slots: &[SlotRows]) -> Result<Tensor> {
        let d = self.sizes.d_model;
        let mut out = Tensor::zeros(&[slots.len().max(1), d]);
        for (id, pick) in self.table_ids() {
            for (i, s) in slots.iter().enumerate() {
                if let Some(row) = pick(s) {
                    let id = id.ok_or_else(|| Error::State("slot references a missing table".into()))?;
                    let t = store.get(id);
                    let src = t.row_slice(row).to_vec();
                    out.row_slice_mut(i).iter_mut().zip(src).for_each(|(x, y)| *x += y);
                }
            }
        }
        Ok(out)
    }

    /// Graph rendering: one gather per table over all slots, then a sum.
    pub fn render_graph(&self, graph: &mut Graph, bound: &Bound, slots: &[SlotRows]) -> Result<Var> {
        let mut terms = Vec::new();
        for (id, pick) in self.table_ids() {
            let indices: Vec<Option<usize>> = slots.iter().map(pick).collect();
            if indices.iter().all(Option::is_none) {
                continue;
            }
            let id = id.ok_or_else(|| Error::State("slot references a missing table".into()))?;
            terms.push(graph.gather(bound.var(id), indices)?);
        }
        if terms.is_empty() {
            return Ok(graph.constant(Tensor::zeros(&[slots.len(), self.sizes.d_model])));
        }
        graph.add_all(&terms)
    }

    pub fn embed_exercise(&self, store: &ParamStore, e: &ExerciseInfo, position: usize) -> Result<Vec<f64>> {
        let rows = self.exercise_rows(e, position)?;
        Ok(self.render(store, &[rows])?.into_data())
    }

    pub fn embed_response(
        &self,
        store: &ParamStore,
        r: &ResponseInfo,
        category: usize,
        position: usize,
        detail: EmbeddingDetail,
    ) -> Result<Vec<f64>> {
        let rows = self.response_rows(r, category, position, detail)?;
        Ok(self.render(store, &[rows])?.into_data())
    }

    /// `[E_1 .. E_k]` for a window of `k` interactions (the last one being the
    /// target, whose response is never read).
    pub fn exercise_stream(&self, window: &[Interaction]) -> Result<Vec<SlotRows>> {
        self.check_len(window.len())?;
        window
            .iter()
            .enumerate()
            .map(|(t, x)| self.exercise_rows(&x.exercise, t))
            .collect()
    }

    /// `[S, R_1 .. R_{k-1}]`: responses delayed one slot behind the start
    /// token. Slot `t` carries the position row of `t`.
    pub fn response_stream(&self, window: &[Interaction]) -> Result<Vec<SlotRows>> {
        self.check_len(window.len())?;
        let mut slots = vec![SlotRows::start_token()];
        for t in 1..window.len() {
            let prev = &window[t - 1];
            slots.push(self.response_rows(
                &prev.response,
                prev.exercise.category_id,
                t,
                self.sizes.detail,
            )?);
        }
        Ok(slots)
    }

    /// `[S, I_1 .. I_{k-1}]`, delayed like the response stream.
    pub fn interaction_stream(&self, window: &[Interaction]) -> Result<Vec<SlotRows>> {
        self.check_len(window.len())?;
        let mut slots = vec![SlotRows::start_token()];
        for t in 1..window.len() {
            slots.push(self.interaction_rows(&window[t - 1], t)?);
        }
        Ok(slots)
    }

    /// `[S, I_{k-1}, I_{k-2}, .., I_1]`: most recent interaction first. Slot
    /// `i` carries the position row of `i`.
    pub fn reversed_interaction_stream(&self, window: &[Interaction]) -> Result<Vec<SlotRows>> {
        self.check_len(window.len())?;
        let k = window.len();
        let mut slots = vec![SlotRows::start_token()];
        for i in 1..k {
            slots.push(self.interaction_rows(&window[k - 1 - i], i)?);
        }
        Ok(slots)
    }

    /// `k` copies of the target exercise embedding `E_k`.
    pub fn constant_query_stream(&self, window: &[Interaction]) -> Result<Vec<SlotRows>> {
        self.check_len(window.len())?;
        let k = window.len();
        let rows = self.exercise_rows(&window[k - 1].exercise, k - 1)?;
        Ok(vec![rows; k])
    }

    fn check_len(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Validation("empty sequence".into()));
        }
        if k > self.sizes.window {
            return Err(Error::Window {
                len: k,
                window: self.sizes.window,
            });
        }
        Ok(())
    }
}

/// `(E^e, R^e)` for predicting `target` after `history`, as `[k × d_model]`
/// tensors with `k = history.len() + 1`.
pub fn build_sequences(
    history: &[Interaction],
    target: &ExerciseInfo,
    tables: &EmbeddingTables,
    store: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    let mut window = history.to_vec();
    window.push(Interaction::query(*target));
    let e = tables.exercise_stream(&window)?;
    let r = tables.response_stream(&window)?;
    Ok((tables.render(store, &e)?, tables.render(store, &r)?))
}
