//! Turning windowed examples into model inputs, loss targets and scored rows.

use crate::data::WindowedExample;
use crate::model::{Architecture, SeqInput};

/// Inputs for one forward pass plus per-row supervision.
///
/// `targets` and `weights` have one entry per output row. `scored` lists the
/// `(row, label)` pairs that count as predictions for metrics.
#[derive(Clone, Debug)]
pub struct BatchPlan<'a> {
    pub inputs: Vec<SeqInput<'a>>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub scored: Vec<(usize, f64)>,
}

impl BatchPlan<'_> {
    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn num_targets(&self) -> usize {
        self.scored.len()
    }
}

/// Window-wide architectures score every target row of one pass. LTMTI runs
/// one pass per target over the history prefix ending at it, and its loss
/// averages all candidate rows of that pass against the single label.
///
/// With `keep_padding` the left padding of each example is fed to the model
/// (and masked); otherwise it is dropped.
pub fn plan_batch<'a>(
    architecture: Architecture,
    examples: &[&'a WindowedExample],
    keep_padding: bool,
) -> BatchPlan<'a> {
    let mut plan = BatchPlan {
        inputs: Vec::new(),
        targets: Vec::new(),
        weights: Vec::new(),
        scored: Vec::new(),
    };
    for ex in examples {
        let label = |t: usize| ex.interactions[t].response.label();
        if architecture.predicts_every_position() {
            let pad = if keep_padding { ex.pad } else { 0 };
            plan.inputs.push(SeqInput {
                interactions: &ex.interactions,
                pad,
            });
            let base = plan.targets.len();
            plan.targets.extend(std::iter::repeat(0.0).take(pad));
            plan.weights.extend(std::iter::repeat(0.0).take(pad));
            for t in 0..ex.interactions.len() {
                let is_target = t >= ex.first_target;
                plan.targets.push(label(t));
                plan.weights.push(if is_target { 1.0 } else { 0.0 });
                if is_target {
                    plan.scored.push((base + pad + t, label(t)));
                }
            }
        } else {
            for t in ex.targets() {
                let prefix = &ex.interactions[..=t];
                let pad = if keep_padding {
                    ex.pad + ex.interactions.len() - prefix.len()
                } else {
                    0
                };
                plan.inputs.push(SeqInput {
                    interactions: prefix,
                    pad,
                });
                plan.targets.extend(std::iter::repeat(0.0).take(pad));
                plan.weights.extend(std::iter::repeat(0.0).take(pad));
                let w = 1.0 / prefix.len() as f64;
                plan.targets.extend(std::iter::repeat(label(t)).take(prefix.len()));
                plan.weights.extend(std::iter::repeat(w).take(prefix.len()));
                plan.scored.push((plan.targets.len() - 1, label(t)));
            }
        }
    }
    plan
}
