//! Metrics, checkpoint evaluation and attention export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::ForwardContext;
use crate::data::{Dataset, Split, WindowedExample};
use crate::error::{Error, Result};
use crate::interaction::Interaction;
use crate::model::{Architecture, AttentionStream, Checkpoint, Model, SeqInput};
use crate::numerics::{Graph, Tensor};
use crate::training::{examples_for, plan_batch};

/// A predicted probability and its 0/1 label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: f64,
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs with the positive scored higher, ties counting
/// one half.
pub fn auc(examples: &[ScoredExample]) -> Result<f64> {
    let positives = examples.iter().filter(|e| e.label > 0.5).count();
    let negatives = examples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].score == sorted[i].score {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = sorted[i..=j].iter().filter(|e| e.label > 0.5).count();
        rank_sum += midrank * pos_in_tie as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of examples where `score >= threshold` agrees with the label.
pub fn acc(examples: &[ScoredExample], threshold: f64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of no examples".into()));
    }
    let correct = examples
        .iter()
        .filter(|e| (e.score >= threshold) == (e.label > 0.5))
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Eval-mode predictions for every target of every example, in order.
pub fn score_examples(model: &Model, examples: &[WindowedExample], batch_size: usize) -> Result<Vec<ScoredExample>> {
    let mut out = Vec::new();
    let refs: Vec<&WindowedExample> = examples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let plan = plan_batch(model.config().architecture, chunk, false);
        let mut g = Graph::new();
        let bound = model.params().bind_frozen(&mut g);
        let fwd = model.forward(&mut g, &bound, &plan.inputs, &mut ForwardContext::eval())?;
        let probs = g.value(fwd.probs).data();
        out.extend(plan.scored.iter().map(|&(row, label)| ScoredExample {
            score: probs[row],
            label,
        }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub auc: f64,
    pub acc: f64,
    pub n: usize,
    pub checkpoint_hash: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

/// Fails unless `dataset` was densified with the checkpoint's vocabulary.
pub fn check_compatible(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<()> {
    if checkpoint.vocabulary != dataset.vocabulary {
        return Err(Error::Compatibility(format!(
            "checkpoint vocabulary ({} exercises, {} categories) differs from dataset vocabulary ({} exercises, {} categories)",
            checkpoint.vocabulary.num_exercises(),
            checkpoint.vocabulary.num_categories(),
            dataset.vocabulary.num_exercises(),
            dataset.vocabulary.num_categories()
        )));
    }
    Ok(())
}

/// Scores every target of `split` (as defined by the checkpoint's own split
/// settings) and aggregates AUC and ACC.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, split: Split) -> Result<MetricsReport> {
    check_compatible(checkpoint, dataset)?;
    let config = checkpoint
        .train_config
        .as_ref()
        .ok_or_else(|| Error::State("checkpoint carries no training configuration".into()))?;
    let splits = config.split(dataset)?;
    let examples = examples_for(dataset, splits.get(split), config.window, config.stride)?;
    if examples.is_empty() {
        return Err(Error::Validation(format!("split {split} is empty")));
    }
    let scored = score_examples(&checkpoint.model, &examples, config.batch_size)?;
    Ok(MetricsReport {
        split,
        auc: auc(&scored)?,
        acc: acc(&scored, 0.5)?,
        n: scored.len(),
        checkpoint_hash: checkpoint.hash()?,
    })
}

/// Attention weights of one head of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub architecture: Architecture,
    pub layer: usize,
    pub stream: AttentionStream,
    pub head: usize,
    pub matrix: Tensor,
}

impl AttentionDump {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.layer, self.stream.name(), self.head)
    }
}

/// Every attention matrix of one eval-mode pass over `sequence` (the last
/// interaction being the target).
pub fn attention_dumps(model: &Model, sequence: &[Interaction]) -> Result<Vec<AttentionDump>> {
    let mut g = Graph::new();
    let bound = model.params().bind_frozen(&mut g);
    let out = model.forward(&mut g, &bound, &[SeqInput::new(sequence)], &mut ForwardContext::eval())?;
    let mut dumps = Vec::new();
    for entry in &out.trace {
        for (head, &w) in entry.weights[0].iter().enumerate() {
            dumps.push(AttentionDump {
                architecture: model.config().architecture,
                layer: entry.layer,
                stream: entry.stream,
                head,
                matrix: g.value(w).clone(),
            });
        }
    }
    Ok(dumps)
}

#[derive(Serialize)]
struct DumpEntry {
    file: String,
    layer: usize,
    stream: &'static str,
    head: usize,
    rows: usize,
    cols: usize,
}

#[derive(Serialize)]
struct ExportManifest<'a> {
    architecture: Architecture,
    layers: usize,
    heads: usize,
    sequence: &'a [Interaction],
    dumps: Vec<DumpEntry>,
}

/// Writes `<layer>_<stream>_<head>.csv` for every dump plus `manifest.json`
/// into `dir`.
pub fn export_attention(checkpoint: &Checkpoint, sequence: &[Interaction], dir: impl AsRef<Path>) -> Result<Vec<AttentionDump>> {
    let dir = dir.as_ref();
    let model = &checkpoint.model;
    let dumps = attention_dumps(model, sequence)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dumps.len());
    for d in &dumps {
        let path = dir.join(d.file_name());
        let mut text = String::new();
        for r in 0..d.matrix.rows() {
            let row: Vec<String> = d.matrix.row_slice(r).iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        entries.push(DumpEntry {
            file: d.file_name(),
            layer: d.layer,
            stream: d.stream.name(),
            head: d.head,
            rows: d.matrix.rows(),
            cols: d.matrix.cols(),
        });
    }
    let manifest = ExportManifest {
        architecture: model.config().architecture,
        layers: model.config().layers,
        heads: model.config().heads,
        sequence,
        dumps: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(dumps)
}
