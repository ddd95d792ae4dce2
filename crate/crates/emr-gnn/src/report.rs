//! Run reports: a sectioned plain-text summary of a training run with a
//! stable section and key order. Everything except the `[timing]`
//! section is a pure function of the config and dataset, so two runs of
//! the same configuration produce byte-identical reports once timing is
//! stripped.

use std::fmt::Write as _;

use crate::coefficients::CoefficientVector;
use crate::model::{EpochRecord, Metrics};

/// Data for the `[result]` section.
#[derive(Debug, Clone)]
pub struct ResultSummary {
    pub best_epoch: usize,
    pub test: Metrics,
    pub parameter_count: usize,
    /// Parameter count of an RGCN-style alternative with one basis per
    /// relation and per-layer weights at the same hidden width.
    pub rgcn_style_parameter_count: usize,
}

/// A full run report; [`RunReport::render`] is the on-disk format.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Canonical config text (the `[data]`/`[hyper]`/`[train]` sections).
    pub config_text: String,
    pub dataset_name: String,
    pub epochs: Vec<EpochRecord>,
    pub result: ResultSummary,
    /// Per-layer coefficients of the final model's propagation; empty
    /// for stack propagation.
    pub coefficients: Vec<CoefficientVector>,
    /// `(label, seconds)` pairs; the only nondeterministic section.
    pub timing: Vec<(String, f64)>,
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# emr run report: {}", self.dataset_name);
        let _ = writeln!(out);
        out.push_str(self.config_text.trim_end());
        let _ = writeln!(out);
        let _ = writeln!(out);
        let _ = writeln!(out, "[epochs]");
        let _ = writeln!(out, "epoch,train_loss,val_accuracy,val_macro_recall,val_loss");
        for record in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                record.epoch,
                record.train_loss,
                record.val.accuracy,
                record.val.macro_recall,
                record.val.loss
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "[result]");
        let _ = writeln!(out, "best_epoch = {}", self.result.best_epoch);
        let _ = writeln!(out, "test_accuracy = {:.6}", self.result.test.accuracy);
        let _ = writeln!(out, "test_macro_recall = {:.6}", self.result.test.macro_recall);
        let _ = writeln!(out, "test_loss = {:.6}", self.result.test.loss);
        let _ = writeln!(out, "parameter_count = {}", self.result.parameter_count);
        let _ = writeln!(
            out,
            "rgcn_style_parameter_count = {}",
            self.result.rgcn_style_parameter_count
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "[coefficients]");
        for (layer, mu) in self.coefficients.iter().enumerate() {
            let _ = writeln!(out, "layer_{} = {}", layer + 1, format_weights(mu));
        }
        if let Some(mean) = mean_coefficients(&self.coefficients) {
            let _ = writeln!(out, "mean = {}", format_weights(&mean));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "[timing]");
        for (label, seconds) in &self.timing {
            let _ = writeln!(out, "{label}_seconds = {seconds:.3}");
        }
        out
    }
}

fn format_weights(mu: &CoefficientVector) -> String {
    mu.as_slice()
        .iter()
        .map(|w| format!("{w:.6}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn mean_coefficients(per_layer: &[CoefficientVector]) -> Option<CoefficientVector> {
    if per_layer.is_empty() {
        return None;
    }
    let r = per_layer[0].len();
    let mut acc = vec![0.0; r];
    for mu in per_layer {
        for (a, &w) in acc.iter_mut().zip(mu.as_slice()) {
            *a += w / per_layer.len() as f64;
        }
    }
    CoefficientVector::new(acc).ok()
}

/// Drop the `[timing]` section; the remainder is deterministic for a
/// fixed config and dataset.
pub fn strip_timing(report: &str) -> String {
    let mut out = String::new();
    let mut in_timing = false;
    for line in report.lines() {
        if line.trim() == "[timing]" {
            in_timing = true;
            continue;
        }
        if in_timing {
            if line.trim().starts_with('[') {
                in_timing = false;
            } else {
                continue;
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}
