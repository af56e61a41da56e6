//! Per-layer skip statistics over a sampling run.

use std::fmt::Write as _;

use super::gate::GateDecision;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSkip {
    pub layer: usize,
    /// Share of decisions with a closed hard gate, in percent.
    pub skip_percent: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipReport {
    pub layers: Vec<LayerSkip>,
}

impl SkipReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_index,skip_percent,samples\n");
        for l in &self.layers {
            writeln!(out, "{},{},{}", l.layer, l.skip_percent, l.samples).expect("string write");
        }
        out
    }
}

/// One row per gated layer `0..num_layers`. Layers absent from the trace
/// report zero samples and zero percent.
pub fn collect_skip_stats(trace: &[GateDecision], num_layers: usize) -> Result<SkipReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let needed = trace.iter().map(|d| d.layer + 1).max().unwrap_or(0).max(num_layers);
    let mut skipped = vec![0usize; needed];
    let mut samples = vec![0usize; needed];
    for d in trace {
        samples[d.layer] += 1;
        if d.skipped() {
            skipped[d.layer] += 1;
        }
    }
    let layers = (0..needed)
        .map(|i| LayerSkip {
            layer: i,
            skip_percent: if samples[i] == 0 {
                0.0
            } else {
                100.0 * skipped[i] as f64 / samples[i] as f64
            },
            samples: samples[i],
        })
        .collect();
    Ok(SkipReport { layers })
}
