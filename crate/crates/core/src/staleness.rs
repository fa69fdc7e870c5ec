//! Batch-relative staleness: event-time gaps, their empirical quantile and the
//! set of nodes at or beyond it.

use std::collections::{BTreeMap, BTreeSet};

use crate::ingest::Event;
use crate::memory::MemoryTable;
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StalenessScope {
    SourcesOnly,
    AllEndpoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessConfig {
    /// Fraction of the batch treated as stale; the threshold is the
    /// `1 - alpha` quantile.
    pub alpha: f64,
    pub scope: StalenessScope,
    pub enabled: bool,
}

impl Default for StalenessConfig {
    fn default() -> Self {
        StalenessConfig {
            alpha: 0.025,
            scope: StalenessScope::SourcesOnly,
            enabled: true,
        }
    }
}

impl StalenessConfig {
    pub fn quantile(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StalenessReport {
    pub deltas: BTreeMap<NodeId, f64>,
    /// `None` when no node in scope had history.
    pub threshold: Option<f64>,
    pub stale_set: BTreeSet<NodeId>,
}

impl StalenessReport {
    pub fn is_stale(&self, node: NodeId) -> bool {
        self.stale_set.contains(&node)
    }

    /// One debug-log line: batch index, number of gaps, threshold, stale count.
    pub fn log_line(&self, batch: usize) -> String {
        let th = self
            .threshold
            .map(|t| format!("{t}"))
            .unwrap_or_else(|| "none".into());
        format!(
            "batch={batch} n={} threshold={th} stale={}",
            self.deltas.len(),
            self.stale_set.len()
        )
    }
}

/// For each distinct in-scope node of the batch with history, the time from
/// its last memory update to its first event in the batch.
pub fn event_time_deltas(
    batch: &[Event],
    mem: &MemoryTable,
    cfg: &StalenessConfig,
) -> Result<BTreeMap<NodeId, f64>> {
    let mut deltas = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for e in batch {
        let endpoints: &[NodeId] = match cfg.scope {
            StalenessScope::SourcesOnly => &[e.source],
            StalenessScope::AllEndpoints => &[e.source, e.destination],
        };
        for &node in endpoints {
            if !seen.insert(node) || !mem.is_initialized(node) {
                continue;
            }
            let dt = e.timestamp - mem.last_update(node);
            if dt < 0.0 {
                return Err(Error::Ordering(format!(
                    "node {node} last updated at {} after batch event at {}",
                    mem.last_update(node),
                    e.timestamp
                )));
            }
            deltas.insert(node, dt);
        }
    }
    Ok(deltas)
}

/// Number of order statistics below the `p` quantile, `ceil(p * n)`, with
/// products that are integral up to rounding snapped to that integer.
fn quantile_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() <= 1e-9 * n.max(1) as f64 {
        r
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Empirical quantile `inf { t : F(t) >= p }`: the order statistic of rank
/// `ceil(p * n)`, no interpolation.
pub fn quantile_threshold(deltas: &[f64], p: f64) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::Threshold("no event-time gaps in batch".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Threshold(format!("quantile {p} not in (0, 1)")));
    }
    if deltas.iter().any(|d| d.is_nan()) {
        return Err(Error::Threshold("NaN event-time gap".into()));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(p, sorted.len()) - 1])
}

/// Nodes whose gap is at least `threshold`.
pub fn stale_nodes(deltas: &BTreeMap<NodeId, f64>, threshold: f64) -> BTreeSet<NodeId> {
    deltas
        .iter()
        .filter(|(_, &d)| d >= threshold)
        .map(|(&n, _)| n)
        .collect()
}

/// Gaps, threshold and stale set for one batch against pre-batch memory.
pub fn staleness_report(
    batch: &[Event],
    mem: &MemoryTable,
    cfg: &StalenessConfig,
) -> Result<StalenessReport> {
    if !cfg.enabled {
        return Ok(StalenessReport::default());
    }
    let deltas = event_time_deltas(batch, mem, cfg)?;
    if deltas.is_empty() {
        return Ok(StalenessReport {
            deltas,
            ..StalenessReport::default()
        });
    }
    let values: Vec<f64> = deltas.values().copied().collect();
    let threshold = quantile_threshold(&values, cfg.quantile())?;
    let stale_set = stale_nodes(&deltas, threshold);
    Ok(StalenessReport {
        deltas,
        threshold: Some(threshold),
        stale_set,
    })
}
