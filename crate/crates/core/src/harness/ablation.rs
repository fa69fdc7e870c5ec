use super::{run_experiment, EvalResult, EvalScope};
use crate::ingest::Split;
use crate::learn::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub model: String,
    pub quantile: f64,
    pub result: EvalResult,
}

/// Test metrics per staleness quantile, laid out as
/// `model, quantile, AUC, precision` with precision read as average precision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const HEADER: [&str; 4] = ["model", "quantile", "AUC", "precision"];

impl AblationTable {
    fn cells(&self, digits: Option<usize>) -> Vec<[String; 4]> {
        let fmt = |v: f64| match digits {
            Some(d) => format!("{v:.d$}"),
            None => format!("{v}"),
        };
        self.rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    format!("{}", r.quantile),
                    fmt(r.result.auc),
                    fmt(r.result.average_precision),
                ]
            })
            .collect()
    }

    /// Column-aligned text with three decimals.
    pub fn render_text(&self) -> String {
        let cells = self.cells(Some(3));
        let mut widths = HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: [&str; 4]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("{}\n", parts.join("  ").trim_end())
        };
        let mut out = line(HEADER);
        for row in &cells {
            out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
        }
        out
    }

    /// Comma-separated values at full precision.
    pub fn render_csv(&self) -> String {
        let mut out = format!("{}\n", HEADER.join(","));
        for row in self.cells(None) {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates one staleness-augmented model per quantile `q`
/// (`alpha = 1 - q`), every run sharing the seeds of `base`.
pub fn run_ablation(
    split: &Split,
    base: &ModelConfig,
    quantiles: &[f64],
    scope: EvalScope,
    eval_seed: u64,
) -> Result<AblationTable> {
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::Config(format!("quantile {q} not in (0, 1)")));
    }
    let mut rows = Vec::with_capacity(quantiles.len());
    for &q in quantiles {
        let mut cfg = base.clone();
        cfg.staleness.enabled = true;
        cfg.staleness.alpha = 1.0 - q;
        let (_, result) = run_experiment(cfg, split, scope, eval_seed)?;
        rows.push(AblationRow {
            model: result.model_tag.label().to_string(),
            quantile: q,
            result,
        });
    }
    Ok(AblationTable { rows })
}
