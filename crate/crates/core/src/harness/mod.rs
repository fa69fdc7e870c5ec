//! Metrics, evaluation, ablation tables, configuration and checkpoints.

mod ablation;
mod checkpoint;
pub mod config;
mod metrics;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use metrics::{average_precision, precision_at_half, roc_auc};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{batch_iter, Event, EventStream, Split};
use crate::learn::{sample_negatives, EpochStats, Model, ModelConfig, StreamState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalScope {
    /// Events between nodes seen in training.
    Transductive,
    /// Events touching a node withheld from training.
    Inductive,
    Combined,
}

impl EvalScope {
    pub fn name(self) -> &'static str {
        match self {
            EvalScope::Transductive => "transductive",
            EvalScope::Inductive => "inductive",
            EvalScope::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Baseline,
    BallTree,
    BruteForce,
}

impl ModelTag {
    pub fn of(cfg: &ModelConfig) -> Self {
        match config::backend_name(cfg) {
            "ball_tree" => ModelTag::BallTree,
            "brute_force" => ModelTag::BruteForce,
            _ => ModelTag::Baseline,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelTag::Baseline => "TGN",
            ModelTag::BallTree => "Ball-Tree",
            ModelTag::BruteForce => "Brute-force",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub average_precision: f64,
    pub precision_at_half: f64,
    pub scope: EvalScope,
    pub model_tag: ModelTag,
    /// Staleness quantile `1 - alpha`; `None` for the baseline.
    pub quantile: Option<f64>,
    /// Scored positive events.
    pub events: usize,
}

impl EvalResult {
    pub fn summary(&self) -> String {
        let q = self
            .quantile
            .map(|q| format!("{q}"))
            .unwrap_or_else(|| "-".into());
        format!(
            "model={} quantile={q} scope={} events={} auc={:.4} ap={:.4} precision@0.5={:.4}",
            self.model_tag.label(),
            self.scope.name(),
            self.events,
            self.auc,
            self.average_precision,
            self.precision_at_half
        )
    }
}

/// Link scores of a replayed stream: one positive and one negative per event,
/// each tagged with whether its event is inductive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredEvents {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub inductive: Vec<bool>,
}

impl ScoredEvents {
    pub fn result(&self, scope: EvalScope, cfg: &ModelConfig) -> Result<EvalResult> {
        let keep = |i: usize| match scope {
            EvalScope::Transductive => !self.inductive[i],
            EvalScope::Inductive => self.inductive[i],
            EvalScope::Combined => true,
        };
        let idx: Vec<usize> = (0..self.scores.len()).filter(|&i| keep(i)).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| self.scores[i]).collect();
        let labels: Vec<bool> = idx.iter().map(|&i| self.labels[i]).collect();
        let events = labels.iter().filter(|&&l| l).count();
        if events == 0 {
            return Err(Error::Metric(format!(
                "insufficient events in {} scope",
                scope.name()
            )));
        }
        let tag = ModelTag::of(cfg);
        Ok(EvalResult {
            auc: roc_auc(&scores, &labels)?,
            average_precision: average_precision(&scores, &labels)?,
            precision_at_half: precision_at_half(&scores, &labels)?,
            scope,
            model_tag: tag,
            quantile: (tag != ModelTag::Baseline).then(|| cfg.staleness.quantile()),
            events,
        })
    }
}

/// Random stream for evaluation negatives, independent of training draws.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// Scores `stream` batch by batch with frozen parameters, advancing `state`.
pub fn score_stream(
    model: &Model,
    state: &mut StreamState,
    stream: &EventStream,
    is_inductive: impl Fn(&Event) -> bool,
    seed: u64,
) -> Result<ScoredEvents> {
    let mut rng = eval_rng(seed);
    let mut out = ScoredEvents::default();
    for batch in batch_iter(stream, model.config.train.batch_size) {
        let negatives = sample_negatives(batch, model.config.destinations.clone(), 1, &mut rng);
        let scored = model.eval_batch(state, batch, &negatives)?;
        for (i, e) in batch.iter().enumerate() {
            let ind = is_inductive(e);
            out.scores.extend([scored.positive[i], scored.negative[i]]);
            out.labels.extend([true, false]);
            out.inductive.extend([ind, ind]);
        }
    }
    Ok(out)
}

/// Scores `stream` and reports metrics for `scope`.
pub fn evaluate(
    model: &Model,
    state: &mut StreamState,
    stream: &EventStream,
    split: &Split,
    scope: EvalScope,
    seed: u64,
) -> Result<EvalResult> {
    score_stream(model, state, stream, |e| split.is_inductive(e), seed)?
        .result(scope, &model.config)
}

/// A trained model with the stream state left by its last epoch.
pub struct Experiment {
    pub model: Model,
    pub state: StreamState,
    pub history: Vec<EpochStats>,
}

impl Experiment {
    /// Trains for `config.train.epochs` epochs on the training range.
    pub fn train(
        config: ModelConfig,
        split: &Split,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Self> {
        let mut model = Model::new(config)?;
        let mut state = model.new_state();
        let mut history = Vec::new();
        for epoch in 1..=model.config.train.epochs {
            let stats = model.train_epoch(&split.train, &mut state, epoch)?;
            on_epoch(&stats);
            history.push(stats);
        }
        Ok(Experiment {
            model,
            state,
            history,
        })
    }

    /// Replays `stream` into memory and adjacency with frozen parameters.
    pub fn advance(&mut self, stream: &EventStream) -> Result<()> {
        for batch in batch_iter(stream, self.model.config.train.batch_size) {
            self.model.commit_batch(&mut self.state, batch)?;
        }
        Ok(())
    }

    /// Replays validation, then scores the test range.
    pub fn score_test(&mut self, split: &Split, seed: u64) -> Result<ScoredEvents> {
        self.advance(&split.val)?;
        score_stream(
            &self.model,
            &mut self.state,
            &split.test,
            |e| split.is_inductive(e),
            seed,
        )
    }
}

/// Trains `config` and returns test-range metrics for `scope`.
pub fn run_experiment(
    config: ModelConfig,
    split: &Split,
    scope: EvalScope,
    eval_seed: u64,
) -> Result<(Experiment, EvalResult)> {
    let mut exp = Experiment::train(config, split, |_| {})?;
    let result = exp
        .score_test(split, eval_seed)?
        .result(scope, &exp.model.config)?;
    Ok((exp, result))
}
