use std::ops::Range;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    decoder_logits, sample_negatives, Adam, AdamConfig, DecoderParams, ParameterStore, Tape,
    Tensor, Var,
};
use crate::embedding::{
    embed_batch, reference_times, BatchEmbeddings, EmbedContext, EmbeddingConfig, EmbeddingParams,
    MemorySource, TimeEncoder,
};
use crate::ingest::{batch_iter, Event, EventStream};
use crate::memory::{
    aggregate_messages, apply_messages, compute_messages, replay_updates, GruParams, MemoryTable,
    PendingUpdate,
};
use crate::similarity::{collect_candidates, SimilarityConfig, SimilarityIndex};
use crate::staleness::{staleness_report, StalenessConfig, StalenessReport};
use crate::temporal::TemporalAdjacency;
use crate::{Error, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            negatives: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Every setting that shapes a model, including the graph it runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_memory: usize,
    pub d_time: usize,
    pub d_edge: usize,
    pub num_nodes: usize,
    pub destinations: Range<NodeId>,
    pub embedding: EmbeddingConfig,
    pub staleness: StalenessConfig,
    pub similarity: SimilarityConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Defaults sized for `stream`.
    pub fn for_stream(stream: &EventStream) -> Self {
        ModelConfig {
            d_memory: 32,
            d_time: 16,
            d_edge: stream.d_edge,
            num_nodes: stream.num_nodes(),
            destinations: stream.destination_range(),
            embedding: EmbeddingConfig::default(),
            staleness: StalenessConfig::default(),
            similarity: SimilarityConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_memory == 0 || self.d_time == 0 {
            return Err(Error::Config("d_memory and d_time must be positive".into()));
        }
        if self.destinations.len() < 2 || self.destinations.end > self.num_nodes {
            return Err(Error::Config(format!(
                "destination range {:?} invalid for {} nodes",
                self.destinations, self.num_nodes
            )));
        }
        self.embedding.validate()?;
        self.staleness.validate()?;
        self.similarity.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gru: GruParams,
    pub embedding: EmbeddingParams,
    pub decoder: DecoderParams,
}

impl ModelParams {
    pub fn time(&self) -> &TimeEncoder {
        &self.embedding.time
    }
}

/// Everything that evolves while a stream is replayed.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub memory: MemoryTable,
    pub adjacency: TemporalAdjacency,
    /// Memory writes of the last committed batch, replayed on the next tape.
    pub pending: Vec<PendingUpdate>,
    pub index: Option<SimilarityIndex>,
    /// Batches since `index` was built.
    pub index_age: usize,
}

impl StreamState {
    pub fn new(num_nodes: usize, d_memory: usize) -> Self {
        StreamState {
            memory: MemoryTable::new(num_nodes, d_memory),
            adjacency: TemporalAdjacency::new(num_nodes),
            pending: Vec::new(),
            index: None,
            index_age: 0,
        }
    }

    /// Rebuilds the similarity index over current memory when it is missing or
    /// `cfg.rebuild_every` batches old.
    fn refresh_index(&mut self, cfg: &SimilarityConfig) {
        if self.index.is_none() || self.index_age >= cfg.rebuild_every {
            self.index = Some(SimilarityIndex::build(
                collect_candidates(&self.memory),
                cfg,
            ));
            self.index_age = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub report: StalenessReport,
    pub augmented: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub stale_count: usize,
    pub stale_fraction: f64,
    pub wall_seconds: f64,
}

impl EpochStats {
    pub fn record(&self) -> String {
        format!(
            "epoch={} mean_loss={:.6} stale_fraction={:.6} wall_seconds={:.3}",
            self.epoch, self.mean_loss, self.stale_fraction, self.wall_seconds
        )
    }
}

/// Scores of one evaluated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub report: StalenessReport,
}

struct Forward {
    loss: Var,
    logits: Var,
    embeddings: BatchEmbeddings,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub params: ModelParams,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Per-batch staleness log lines are written to stderr when set.
    pub log_staleness: bool,
    pub batches_seen: usize,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParameterStore::new();
        let time = TimeEncoder::init(&mut store, config.d_time)?;
        let input_dim = 2 * config.d_memory + config.d_time + config.d_edge;
        let gru = GruParams::init(&mut store, input_dim, config.d_memory, &mut init_rng)?;
        let embedding = EmbeddingParams::init(
            &mut store,
            time,
            config.d_memory,
            config.d_edge,
            &config.embedding,
            &mut init_rng,
        )?;
        let decoder = DecoderParams::init(&mut store, config.embedding.d_emb, &mut init_rng)?;
        let adam = Adam::new(config.train.adam(), &store);
        let rng = Self::sampling_rng(config.train.seed);
        Ok(Model {
            config,
            store,
            params: ModelParams {
                gru,
                embedding,
                decoder,
            },
            adam,
            rng,
            log_staleness: false,
            batches_seen: 0,
        })
    }

    /// Rebuilds a model around existing parameter values.
    pub fn from_parts(
        config: ModelConfig,
        store: ParameterStore,
        adam: Adam,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let gru = GruParams::lookup(&store)?;
        let embedding =
            EmbeddingParams::lookup(&store, config.d_memory, config.d_edge, &config.embedding)?;
        let decoder = DecoderParams::lookup(&store, config.embedding.d_emb)?;
        if adam.first.len() != store.len() {
            return Err(Error::Config(
                "optimizer state does not match parameters".into(),
            ));
        }
        Ok(Model {
            config,
            store,
            params: ModelParams {
                gru,
                embedding,
                decoder,
            },
            adam,
            rng,
            log_staleness: false,
            batches_seen: 0,
        })
    }

    pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        rng
    }

    pub fn new_state(&self) -> StreamState {
        StreamState::new(self.config.num_nodes, self.config.d_memory)
    }

    fn check_batch(&self, batch: &[Event]) -> Result<()> {
        for e in batch {
            if e.source >= self.config.num_nodes || e.destination >= self.config.num_nodes {
                return Err(Error::Config(format!(
                    "event {} references node outside 0..{}",
                    e.event_id, self.config.num_nodes
                )));
            }
        }
        Ok(())
    }

    /// Staleness report of `batch`; refreshes the similarity index when some
    /// node is stale and reports whether it should be used.
    fn prepare(&self, state: &mut StreamState, batch: &[Event]) -> Result<(StalenessReport, bool)> {
        let report = staleness_report(batch, &state.memory, &self.config.staleness)?;
        if state.index.is_some() {
            state.index_age += 1;
        }
        if report.stale_set.is_empty() {
            return Ok((report, false));
        }
        state.refresh_index(&self.config.similarity);
        Ok((report, true))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        state: &StreamState,
        batch: &[Event],
        negatives: &[NodeId],
        report: &StalenessReport,
        index: Option<&SimilarityIndex>,
        replay: bool,
    ) -> Forward {
        let per = negatives.len() / batch.len().max(1);
        assert_eq!(
            per * batch.len(),
            negatives.len(),
            "same number of negatives per event"
        );
        let memory = if replay && !state.pending.is_empty() {
            let rows = replay_updates(tape, store, &self.params.gru, &state.pending);
            let nodes: Vec<NodeId> = state.pending.iter().map(|u| u.node).collect();
            MemorySource::with_replay(&state.memory, rows, &nodes)
        } else {
            MemorySource::stored(&state.memory)
        };
        let ctx = EmbedContext {
            store,
            params: &self.params.embedding,
            cfg: &self.config.embedding,
            adjacency: &state.adjacency,
            memory,
        };
        let queries = reference_times(batch, negatives, per);
        let emb = embed_batch(tape, &ctx, &queries, report, index, &self.config.similarity);
        let row = |n: NodeId| Some(emb.rows[&n]);
        let mut src_idx = Vec::with_capacity(batch.len() * (1 + per));
        let mut dst_idx = Vec::with_capacity(batch.len() * (1 + per));
        for e in batch {
            src_idx.push(row(e.source));
            dst_idx.push(row(e.destination));
        }
        for (i, e) in batch.iter().enumerate() {
            for &n in &negatives[i * per..(i + 1) * per] {
                src_idx.push(row(e.source));
                dst_idx.push(row(n));
            }
        }
        let mut labels = vec![1.0; batch.len()];
        labels.resize(batch.len() * (1 + per), 0.0);
        let src = tape.gather_rows(emb.matrix, src_idx);
        let dst = tape.gather_rows(emb.matrix, dst_idx);
        let logits = decoder_logits(tape, store, &self.params.decoder, src, dst);
        let loss = tape.bce_with_logits(logits, labels);
        Forward {
            loss,
            logits,
            embeddings: emb,
        }
    }

    /// Loss and parameter gradients of `batch` for the values in `store`, with
    /// memory, staleness and similar nodes taken from `state`.
    pub fn loss_and_grads(
        &self,
        store: &ParameterStore,
        state: &StreamState,
        batch: &[Event],
        negatives: &[NodeId],
    ) -> Result<(f64, Vec<Tensor>)> {
        let report = staleness_report(batch, &state.memory, &self.config.staleness)?;
        let index = (!report.stale_set.is_empty()).then(|| {
            SimilarityIndex::build(collect_candidates(&state.memory), &self.config.similarity)
        });
        let mut tape = Tape::new();
        let f = self.forward(
            &mut tape,
            store,
            state,
            batch,
            negatives,
            &report,
            index.as_ref(),
            true,
        );
        let loss = tape.value(f.loss).item();
        let grads = tape.backward(f.loss)?.param_grads(&tape, store);
        Ok((loss, grads))
    }

    pub fn sample_negatives(&mut self, batch: &[Event]) -> Vec<NodeId> {
        sample_negatives(
            batch,
            self.config.destinations.clone(),
            self.config.train.negatives,
            &mut self.rng,
        )
    }

    /// One optimisation step on `batch`, followed by the batch's memory and
    /// adjacency updates.
    pub fn train_batch(
        &mut self,
        state: &mut StreamState,
        batch: &[Event],
    ) -> Result<BatchOutcome> {
        self.check_batch(batch)?;
        let negatives = self.sample_negatives(batch);
        let batch_index = self.batches_seen;
        let (report, use_index) = self.prepare(state, batch)?;
        let index = state.index.as_ref().filter(|_| use_index);
        if self.log_staleness {
            eprintln!("{}", report.log_line(batch_index));
        }
        let mut tape = Tape::new();
        let f = self.forward(
            &mut tape,
            &self.store,
            state,
            batch,
            &negatives,
            &report,
            index,
            true,
        );
        let loss = tape.value(f.loss).item();
        if !loss.is_finite() {
            let norms = self
                .store
                .norms()
                .into_iter()
                .map(|(n, v)| format!("{n}={v:.3e}"))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(Error::Numeric(format!(
                "non-finite loss at batch {batch_index}; parameter norms: {norms}"
            )));
        }
        let grads = tape.backward(f.loss)?.param_grads(&tape, &self.store);
        self.adam.adam_step(&mut self.store, &grads)?;
        let augmented = f.embeddings.augmented.len();
        let skipped = f.embeddings.skipped.len();
        self.commit_batch(state, batch)?;
        self.batches_seen += 1;
        Ok(BatchOutcome {
            loss,
            report,
            augmented,
            skipped,
        })
    }

    /// Link probabilities for `batch` and `negatives` with frozen parameters,
    /// then the batch's memory and adjacency updates.
    pub fn eval_batch(
        &self,
        state: &mut StreamState,
        batch: &[Event],
        negatives: &[NodeId],
    ) -> Result<BatchScores> {
        self.check_batch(batch)?;
        let (report, use_index) = self.prepare(state, batch)?;
        let index = state.index.as_ref().filter(|_| use_index);
        let mut tape = Tape::new();
        let f = self.forward(
            &mut tape,
            &self.store,
            state,
            batch,
            negatives,
            &report,
            index,
            false,
        );
        let probs: Vec<f64> = tape
            .value(f.logits)
            .data()
            .iter()
            .map(|&z| super::sigmoid(z.clamp(-super::LOGIT_CLAMP, super::LOGIT_CLAMP)))
            .collect();
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite link score".into()));
        }
        self.commit_batch(state, batch)?;
        let n = batch.len();
        Ok(BatchScores {
            positive: probs[..n].to_vec(),
            negative: probs[n..].to_vec(),
            report,
        })
    }

    /// Replays `batch` into memory and adjacency without scoring it.
    pub fn commit_batch(&self, state: &mut StreamState, batch: &[Event]) -> Result<()> {
        let mut messages = Vec::with_capacity(2 * batch.len());
        for (pos, e) in batch.iter().enumerate() {
            let (a, b) = compute_messages(
                &state.memory,
                e,
                pos,
                &self.store,
                self.params.time(),
                self.config.d_edge,
            )?;
            messages.push(a);
            messages.push(b);
        }
        let aggregated = aggregate_messages(messages);
        state.pending = apply_messages(
            &mut state.memory,
            &aggregated,
            &self.store,
            &self.params.gru,
        )?;
        for e in batch {
            state.adjacency.insert_interaction(e)?;
        }
        Ok(())
    }

    /// One pass over `stream` from fresh memory and adjacency; `state` ends
    /// positioned after the last event.
    pub fn train_epoch(
        &mut self,
        stream: &EventStream,
        state: &mut StreamState,
        epoch: usize,
    ) -> Result<EpochStats> {
        let started = Instant::now();
        *state = self.new_state();
        let mut total = 0.0;
        let mut batches = 0;
        let mut stale = 0;
        let mut checked = 0;
        for batch in batch_iter(stream, self.config.train.batch_size) {
            let out = self.train_batch(state, batch)?;
            total += out.loss;
            batches += 1;
            stale += out.report.stale_set.len();
            checked += out.report.deltas.len();
        }
        Ok(EpochStats {
            epoch,
            mean_loss: if batches == 0 {
                0.0
            } else {
                total / batches as f64
            },
            batches,
            stale_count: stale,
            stale_fraction: if checked == 0 {
                0.0
            } else {
                stale as f64 / checked as f64
            },
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }
}
