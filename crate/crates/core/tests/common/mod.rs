#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgn::embedding::{EmbedContext, EmbeddingConfig, EmbeddingParams, MemorySource, TimeEncoder};
use stgn::ingest::{generate_synthetic, Event, EventStream, SyntheticSpec};
use stgn::learn::{
    decoder_logits, gradient_check, DecoderParams, GradCheckReport, Model, ModelConfig,
    ParameterStore, Tape, Tensor, Var,
};
use stgn::memory::{gru_cell, GruParams, MemoryTable};
use stgn::temporal::TemporalAdjacency;
use stgn::Result;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const PROBES: usize = 200;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// `sum(out * weights)` for a fixed random `weights`, so every output entry
/// gets a distinct adjoint.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), r, c);
    let w = tape.constant(w);
    let p = tape.mul(out, w);
    tape.sum_all(p)
}

fn run(tape: Tape, loss: Var, store: &ParameterStore) -> Result<(f64, Vec<Tensor>)> {
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.param_grads(&tape, store);
    Ok((value, grads))
}

pub fn gru_check(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let gru = GruParams::init(&mut store, 7, 5, &mut rng).unwrap();
    let x = random_tensor(&mut rng, 4, 7);
    let h = random_tensor(&mut rng, 4, 5);
    gradient_check(
        &store,
        |s| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let hv = tape.constant(h.clone());
            let out = gru_cell(&mut tape, s, &gru, xv, hv);
            let loss = weighted_sum(&mut tape, out, seed + 1);
            run(tape, loss, s)
        },
        PROBES,
        H,
        seed,
    )
    .unwrap()
}

pub fn time_encoder_check(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let enc = TimeEncoder::init(&mut store, 100).unwrap();
    let phases = random_tensor(&mut rng, 1, 100);
    store.set(enc.phases, phases).unwrap();
    let deltas: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..5.0)).collect();
    gradient_check(
        &store,
        |s| {
            let mut tape = Tape::new();
            let out = enc.encode_on_tape(&mut tape, s, &deltas);
            let loss = weighted_sum(&mut tape, out, seed + 1);
            run(tape, loss, s)
        },
        PROBES,
        H,
        seed,
    )
    .unwrap()
}

pub fn decoder_check(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let dec = DecoderParams::init(&mut store, 10, &mut rng).unwrap();
    let src = random_tensor(&mut rng, 12, 10);
    let dst = random_tensor(&mut rng, 12, 10);
    let labels: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
    gradient_check(
        &store,
        |s| {
            let mut tape = Tape::new();
            let a = tape.constant(src.clone());
            let b = tape.constant(dst.clone());
            let logits = decoder_logits(&mut tape, s, &dec, a, b);
            let loss = tape.bce_with_logits(logits, labels.clone());
            run(tape, loss, s)
        },
        PROBES,
        H,
        seed,
    )
    .unwrap()
}

/// One attention layer over a node with three neighbors, memory and
/// features random.
pub fn attention_check(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_m, d_e) = (6, 3);
    let mut store = ParameterStore::new();
    let time = TimeEncoder::init(&mut store, 4).unwrap();
    let phases = random_tensor(&mut rng, 1, 4);
    store.set(time.phases, phases).unwrap();
    let cfg = EmbeddingConfig {
        heads: 2,
        d_emb: d_m,
        ..EmbeddingConfig::default()
    };
    let params = EmbeddingParams::init(&mut store, time, d_m, d_e, &cfg, &mut rng).unwrap();
    let nodes = 5;
    let states = (0..nodes * d_m)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let memory = MemoryTable::from_parts(d_m, states, vec![0.0; nodes]).unwrap();
    let mut adjacency = TemporalAdjacency::new(nodes);
    for (i, (d, t)) in [(1, 0.5), (2, 1.25), (3, 2.0)].into_iter().enumerate() {
        let features = (0..d_e).map(|_| rng.random_range(-1.0..1.0)).collect();
        adjacency
            .insert_interaction(&Event {
                event_id: i,
                source: 0,
                destination: d,
                timestamp: t,
                features,
            })
            .unwrap();
    }
    gradient_check(
        &store,
        |s| {
            let ctx = EmbedContext {
                store: s,
                params: &params,
                cfg: &cfg,
                adjacency: &adjacency,
                memory: MemorySource::stored(&memory),
            };
            let mut tape = Tape::new();
            let out = stgn::embedding::embed_queries(&mut tape, &ctx, &[(0, 3.0)]);
            let loss = weighted_sum(&mut tape, out, seed + 1);
            run(tape, loss, s)
        },
        PROBES,
        H,
        seed,
    )
    .unwrap()
}

pub fn small_stream(seed: u64) -> EventStream {
    generate_synthetic(&SyntheticSpec {
        num_users: 16,
        num_items: 16,
        num_communities: 4,
        num_events: 400,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

pub fn small_config(stream: &EventStream, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::for_stream(stream);
    cfg.d_memory = 8;
    cfg.d_time = 4;
    cfg.embedding.d_emb = 8;
    cfg.embedding.neighbors = 5;
    cfg.train.batch_size = 50;
    cfg.train.seed = seed;
    cfg
}

/// Full model loss on a 10-event batch after `warm` committed batches, with
/// staleness augmentation active (alpha 0.3, ball tree).
pub fn end_to_end_check(seed: u64, warm: usize) -> GradCheckReport {
    let stream = small_stream(seed);
    let mut cfg = small_config(&stream, seed);
    cfg.staleness.alpha = 0.3;
    let mut model = Model::new(cfg).unwrap();
    let mut state = model.new_state();
    for b in 0..warm {
        model
            .train_batch(&mut state, &stream.events[b * 50..(b + 1) * 50])
            .unwrap();
    }
    let batch = &stream.events[warm * 50..warm * 50 + 10];
    let negatives = model.sample_negatives(batch);
    assert!(!state.pending.is_empty());
    gradient_check(
        &model.store,
        |s| model.loss_and_grads(s, &state, batch, &negatives),
        PROBES,
        H,
        seed,
    )
    .unwrap()
}
