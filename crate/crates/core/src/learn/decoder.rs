use rand::Rng;

use super::{sigmoid, ParamId, ParameterStore, Tape, Tensor, Var, LOGIT_CLAMP};
use crate::{Error, Result};

/// One-hidden-layer MLP scoring `[src || dst]` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim: usize,
}

impl DecoderParams {
    pub fn init<R: Rng>(store: &mut ParameterStore, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(DecoderParams {
            w1: store.add_uniform("decoder.w1", 2 * dim, dim, rng)?,
            b1: store.add_uniform("decoder.b1", 1, dim, rng)?,
            w2: store.add_uniform("decoder.w2", dim, 1, rng)?,
            b2: store.add_uniform("decoder.b2", 1, 1, rng)?,
            dim,
        })
    }

    pub fn lookup(store: &ParameterStore, dim: usize) -> Result<Self> {
        let id = |n: &str| {
            store
                .id(n)
                .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
        };
        Ok(DecoderParams {
            w1: id("decoder.w1")?,
            b1: id("decoder.b1")?,
            w2: id("decoder.w2")?,
            b2: id("decoder.b2")?,
            dim,
        })
    }
}

/// Link logits for row-aligned source and destination embeddings.
pub fn decoder_logits(
    tape: &mut Tape,
    store: &ParameterStore,
    params: &DecoderParams,
    src: Var,
    dst: Var,
) -> Var {
    let w1 = tape.param(store, params.w1);
    let b1 = tape.param(store, params.b1);
    let w2 = tape.param(store, params.w2);
    let b2 = tape.param(store, params.b2);
    let x = tape.concat_cols(&[src, dst]);
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    tape.add_row(o, b2)
}

/// Link probability `sigmoid(MLP([src || dst]))`, strictly inside (0, 1).
pub fn decode_link(
    src: &[f64],
    dst: &[f64],
    store: &ParameterStore,
    params: &DecoderParams,
) -> Result<f64> {
    if src.len() != params.dim || dst.len() != params.dim {
        return Err(Error::Config(format!(
            "decoder expects {}-dim embeddings, got {} and {}",
            params.dim,
            src.len(),
            dst.len()
        )));
    }
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::row(src));
    let d = tape.constant(Tensor::row(dst));
    let logit = decoder_logits(&mut tape, store, params, s, d);
    Ok(sigmoid(
        tape.value(logit).item().clamp(-LOGIT_CLAMP, LOGIT_CLAMP),
    ))
}
