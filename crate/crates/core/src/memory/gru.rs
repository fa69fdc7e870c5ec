use rand::Rng;

use crate::learn::{ParamId, ParameterStore, Tape, Var};
use crate::{Error, Result};

/// Weights of a gated recurrent unit. Input-side matrices are
/// `input_dim x hidden`, hidden-side `hidden x hidden`, biases `1 x hidden`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_ir: ParamId,
    pub b_iz: ParamId,
    pub b_in: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

const NAMES: [&str; 12] = [
    "w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn",
];

impl GruParams {
    pub fn init<R: Rng>(
        store: &mut ParameterStore,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(12);
        for name in NAMES {
            let rows = match &name[..3] {
                "w_i" => input_dim,
                "w_h" => hidden,
                _ => 1,
            };
            ids.push(store.add_uniform(format!("gru.{name}"), rows, hidden, rng)?);
        }
        Ok(Self::from_ids(&ids, input_dim, hidden))
    }

    pub fn lookup(store: &ParameterStore) -> Result<Self> {
        let ids = NAMES
            .iter()
            .map(|n| {
                store
                    .id(&format!("gru.{n}"))
                    .ok_or_else(|| Error::Config(format!("missing parameter `gru.{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (input_dim, hidden) = store.get(ids[0]).shape();
        Ok(Self::from_ids(&ids, input_dim, hidden))
    }

    fn from_ids(ids: &[ParamId], input_dim: usize, hidden: usize) -> Self {
        GruParams {
            w_ir: ids[0],
            w_iz: ids[1],
            w_in: ids[2],
            w_hr: ids[3],
            w_hz: ids[4],
            w_hn: ids[5],
            b_ir: ids[6],
            b_iz: ids[7],
            b_in: ids[8],
            b_hr: ids[9],
            b_hz: ids[10],
            b_hn: ids[11],
            input_dim,
            hidden,
        }
    }

    pub fn all(&self) -> [ParamId; 12] {
        [
            self.w_ir, self.w_iz, self.w_in, self.w_hr, self.w_hz, self.w_hn, self.b_ir, self.b_iz,
            self.b_in, self.b_hr, self.b_hz, self.b_hn,
        ]
    }
}

/// One GRU step for every row of `x` (inputs) and `h` (previous states):
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
pub fn gru_cell(tape: &mut Tape, store: &ParameterStore, p: &GruParams, x: Var, h: Var) -> Var {
    let affine = |tape: &mut Tape, input: Var, w: ParamId, b: ParamId| {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let y = tape.matmul(input, w);
        tape.add_row(y, b)
    };
    let xr = affine(tape, x, p.w_ir, p.b_ir);
    let hr = affine(tape, h, p.w_hr, p.b_hr);
    let xz = affine(tape, x, p.w_iz, p.b_iz);
    let hz = affine(tape, h, p.w_hz, p.b_hz);
    let xn = affine(tape, x, p.w_in, p.b_in);
    let hn = affine(tape, h, p.w_hn, p.b_hn);

    let r = tape.add(xr, hr);
    let r = tape.sigmoid(r);
    let z = tape.add(xz, hz);
    let z = tape.sigmoid(z);
    let gated = tape.mul(r, hn);
    let n = tape.add(xn, gated);
    let n = tape.tanh(n);

    let keep = tape.affine(z, -1.0, 1.0);
    let fresh = tape.mul(keep, n);
    let carried = tape.mul(z, h);
    tape.add(fresh, carried)
}
