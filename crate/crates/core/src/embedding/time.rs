use crate::learn::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Harmonic time encoding `cos(frequency_j * dt + phase_j)` with trainable
/// frequencies and phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEncoder {
    pub frequencies: ParamId,
    pub phases: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    /// Frequencies start on the ladder `10^(-4j/dim)`, phases at zero.
    pub fn init(store: &mut ParameterStore, dim: usize) -> Result<Self> {
        let freqs: Vec<f64> = (0..dim)
            .map(|j| 1.0 / 10f64.powf(j as f64 * 4.0 / dim as f64))
            .collect();
        Ok(TimeEncoder {
            frequencies: store.add("time.frequencies", Tensor::row(&freqs))?,
            phases: store.add("time.phases", Tensor::zeros(1, dim))?,
            dim,
        })
    }

    pub fn lookup(store: &ParameterStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(n)
                .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
        };
        let frequencies = get("time.frequencies")?;
        Ok(TimeEncoder {
            frequencies,
            phases: get("time.phases")?,
            dim: store.get(frequencies).cols(),
        })
    }

    pub fn encode(&self, store: &ParameterStore, delta_t: f64) -> Vec<f64> {
        let f = store.get(self.frequencies).data();
        let p = store.get(self.phases).data();
        f.iter()
            .zip(p)
            .map(|(fj, pj)| (delta_t * fj + pj).cos())
            .collect()
    }

    /// Encodes one time delta per row into an `n x dim` matrix on the tape.
    pub fn encode_on_tape(&self, tape: &mut Tape, store: &ParameterStore, deltas: &[f64]) -> Var {
        let f = tape.param(store, self.frequencies);
        let p = tape.param(store, self.phases);
        let dt = tape.constant(Tensor::column(deltas));
        let x = tape.matmul(dt, f);
        let x = tape.add_row(x, p);
        tape.cos(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder(dim: usize) -> (ParameterStore, TimeEncoder) {
        let mut s = ParameterStore::new();
        let e = TimeEncoder::init(&mut s, dim).unwrap();
        (s, e)
    }

    #[test]
    fn zero_delta_zero_phase_is_ones() {
        let (s, e) = encoder(6);
        assert_eq!(e.encode(&s, 0.0), vec![1.0; 6]);
    }

    #[test]
    fn zero_frequencies_are_constant() {
        let (mut s, e) = encoder(4);
        s.set(e.frequencies, Tensor::zeros(1, 4)).unwrap();
        s.set(e.phases, Tensor::row(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(e.encode(&s, 0.0), e.encode(&s, 123.4));
    }

    #[test]
    fn scalar_evaluation_and_tape_agree() {
        let (mut s, e) = encoder(5);
        let freqs = [0.3, -1.2, 2.0, 0.01, 7.5];
        let phases = [0.5, 0.0, -0.25, 1.0, 3.0];
        s.set(e.frequencies, Tensor::row(&freqs)).unwrap();
        s.set(e.phases, Tensor::row(&phases)).unwrap();
        let got = e.encode(&s, 2.5);
        for j in 0..5 {
            assert_eq!(got[j], (freqs[j] * 2.5 + phases[j]).cos());
        }
        let mut tape = Tape::new();
        let v = e.encode_on_tape(&mut tape, &s, &[2.5, -1.0]);
        assert_eq!(tape.value(v).row_slice(0), got.as_slice());
        assert_eq!(tape.value(v).row_slice(1), e.encode(&s, -1.0).as_slice());
    }

    #[test]
    fn ladder_initialisation() {
        let (s, e) = encoder(4);
        let f = s.get(e.frequencies).data();
        assert_eq!(f[0], 1.0);
        assert!((f[2] - 0.01).abs() < 1e-15);
    }
}
