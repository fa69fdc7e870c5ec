//! Single-file checkpoints: `STGN`, a u32 format version, a configuration
//! block, a state block, then named arrays. Every number is little-endian and
//! array payloads are raw f64, so a load restores values bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{apply_model, model_entries, ConfigMap};
use crate::learn::{Adam, Model, ModelConfig, StreamState, Tensor};
use crate::memory::{MemoryTable, PendingUpdate};
use crate::similarity::{CandidateSet, SimilarityIndex};
use crate::temporal::{NeighborRecord, TemporalAdjacency};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"STGN";

/// A model, the stream state it was left in, and run settings that are not
/// part of the model (data source, split, evaluation seed).
pub struct Checkpoint {
    pub model: Model,
    pub state: StreamState,
    pub run: ConfigMap,
}

struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Array {
    Array {
        shape: vec![rows, cols],
        data,
    }
}

fn collect_arrays(model: &Model, state: &StreamState) -> Vec<(String, Array)> {
    let mut out = Vec::new();
    for (i, (_, name, t)) in model.store.iter().enumerate() {
        let (r, c) = t.shape();
        out.push((format!("param/{name}"), matrix(r, c, t.data().to_vec())));
        let m = &model.adam.first[i];
        out.push((format!("adam.m/{name}"), matrix(r, c, m.data().to_vec())));
        let v = &model.adam.second[i];
        out.push((format!("adam.v/{name}"), matrix(r, c, v.data().to_vec())));
    }
    let mem = &state.memory;
    out.push((
        "memory.states".into(),
        matrix(mem.num_nodes(), mem.dim(), mem.states().to_vec()),
    ));
    out.push((
        "memory.last_update".into(),
        matrix(mem.num_nodes(), 1, mem.last_updates().to_vec()),
    ));

    let adj = &state.adjacency;
    let mut records = Vec::new();
    for node in 0..adj.num_nodes() {
        for r in adj.history(node) {
            records.extend([
                node as f64,
                r.neighbor as f64,
                r.event_id as f64,
                r.timestamp,
            ]);
        }
    }
    out.push((
        "adjacency.records".into(),
        matrix(records.len() / 4, 4, records),
    ));
    let feats = adj.features_sorted();
    let width = 1 + model.config.d_edge;
    let mut fdata = Vec::with_capacity(feats.len() * width);
    for (id, f) in &feats {
        fdata.push(*id as f64);
        fdata.extend_from_slice(f);
    }
    out.push((
        "adjacency.features".into(),
        matrix(feats.len(), width, fdata),
    ));

    let p = &state.pending;
    let d_in = model.params.gru.input_dim;
    let meta = p
        .iter()
        .flat_map(|u| [u.node as f64, u.timestamp])
        .collect();
    let prev = p
        .iter()
        .flat_map(|u| u.prev_state.iter().copied())
        .collect();
    let payload = p.iter().flat_map(|u| u.payload.iter().copied()).collect();
    out.push(("pending.meta".into(), matrix(p.len(), 2, meta)));
    out.push(("pending.prev".into(), matrix(p.len(), mem.dim(), prev)));
    out.push(("pending.payload".into(), matrix(p.len(), d_in, payload)));

    if let Some(ix) = &state.index {
        let c = ix.candidates();
        let ids = c.ids().iter().map(|&i| i as f64).collect();
        out.push(("index.ids".into(), matrix(c.len(), 1, ids)));
        out.push((
            "index.points".into(),
            matrix(c.len(), c.dim(), c.points().to_vec()),
        ));
    }
    out
}

fn state_block(model: &Model, state: &StreamState) -> String {
    format!(
        "adam.step = {}\nrng.word_pos = {}\nbatches_seen = {}\nindex = {}\nindex_age = {}\n",
        model.adam.step,
        model.rng.get_word_pos(),
        model.batches_seen,
        u8::from(state.index.is_some()),
        state.index_age
    )
}

fn write_block<W: Write>(w: &mut W, text: &str) -> io::Result<()> {
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())
}

/// Writes `model`, `state` and the run settings to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    state: &StreamState,
    run: &ConfigMap,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config = run.clone().merged(&model_entries(&model.config));
    write_block(&mut w, &config.render())?;
    write_block(&mut w, &state_block(model, state))?;
    let arrays = collect_arrays(model, state);
    w.write_all(&(arrays.len() as u64).to_le_bytes())?;
    for (name, a) in &arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &d in &a.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, field: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => Error::checkpoint(field, "truncated file"),
                _ => Error::Io(e),
            })?;
        Ok(buf)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.bytes(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self, field: &str) -> Result<usize> {
        let n = self.u64(field)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= 1 << 40)
            .ok_or_else(|| Error::checkpoint(field, format!("implausible length {n}")))
    }

    fn text(&mut self, field: &str) -> Result<String> {
        let n = self.len(field)?;
        String::from_utf8(self.bytes(n, field)?).map_err(|_| Error::checkpoint(field, "not UTF-8"))
    }
}

fn parse_state(text: &str) -> Result<HashMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::checkpoint("state", format!("malformed line `{l}`")))
        })
        .collect()
}

fn state_value<T: std::str::FromStr>(state: &HashMap<String, String>, key: &str) -> Result<T> {
    state
        .get(key)
        .ok_or_else(|| Error::checkpoint(key, "missing"))?
        .parse()
        .map_err(|_| Error::checkpoint(key, "invalid value"))
}

struct Arrays(BTreeMap<String, Array>);

impl Arrays {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let a = self
            .0
            .remove(name)
            .ok_or_else(|| Error::checkpoint(name, "missing array"))?;
        if a.shape != shape {
            return Err(Error::checkpoint(
                name,
                format!("shape mismatch: expected {shape:?}, found {:?}", a.shape),
            ));
        }
        Ok(a.data)
    }

    fn take_rows(&mut self, name: &str, cols: usize) -> Result<(usize, Vec<f64>)> {
        let rows = match self.0.get(name) {
            Some(a) if a.shape.len() == 2 => a.shape[0],
            Some(a) => {
                return Err(Error::checkpoint(
                    name,
                    format!("expected rank 2, found {}", a.shape.len()),
                ))
            }
            None => return Err(Error::checkpoint(name, "missing array")),
        };
        Ok((rows, self.take(name, &[rows, cols])?))
    }
}

fn as_index(v: f64, field: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(Error::checkpoint(field, format!("invalid id {v}")))
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let magic = r
        .bytes(4, "header")
        .map_err(|_| Error::checkpoint("header", "bad header"))?;
    if magic != MAGIC {
        return Err(Error::checkpoint("header", "bad header"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint(
            "version",
            format!("version mismatch: file {version}, supported {CHECKPOINT_VERSION}"),
        ));
    }
    let run = ConfigMap::parse(&r.text("config")?)
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;
    let state_kv = parse_state(&r.text("state")?)?;
    let count = r.len("arrays")?;
    let mut arrays = BTreeMap::new();
    for i in 0..count {
        let field = format!("array #{i}");
        let n = r.u32(&field)? as usize;
        let name = String::from_utf8(r.bytes(n, &field)?)
            .map_err(|_| Error::checkpoint(&field, "name not UTF-8"))?;
        let rank = r.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len(&name)?);
        }
        let len: usize = shape.iter().product();
        let raw = r.bytes(
            len.checked_mul(8)
                .ok_or_else(|| Error::checkpoint(&name, "too large"))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.insert(name, Array { shape, data });
    }
    let mut arrays = Arrays(arrays);

    let mut config = ModelConfig::for_stream(&crate::ingest::EventStream {
        events: Vec::new(),
        num_sources: 0,
        num_destinations: 0,
        d_edge: 0,
    });
    apply_model(&run, &mut config).map_err(|e| Error::checkpoint("config", e.to_string()))?;
    let template = Model::new(config.clone())?;

    let mut store = template.store.clone();
    let mut first = Vec::with_capacity(store.len());
    let mut second = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (rows, cols) = store.get(id).shape();
        let value = arrays.take(&format!("param/{name}"), &[rows, cols])?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::checkpoint(
                format!("param/{name}"),
                "non-finite values",
            ));
        }
        *store.get_mut(id) = Tensor::from_vec(rows, cols, value);
        first.push(Tensor::from_vec(
            rows,
            cols,
            arrays.take(&format!("adam.m/{name}"), &[rows, cols])?,
        ));
        second.push(Tensor::from_vec(
            rows,
            cols,
            arrays.take(&format!("adam.v/{name}"), &[rows, cols])?,
        ));
    }
    let adam = Adam {
        config: config.train.adam(),
        step: state_value(&state_kv, "adam.step")?,
        first,
        second,
    };
    let mut rng = Model::sampling_rng(config.train.seed);
    rng.set_word_pos(state_value(&state_kv, "rng.word_pos")?);
    let mut model = Model::from_parts(config.clone(), store, adam, rng)?;
    model.batches_seen = state_value(&state_kv, "batches_seen")?;

    let n = config.num_nodes;
    let d = config.d_memory;
    let states = arrays.take("memory.states", &[n, d])?;
    let last = arrays.take("memory.last_update", &[n, 1])?;
    let memory = MemoryTable::from_parts(d, states, last)
        .map_err(|e| Error::checkpoint("memory.states", e.to_string()))?;

    let (_, records) = arrays.take_rows("adjacency.records", 4)?;
    let mut lists: Vec<Vec<NeighborRecord>> = vec![Vec::new(); n];
    for rec in records.chunks_exact(4) {
        let node = as_index(rec[0], "adjacency.records")?;
        if node >= n {
            return Err(Error::checkpoint(
                "adjacency.records",
                format!("node {node} out of range"),
            ));
        }
        lists[node].push(NeighborRecord {
            neighbor: as_index(rec[1], "adjacency.records")?,
            event_id: as_index(rec[2], "adjacency.records")?,
            timestamp: rec[3],
        });
    }
    let (_, fdata) = arrays.take_rows("adjacency.features", 1 + config.d_edge)?;
    let mut features = HashMap::new();
    for row in fdata.chunks_exact(1 + config.d_edge) {
        features.insert(as_index(row[0], "adjacency.features")?, row[1..].to_vec());
    }
    let adjacency = TemporalAdjacency::from_parts(lists, features)
        .map_err(|e| Error::checkpoint("adjacency.records", e.to_string()))?;

    let (p, meta) = arrays.take_rows("pending.meta", 2)?;
    let prev = arrays.take("pending.prev", &[p, d])?;
    let payload = arrays.take("pending.payload", &[p, model.params.gru.input_dim])?;
    let d_in = model.params.gru.input_dim;
    let pending = (0..p)
        .map(|i| {
            Ok(PendingUpdate {
                node: as_index(meta[2 * i], "pending.meta")?,
                prev_state: prev[i * d..(i + 1) * d].to_vec(),
                payload: payload[i * d_in..(i + 1) * d_in].to_vec(),
                timestamp: meta[2 * i + 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let index = if state_value::<u8>(&state_kv, "index")? == 1 {
        let (c, ids) = arrays.take_rows("index.ids", 1)?;
        let points = arrays.take("index.points", &[c, d])?;
        let ids = ids
            .iter()
            .map(|&v| as_index(v, "index.ids"))
            .collect::<Result<Vec<_>>>()?;
        let cands = CandidateSet::from_parts(ids, d, points)
            .map_err(|e| Error::checkpoint("index.ids", e.to_string()))?;
        Some(SimilarityIndex::build(cands, &config.similarity))
    } else {
        None
    };

    Ok(Checkpoint {
        model,
        state: StreamState {
            memory,
            adjacency,
            pending,
            index,
            index_age: state_value(&state_kv, "index_age")?,
        },
        run,
    })
}
