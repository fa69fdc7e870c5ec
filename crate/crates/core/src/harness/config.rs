//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. The same format holds
//! the configuration block of checkpoints.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::embedding::{Combine, SimilarMode};
use crate::ingest::{
    dormancy_windows, generate_synthetic, parse_jodie_csv, EventStream, SplitSpec, SyntheticSpec,
};
use crate::learn::ModelConfig;
use crate::similarity::Backend;
use crate::staleness::StalenessScope;
use crate::{Error, Result};

pub const KEYS: &[&str] = &[
    // data
    "data",
    "users",
    "items",
    "communities",
    "events",
    "intra_prob",
    "noise_std",
    "synth_seed",
    "dormancy_frac",
    "dormancy_length",
    "train_frac",
    "val_frac",
    "new_node_frac",
    "split_seed",
    // model
    "d_memory",
    "d_time",
    "d_edge",
    "num_nodes",
    "dest_start",
    "dest_end",
    "layers",
    "neighbors",
    "heads",
    "d_emb",
    "similar_mode",
    "combine",
    "backend",
    "alpha",
    "staleness_scope",
    "k",
    "leaf_capacity",
    "rebuild_every",
    // training
    "batch_size",
    "epochs",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "negatives",
    "seed",
    "eval_seed",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("expected key = value, got `{line}`"),
                });
            };
            let key = k.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("unknown key `{key}`"),
                });
            }
            map.entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// `other` wins on shared keys.
    pub fn merged(mut self, other: &ConfigMap) -> Self {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn update<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.value(key)? {
            *slot = v;
        }
        Ok(())
    }
}

fn parse_enum<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "`{key}` must be one of {}, got `{value}`",
                names.join("|")
            ))
        })
}

const MODES: [(&str, SimilarMode); 2] = [
    ("attention", SimilarMode::Attention),
    ("memory", SimilarMode::Memory),
];
const COMBINES: [(&str, Combine); 2] = [("sum", Combine::Sum), ("mean", Combine::Mean)];
const SCOPES: [(&str, StalenessScope); 2] = [
    ("sources", StalenessScope::SourcesOnly),
    ("all", StalenessScope::AllEndpoints),
];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options
        .iter()
        .find(|(_, o)| *o == v)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

/// `off`, `ball_tree` or `brute_force`.
pub fn backend_name(cfg: &ModelConfig) -> &'static str {
    if !cfg.staleness.enabled {
        return "off";
    }
    match cfg.similarity.backend {
        Backend::BallTree => "ball_tree",
        Backend::BruteForce => "brute_force",
    }
}

/// Applies model and training keys present in `map` to `cfg`.
pub fn apply_model(map: &ConfigMap, cfg: &mut ModelConfig) -> Result<()> {
    map.update("d_memory", &mut cfg.d_memory)?;
    map.update("d_time", &mut cfg.d_time)?;
    map.update("d_edge", &mut cfg.d_edge)?;
    map.update("num_nodes", &mut cfg.num_nodes)?;
    map.update("dest_start", &mut cfg.destinations.start)?;
    map.update("dest_end", &mut cfg.destinations.end)?;
    let e = &mut cfg.embedding;
    map.update("layers", &mut e.layers)?;
    map.update("neighbors", &mut e.neighbors)?;
    map.update("heads", &mut e.heads)?;
    map.update("d_emb", &mut e.d_emb)?;
    if let Some(v) = map.get("similar_mode") {
        e.similar_mode = parse_enum("similar_mode", v, &MODES)?;
    }
    if let Some(v) = map.get("combine") {
        e.combine = parse_enum("combine", v, &COMBINES)?;
    }
    if let Some(v) = map.get("backend") {
        let (enabled, backend) = parse_enum(
            "backend",
            v,
            &[
                ("off", (false, cfg.similarity.backend)),
                ("ball_tree", (true, Backend::BallTree)),
                ("brute_force", (true, Backend::BruteForce)),
            ],
        )?;
        cfg.staleness.enabled = enabled;
        cfg.similarity.backend = backend;
    }
    map.update("alpha", &mut cfg.staleness.alpha)?;
    if let Some(v) = map.get("staleness_scope") {
        cfg.staleness.scope = parse_enum("staleness_scope", v, &SCOPES)?;
    }
    map.update("k", &mut cfg.similarity.k)?;
    map.update("leaf_capacity", &mut cfg.similarity.leaf_capacity)?;
    map.update("rebuild_every", &mut cfg.similarity.rebuild_every)?;
    let t = &mut cfg.train;
    map.update("batch_size", &mut t.batch_size)?;
    map.update("epochs", &mut t.epochs)?;
    map.update("learning_rate", &mut t.learning_rate)?;
    map.update("beta1", &mut t.beta1)?;
    map.update("beta2", &mut t.beta2)?;
    map.update("epsilon", &mut t.epsilon)?;
    map.update("negatives", &mut t.negatives)?;
    map.update("seed", &mut t.seed)?;
    Ok(())
}

/// Every key [`apply_model`] reads, with the values of `cfg`.
pub fn model_entries(cfg: &ModelConfig) -> ConfigMap {
    let mut m = ConfigMap::new();
    m.set("d_memory", cfg.d_memory);
    m.set("d_time", cfg.d_time);
    m.set("d_edge", cfg.d_edge);
    m.set("num_nodes", cfg.num_nodes);
    m.set("dest_start", cfg.destinations.start);
    m.set("dest_end", cfg.destinations.end);
    let e = &cfg.embedding;
    m.set("layers", e.layers);
    m.set("neighbors", e.neighbors);
    m.set("heads", e.heads);
    m.set("d_emb", e.d_emb);
    m.set("similar_mode", name_of(&MODES, e.similar_mode));
    m.set("combine", name_of(&COMBINES, e.combine));
    m.set("backend", backend_name(cfg));
    m.set("alpha", cfg.staleness.alpha);
    m.set("staleness_scope", name_of(&SCOPES, cfg.staleness.scope));
    m.set("k", cfg.similarity.k);
    m.set("leaf_capacity", cfg.similarity.leaf_capacity);
    m.set("rebuild_every", cfg.similarity.rebuild_every);
    let t = &cfg.train;
    m.set("batch_size", t.batch_size);
    m.set("epochs", t.epochs);
    m.set("learning_rate", t.learning_rate);
    m.set("beta1", t.beta1);
    m.set("beta2", t.beta2);
    m.set("epsilon", t.epsilon);
    m.set("negatives", t.negatives);
    m.set("seed", t.seed);
    m
}

pub fn split_spec(map: &ConfigMap) -> Result<SplitSpec> {
    let mut s = SplitSpec::default();
    map.update("train_frac", &mut s.train_frac)?;
    map.update("val_frac", &mut s.val_frac)?;
    map.update("new_node_frac", &mut s.new_node_frac)?;
    map.update("split_seed", &mut s.seed)?;
    s.validate()?;
    Ok(s)
}

/// Synthetic stream settings, with dormancy windows for a `dormancy_frac`
/// share of users when that key is positive.
pub fn synthetic_spec(map: &ConfigMap) -> Result<SyntheticSpec> {
    let mut s = SyntheticSpec::default();
    map.update("users", &mut s.num_users)?;
    map.update("items", &mut s.num_items)?;
    map.update("communities", &mut s.num_communities)?;
    map.update("events", &mut s.num_events)?;
    map.update("intra_prob", &mut s.intra_prob)?;
    map.update("noise_std", &mut s.noise_std)?;
    map.update("synth_seed", &mut s.seed)?;
    let frac: f64 = map.value("dormancy_frac")?.unwrap_or(0.0);
    if frac > 0.0 {
        let horizon = s.num_events as f64;
        let length: f64 = map.value("dormancy_length")?.unwrap_or(horizon * 0.2);
        s.dormancy = dormancy_windows(s.num_users, frac, horizon, length, s.seed ^ 0x5eed);
    }
    Ok(s)
}

/// The stream named by `data`: `synth` (the default) or a JODIE CSV path.
pub fn load_stream(map: &ConfigMap) -> Result<EventStream> {
    match map.get("data").unwrap_or("synth") {
        "synth" => generate_synthetic(&synthetic_spec(map)?),
        path => parse_jodie_csv(Path::new(path)),
    }
}
