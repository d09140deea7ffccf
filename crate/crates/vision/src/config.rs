//! Run configuration: a `key = value` settings file, seed resolution
//! (flag, then file, then the `VISION_SEED` environment variable, then the
//! default), and a stable hash of the architecture-defining fields for
//! checkpoint compatibility checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{Ablation, NetConfig};
use crate::train::TrainConfig;

/// Environment variable consulted when neither flag nor file sets a seed.
pub const SEED_ENV: &str = "VISION_SEED";

/// Parsed `key = value` file: lowercase keys, `#` comments, blank lines
/// ignored. Values keep their raw text; typed access happens at lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Settings> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::parse(origin, i + 1, "empty key"));
            }
            if values.insert(key.clone(), v.trim().to_owned()).is_some() {
                return Err(Error::parse(origin, i + 1, format!("duplicate key {:?}", key)));
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text, path)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("setting {} has unusable value {:?}", key, v))
            }),
        }
    }

    /// Names present in the file but not consumed by the schema; callers
    /// reject these so typos fail loudly.
    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        self.values
            .keys()
            .filter(|k| !known.contains(&k.as_str()))
            .cloned()
            .collect()
    }
}

/// Every settings key the training/evaluation stack understands.
pub const KNOWN_KEYS: [&str; 21] = [
    "episodes_total",
    "lr",
    "lr_floor",
    "weight_decay",
    "label_smoothing",
    "lambda",
    "contrastive_tau",
    "eval_every",
    "val_episodes",
    "val_m_query",
    "seed",
    "n_way",
    "k_shot",
    "m_query",
    "pool_size",
    "hidden",
    "k_neigh",
    "noise_std",
    "no_local",
    "no_global",
    "no_task_context",
];

/// Apply a settings file on top of a default-initialized training config.
/// Flags are applied by the caller afterwards, so precedence ends up
/// flag > file > defaults (seed additionally falls back to `VISION_SEED`).
pub fn apply_settings(cfg: &mut TrainConfig, s: &Settings) -> Result<()> {
    let unknown = s.unknown_keys(&KNOWN_KEYS);
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "unknown settings: {}",
            unknown.join(", ")
        )));
    }
    macro_rules! set {
        ($field:expr, $key:literal) => {
            if let Some(v) = s.typed($key)? {
                $field = v;
            }
        };
    }
    set!(cfg.episodes_total, "episodes_total");
    set!(cfg.lr, "lr");
    set!(cfg.lr_floor, "lr_floor");
    set!(cfg.weight_decay, "weight_decay");
    set!(cfg.label_smoothing, "label_smoothing");
    set!(cfg.lambda, "lambda");
    set!(cfg.contrastive_tau, "contrastive_tau");
    set!(cfg.eval_every, "eval_every");
    set!(cfg.val_episodes, "val_episodes");
    set!(cfg.val_m_query, "val_m_query");
    set!(cfg.seed, "seed");
    set!(cfg.task.n_way, "n_way");
    set!(cfg.task.k_shot, "k_shot");
    set!(cfg.task.m_query, "m_query");
    set!(cfg.task.pool_size, "pool_size");
    set!(cfg.net.hidden, "hidden");
    set!(cfg.net.k_neigh, "k_neigh");
    set!(cfg.net.noise_std, "noise_std");
    set!(cfg.net.ablation.no_local, "no_local");
    set!(cfg.net.ablation.no_global, "no_global");
    set!(cfg.net.ablation.no_task_context, "no_task_context");
    Ok(())
}

/// Resolve the seed with the documented precedence: an explicit flag wins,
/// then a `seed` line in the settings file, then `VISION_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!("{} has unusable value {:?}", SEED_ENV, v))
        }),
        Err(_) => Ok(0),
    }
}

/// Hash of the fields that define checkpoint compatibility: architecture
/// shape and ablation switches. Episode shape (way/shot) and schedule knobs
/// are deliberately excluded — a checkpoint trained on 2-way pseudo-tasks is
/// valid for 5-way evaluation; one with a different hidden width is not.
pub fn config_hash(net: &NetConfig) -> u64 {
    let mut h = Sha256::new();
    for v in [
        net.feat_dim,
        net.hidden,
        net.attn_heads,
        net.layers,
        net.ffn_dim,
        net.readout_heads,
        net.readout_dim,
        net.max_n_way,
        usize::from(net.ablation.no_local),
        usize::from(net.ablation.no_global),
        usize::from(net.ablation.no_task_context),
    ] {
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The ablation named on a CLI or in a report row.
pub fn ablation_label(a: &Ablation) -> &'static str {
    match (a.no_local, a.no_global, a.no_task_context) {
        (false, false, false) => "full",
        (true, false, false) => "no-local",
        (false, true, false) => "no-global",
        (false, false, true) => "no-task-context",
        (true, true, false) => "no-both",
        _ => "custom",
    }
}
