//! Fine-tuning-free evaluation: frozen parameters, one forward pass per
//! episode, argmax predictions, and report aggregation over independent
//! runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassSplit, GraphStore, Phase};
use crate::loss::accuracy;
use crate::mat::Mat;
use crate::mix_seed;
use crate::net::{forward_episode, Mode, NetConfig};
use crate::params::ParamStore;
use crate::tasks::gen_eval_episode;

/// Episode shape and volume of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSetting {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub episodes_per_run: usize,
    pub runs: usize,
}

impl EvalSetting {
    pub fn new(n_way: usize, k_shot: usize) -> Self {
        EvalSetting {
            n_way,
            k_shot,
            m_query: 10,
            episodes_per_run: 100,
            runs: 5,
        }
    }
}

/// Aggregated evaluation result; `mean`/`std` are over run means, std with
/// one delta degree of freedom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub episodes_per_run: usize,
    pub run_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (ddof = 1; zero for fewer than two
/// values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_runs(
        dataset: &str,
        setting: &EvalSetting,
        run_accuracies: Vec<f64>,
    ) -> EvalReport {
        let (mean, std) = mean_std(&run_accuracies);
        EvalReport {
            dataset: dataset.to_owned(),
            n_way: setting.n_way,
            k_shot: setting.k_shot,
            m_query: setting.m_query,
            episodes_per_run: setting.episodes_per_run,
            run_accuracies,
            mean,
            std,
        }
    }

    /// One-line summary in the usual benchmark-table style (percent).
    pub fn table_row(&self) -> String {
        format!(
            "{} {}-way {}-shot: {:.2} ± {:.2}",
            self.dataset,
            self.n_way,
            self.k_shot,
            100.0 * self.mean,
            100.0 * self.std
        )
    }

    /// Structured `key = value` record. Accuracies round-trip exactly, so a
    /// reader can recompute the header statistics bit-for-bit.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "n_way = {}", self.n_way);
        let _ = writeln!(s, "k_shot = {}", self.k_shot);
        let _ = writeln!(s, "m_query = {}", self.m_query);
        let _ = writeln!(s, "episodes_per_run = {}", self.episodes_per_run);
        let _ = writeln!(s, "runs = {}", self.run_accuracies.len());
        let accs: Vec<String> = self.run_accuracies.iter().map(|a| format!("{}", a)).collect();
        let _ = writeln!(s, "run_accuracies = {}", accs.join(" "));
        let _ = writeln!(s, "mean = {}", self.mean);
        let _ = writeln!(s, "std = {}", self.std);
        let _ = writeln!(s, "table = {}", self.table_row());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_record()).map_err(|e| Error::io(path, e))
    }

    /// Parse a record written by [`EvalReport::to_record`].
    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fields: std::collections::BTreeMap<&str, &str> = Default::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key = value"))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(path, 0, format!("missing field {}", k)))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(path, 0, format!("bad count in {}", k)))
        };
        let fnum = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(path, 0, format!("bad number in {}", k)))
        };
        let mut run_accuracies = Vec::new();
        for tok in get("run_accuracies")?.split_whitespace() {
            run_accuracies.push(
                tok.parse()
                    .map_err(|_| Error::parse(path, 0, "bad accuracy value"))?,
            );
        }
        Ok(EvalReport {
            dataset: get("dataset")?.to_owned(),
            n_way: num("n_way")?,
            k_shot: num("k_shot")?,
            m_query: num("m_query")?,
            episodes_per_run: num("episodes_per_run")?,
            run_accuracies,
            mean: fnum("mean")?,
            std: fnum("std")?,
        })
    }
}

/// Per-episode accuracies for `episodes` labeled episodes of the given
/// phase, distributed across worker threads over the frozen parameters.
/// Episode i is fully determined by `mix_seed(seed, i)`, so results are
/// identical for any worker count.
#[allow(clippy::too_many_arguments)]
pub fn episode_accuracies(
    g: &GraphStore,
    features: &Mat,
    split: &ClassSplit,
    phase: Phase,
    store: &ParamStore,
    net_cfg: &NetConfig,
    setting: &EvalSetting,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<f64>> {
    let episodes = setting.episodes_per_run;
    if episodes == 0 {
        return Err(Error::Config("need at least one evaluation episode".into()));
    }
    let workers = workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .clamp(1, episodes);

    let one = |i: usize| -> Result<f64> {
        let ep_seed = mix_seed(seed, i as u64);
        let mut rng = ChaCha20Rng::seed_from_u64(ep_seed);
        let ep = gen_eval_episode(
            g,
            split,
            phase,
            setting.n_way,
            setting.k_shot,
            setting.m_query,
            &mut rng,
        )?;
        let fwd = forward_episode(g, features, &ep, store, net_cfg, Mode::Eval, ep_seed)?;
        Ok(accuracy(fwd.logits_mat(), &fwd.query_truth))
    };

    if workers == 1 {
        return (0..episodes).map(one).collect();
    }
    let mut out = vec![0.0; episodes];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let one = &one;
            handles.push(scope.spawn(move || -> Result<Vec<(usize, f64)>> {
                (w..episodes)
                    .step_by(workers)
                    .map(|i| one(i).map(|a| (i, a)))
                    .collect()
            }));
        }
        for h in handles {
            let pairs = h.join().expect("evaluation worker panicked")?;
            for (i, a) in pairs {
                out[i] = a;
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Meta-testing per the evaluation protocol: `runs` independent runs of
/// `episodes_per_run` episodes each over frozen parameters, aggregated into
/// an [`EvalReport`]. Parameters are hash-checked before and after — a
/// mutation is a contract violation.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    g: &GraphStore,
    features: &Mat,
    split: &ClassSplit,
    store: &ParamStore,
    net_cfg: &NetConfig,
    setting: &EvalSetting,
    seed: u64,
    dataset: &str,
) -> Result<EvalReport> {
    if setting.runs == 0 {
        return Err(Error::Config("need at least one evaluation run".into()));
    }
    let hash_before = store.content_hash();
    let mut run_accuracies = Vec::with_capacity(setting.runs);
    for run in 0..setting.runs {
        let run_seed = mix_seed(seed, 0x6576_616c ^ run as u64);
        let accs = episode_accuracies(
            g,
            features,
            split,
            Phase::Test,
            store,
            net_cfg,
            setting,
            run_seed,
            None,
        )?;
        let (mean, _) = mean_std(&accs);
        run_accuracies.push(mean);
    }
    if store.content_hash() != hash_before {
        return Err(Error::Contract(
            "parameters changed during meta-testing".into(),
        ));
    }
    Ok(EvalReport::from_runs(dataset, setting, run_accuracies))
}
