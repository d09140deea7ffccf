//! Unsupervised meta-training: pseudo-task episodes over structure-adapted
//! features, joint cross-entropy + contrastive loss, AdamW on a cosine
//! schedule, and periodic labeled validation for best-checkpoint selection.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveFeatures;
use crate::autodiff::Val;
use crate::error::{Error, Result};
use crate::eval::{episode_accuracies, mean_std, EvalSetting};
use crate::graph::{ClassSplit, GraphStore, Phase};
use crate::loss::{ce_label_smoothing_loss, contrastive_loss};
use crate::mat::Mat;
use crate::mix_seed;
use crate::net::{forward_episode, Forward, Mode, NetConfig};
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::tasks::{gen_pseudo_task, Episode, TaskGenConfig};

const TRAIN_TAG: u64 = 0x7472_6169;
const VAL_TAG: u64 = 0x7661_6c69;

/// Everything the training loop needs beyond the graph and parameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub episodes_total: usize,
    /// Peak learning rate; cosine-decays to `lr_floor` over the run.
    pub lr: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
    pub contrastive_tau: f64,
    /// Validate (and consider checkpointing) every this many episodes.
    pub eval_every: usize,
    pub val_episodes: usize,
    pub val_m_query: usize,
    pub seed: u64,
    /// Where non-finite-loss diagnostics are written; temp dir if unset.
    pub dump_dir: Option<PathBuf>,
    pub task: TaskGenConfig,
    pub net: NetConfig,
}

impl TrainConfig {
    pub fn new(net: NetConfig, task: TaskGenConfig) -> Self {
        TrainConfig {
            episodes_total: 5000,
            lr: 2e-4,
            lr_floor: 1e-6,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            lambda: 0.5,
            contrastive_tau: 0.5,
            eval_every: 200,
            val_episodes: 50,
            val_m_query: 10,
            seed: 0,
            dump_dir: None,
            task,
            net,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.task.validate()?;
        if self.lambda < 0.0 {
            return Err(Error::Config("contrastive weight must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label smoothing must lie in [0, 1)".into()));
        }
        if self.contrastive_tau <= 0.0 {
            return Err(Error::Config("contrastive temperature must be > 0".into()));
        }
        if self.episodes_total == 0 || self.eval_every == 0 || self.val_episodes == 0 {
            return Err(Error::Config(
                "episode and evaluation counts must be >= 1".into(),
            ));
        }
        if self.lr <= 0.0 || self.lr_floor <= 0.0 || self.lr_floor > self.lr {
            return Err(Error::Config(
                "need 0 < lr_floor <= lr for the cosine schedule".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.task.n_way > self.net.max_n_way {
            return Err(Error::Config(format!(
                "{}-way tasks exceed the network's {}-way role table",
                self.task.n_way, self.net.max_n_way
            )));
        }
        Ok(())
    }
}

/// Loss of one episode with its components, still attached to the tape.
pub struct LossParts {
    pub total: Val,
    pub total_value: f64,
    pub ce: f64,
    pub con: f64,
}

/// Compose the joint loss on an episode's forward tape:
/// total = ce + lambda * contrastive. The contrastive term is always
/// computed and reported, even at lambda = 0.
pub fn episode_losses(
    fwd: &mut Forward,
    label_smoothing: f64,
    lambda: f64,
    tau: f64,
) -> Result<LossParts> {
    let t = &mut fwd.tape;
    let ce = ce_label_smoothing_loss(t, fwd.logits, &fwd.query_truth, label_smoothing)?;
    let con = contrastive_loss(
        t,
        &fwd.support_heads,
        &fwd.query_heads,
        &fwd.support_labels,
        &fwd.query_truth,
        tau,
    )?;
    let scaled = t.scale_k(con, lambda);
    let total = t.add(ce, scaled)?;
    Ok(LossParts {
        total,
        total_value: t.value(total).item(),
        ce: t.value(ce).item(),
        con: t.value(con).item(),
    })
}

/// One optimizer step's log entry. `loss_total` always equals
/// `loss_ce + lambda * loss_con` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_con: f64,
    pub lr: f64,
}

/// One periodic validation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    /// Number of episodes completed when this validation ran.
    pub after_episodes: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub vals: Vec<ValRecord>,
    pub best: Option<ValRecord>,
}

/// Result of a training run: final parameters, the best-validation
/// checkpoint (final parameters when no validation ran), and the log.
pub struct TrainOutcome {
    pub params: ParamStore,
    pub best_params: ParamStore,
    pub log: TrainLog,
}

fn write_dump(cfg: &TrainConfig, idx: usize, ep: &Episode, parts: &LossParts) -> PathBuf {
    let dir = cfg
        .dump_dir
        .clone()
        .unwrap_or_else(std::env::temp_dir);
    let path = dir.join(format!("loss-dump-seed{}-ep{}.json", cfg.seed, idx));
    let body = serde_json::json!({
        "episode_index": idx,
        "loss_total": parts.total_value,
        "loss_ce": parts.ce,
        "loss_con": parts.con,
        "episode": ep,
    });
    // best effort: the dump must never mask the original failure
    let _ = std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap_or_default());
    path
}

/// Meta-train over pseudo-tasks drawn from `af.x_task`. When `split` is
/// given, runs labeled validation episodes on `val_features` every
/// `eval_every` episodes (and after the last one) and keeps the parameters
/// with the best validation accuracy. Pass `&af.x_task` as `val_features`
/// so checkpoint selection sees the same feature pipeline the model trains
/// on; pass raw features instead to select for the domain-shifted
/// evaluation regime.
pub fn train(
    g: &GraphStore,
    af: &AdaptiveFeatures,
    val_features: &Mat,
    split: Option<&ClassSplit>,
    mut store: ParamStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut opt = AdamW::new(
        &store,
        cfg.lr,
        cfg.lr_floor,
        cfg.weight_decay,
        cfg.episodes_total,
    );
    let mut log = TrainLog::default();
    let mut best_params: Option<ParamStore> = None;
    let train_seed = mix_seed(cfg.seed, TRAIN_TAG);
    let val_seed = mix_seed(cfg.seed, VAL_TAG);
    let val_setting = EvalSetting {
        n_way: cfg.task.n_way,
        k_shot: cfg.task.k_shot,
        m_query: cfg.val_m_query,
        episodes_per_run: cfg.val_episodes,
        runs: 1,
    };

    for idx in 0..cfg.episodes_total {
        let ep_seed = mix_seed(train_seed, idx as u64);
        let mut rng = ChaCha20Rng::seed_from_u64(ep_seed);
        let episode = gen_pseudo_task(&af.x_task, &cfg.task, &mut rng)?;
        let mut fwd = forward_episode(
            g,
            &af.x_task,
            &episode,
            &store,
            &cfg.net,
            Mode::Train,
            ep_seed,
        )?;
        let parts = episode_losses(
            &mut fwd,
            cfg.label_smoothing,
            cfg.lambda,
            cfg.contrastive_tau,
        )?;
        if !parts.total_value.is_finite() {
            let dump = write_dump(cfg, idx, &episode, &parts);
            return Err(Error::NonFiniteLoss { episode: idx, dump });
        }
        fwd.tape.backward(parts.total)?;
        fwd.tape.grads_to(&mut store)?;
        let lr = opt.step(&mut store)?;
        log.steps.push(StepRecord {
            episode: idx,
            loss_total: parts.total_value,
            loss_ce: parts.ce,
            loss_con: parts.con,
            lr,
        });

        let due = (idx + 1) % cfg.eval_every == 0 || idx + 1 == cfg.episodes_total;
        if let (Some(split), true) = (split, due) {
            let accs = episode_accuracies(
                g,
                val_features,
                split,
                Phase::Val,
                &store,
                &cfg.net,
                &val_setting,
                val_seed,
                None,
            )?;
            let (acc, _) = mean_std(&accs);
            let record = ValRecord {
                after_episodes: idx + 1,
                accuracy: acc,
            };
            log.vals.push(record.clone());
            let improved = log.best.as_ref().is_none_or(|b| acc > b.accuracy);
            if improved {
                log.best = Some(record);
                best_params = Some(store.clone());
            }
        }
    }

    let best_params = best_params.unwrap_or_else(|| store.clone());
    Ok(TrainOutcome {
        params: store,
        best_params,
        log,
    })
}
