//! Command-line interface: dataset preparation, meta-training, evaluation,
//! episode dumps, anchor-diversity checks, ablation sweeps, and synthetic
//! fixture generation. All commands operate on a dataset directory holding
//! `features.tsv`, `edges.tsv`, `labels.tsv`, and optionally `split.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::adaptive::{compute_or_cached, AdaptiveFeatures};
use crate::config::{
    ablation_label, apply_settings, config_hash, resolve_seed, Settings,
};
use crate::error::{Error, Result};
use crate::eval::{meta_test, EvalSetting};
use crate::graph::{load_graph, load_split, save_split, ClassSplit, GraphStore};
use crate::net::{init_params, Ablation, NetConfig};
use crate::params::{load_checkpoint, save_checkpoint};
use crate::synth::{
    expected_distinct, generate_citation, preset, three_blobs, two_cluster, PRESET_NAMES,
};
use crate::tasks::{
    anchor_distinct_probability, anchor_diversity_monte_carlo, gen_pseudo_task, write_episodes,
    TaskGenConfig,
};
use crate::train::{train, TrainConfig};

pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.txt";
pub const CACHE_FILE: &str = "adaptive.bin";

#[derive(Parser)]
#[command(
    name = "vision",
    about = "Unsupervised meta-training of a context-aware attention network \
             for few-shot node classification",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or refresh) the adaptive-feature cache for a dataset
    Prepare(PrepareArgs),
    /// Meta-train on pseudo-tasks and save the best checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on few-shot episodes from the test classes
    Eval(EvalArgs),
    /// Sample pseudo-tasks and write them as line-delimited records
    GenTasks(GenTasksArgs),
    /// Anchor-distinctness probabilities: closed form and Monte Carlo table
    VerifyAnchors(VerifyAnchorsArgs),
    /// Train and evaluate the full model and its four reduced variants
    Ablate(AblateArgs),
    /// Write a synthetic dataset to a directory
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Cache file to write (default: <data>/adaptive.bin)
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainKnobs {
    /// Settings file (`key = value` lines); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (falls back to the settings file, then $VISION_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Total pseudo-task episodes
    #[arg(long)]
    episodes: Option<usize>,
    /// Classes per episode
    #[arg(long)]
    n_way: Option<usize>,
    /// Support nodes per class
    #[arg(long)]
    k_shot: Option<usize>,
    /// Query nodes per class
    #[arg(long)]
    m_query: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Final learning rate of the cosine schedule
    #[arg(long)]
    lr_floor: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Label-smoothing epsilon
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// Contrastive loss weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Contrastive temperature
    #[arg(long)]
    contrastive_tau: Option<f64>,
    /// Validate (and maybe checkpoint) every this many episodes
    #[arg(long)]
    eval_every: Option<usize>,
    /// Validation episodes per checkpoint decision
    #[arg(long)]
    val_episodes: Option<usize>,
    /// Token width of the network
    #[arg(long)]
    hidden: Option<usize>,
    /// Neighbor cap per node
    #[arg(long)]
    k_neigh: Option<usize>,
    /// Std of training-time feature noise
    #[arg(long)]
    noise_std: Option<f64>,
    /// Disable the structural (neighbor) attention path
    #[arg(long)]
    no_local: bool,
    /// Disable the task-level (support) attention path
    #[arg(long)]
    no_global: bool,
    /// Replace all role embeddings with the mask embedding
    #[arg(long)]
    no_task_context: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write
    #[arg(long)]
    out: PathBuf,
    /// Optional training-log JSON to write
    #[arg(long)]
    log: Option<PathBuf>,
    /// Directory for non-finite-loss diagnostic dumps
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[command(flatten)]
    knobs: TrainKnobs,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint to evaluate
    #[arg(long)]
    checkpoint: PathBuf,
    /// Result record to write (optional; table always prints)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset label in the report (default: the data directory name)
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value_t = 2)]
    n_way: usize,
    #[arg(long, default_value_t = 5)]
    k_shot: usize,
    /// Query nodes per class and episode
    #[arg(long, default_value_t = 10)]
    m_query: usize,
    /// Episodes per independent run
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Independent runs to average
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate on fused adaptive features instead of raw ones
    #[arg(long)]
    task_features: bool,
    /// Token width the checkpoint was trained with
    #[arg(long)]
    hidden: Option<usize>,
    /// Neighbor cap per node
    #[arg(long)]
    k_neigh: Option<usize>,
    #[arg(long)]
    no_local: bool,
    #[arg(long)]
    no_global: bool,
    #[arg(long)]
    no_task_context: bool,
}

#[derive(Args)]
struct GenTasksArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Episode file to write (one record per line)
    #[arg(long)]
    out: PathBuf,
    /// Number of pseudo-tasks
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    n_way: usize,
    #[arg(long, default_value_t = 3)]
    k_shot: usize,
    #[arg(long, default_value_t = 5)]
    m_query: usize,
    /// Candidate-pool size per task
    #[arg(long, default_value_t = 4096)]
    pool_size: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyAnchorsArgs {
    /// Number of true classes (closed-form mode, with --ways)
    #[arg(long)]
    classes: Option<usize>,
    /// Number of anchors drawn per task
    #[arg(long)]
    ways: Option<usize>,
    /// Print the fixture table: exact expected distinct classes vs Monte Carlo
    #[arg(long)]
    table: bool,
    /// Monte Carlo trials per fixture row
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Table file to write (optional; table always prints)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test episodes per variant
    #[arg(long, default_value_t = 200)]
    eval_episodes: usize,
    /// Query nodes per class in test episodes
    #[arg(long, default_value_t = 10)]
    eval_m_query: usize,
    /// Evaluate on fused adaptive features instead of raw ones
    #[arg(long)]
    task_features: bool,
    #[command(flatten)]
    knobs: TrainKnobs,
}

#[derive(Args)]
struct SynthArgs {
    /// Fixture name: cora, citeseer, cora_ml, corafull, two-cluster, three-blobs
    #[arg(long)]
    name: String,
    /// Directory to write the dataset into
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node count (two-cluster only)
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    /// Nodes per class (three-blobs only)
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Feature dimension (toy fixtures only)
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    /// Center separation in feature space (toy fixtures only)
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
}

/// Parse and run `argv` (including the program name). Returns the process
/// exit code: 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn run_cli(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let invocation = args.join(" ");
    let run = match cli.cmd {
        Cmd::Prepare(a) => cmd_prepare(a),
        Cmd::Train(a) => cmd_train(a, &invocation),
        Cmd::Eval(a) => cmd_eval(a, &invocation),
        Cmd::GenTasks(a) => cmd_gen_tasks(a),
        Cmd::VerifyAnchors(a) => cmd_verify_anchors(a),
        Cmd::Ablate(a) => cmd_ablate(a, &invocation),
        Cmd::Synth(a) => cmd_synth(a),
    };
    match run {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_dataset(dir: &Path) -> Result<(GraphStore, Option<ClassSplit>)> {
    let g = load_graph(
        &dir.join(FEATURES_FILE),
        &dir.join(EDGES_FILE),
        &dir.join(LABELS_FILE),
    )?;
    let split_path = dir.join(SPLIT_FILE);
    let split = if split_path.exists() {
        Some(load_split(&split_path, g.num_classes())?)
    } else {
        None
    };
    Ok((g, split))
}

/// Use the adaptive-feature cache when present; otherwise compute in memory
/// without writing (only `prepare` creates the cache).
fn adaptive_for(g: &GraphStore, dir: &Path) -> Result<AdaptiveFeatures> {
    let cache = dir.join(CACHE_FILE);
    let cache_arg = cache.exists().then_some(cache.as_path());
    compute_or_cached(g, cache_arg)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let (g, _) = load_dataset(&a.data)?;
    let cache = a.cache.unwrap_or_else(|| a.data.join(CACHE_FILE));
    let af = compute_or_cached(&g, Some(&cache))?;
    let n = g.num_nodes();
    let mean_gate: f64 = af.gate.iter().sum::<f64>() / n as f64;
    let low = af.gate.iter().filter(|&&x| x < 0.5).count();
    println!(
        "{} nodes, {} edges, {} classes, {} features",
        n,
        g.num_edges(),
        g.num_classes(),
        g.num_features()
    );
    println!(
        "gate: mean {:.4}, {} of {} nodes lean raw (g < 0.5)",
        mean_gate, low, n
    );
    println!("cache -> {}", cache.display());
    Ok(())
}

/// Build a training config from defaults, the optional settings file, and
/// the explicit flags — later layers win. Returns the config plus whether
/// the settings file carried a seed (for the seed-resolution chain).
fn build_train_config(feat_dim: usize, k: &TrainKnobs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(NetConfig::new(feat_dim), TaskGenConfig::new(2, 3, 5));
    let mut file_seed = None;
    if let Some(path) = &k.config {
        let s = Settings::load(path)?;
        apply_settings(&mut cfg, &s)?;
        if s.raw("seed").is_some() {
            file_seed = Some(cfg.seed);
        }
    }
    macro_rules! flag {
        ($field:expr, $opt:expr) => {
            if let Some(v) = $opt {
                $field = v;
            }
        };
    }
    flag!(cfg.episodes_total, k.episodes);
    flag!(cfg.task.n_way, k.n_way);
    flag!(cfg.task.k_shot, k.k_shot);
    flag!(cfg.task.m_query, k.m_query);
    flag!(cfg.lr, k.lr);
    flag!(cfg.lr_floor, k.lr_floor);
    flag!(cfg.weight_decay, k.weight_decay);
    flag!(cfg.label_smoothing, k.label_smoothing);
    flag!(cfg.lambda, k.lambda);
    flag!(cfg.contrastive_tau, k.contrastive_tau);
    flag!(cfg.eval_every, k.eval_every);
    flag!(cfg.val_episodes, k.val_episodes);
    flag!(cfg.net.hidden, k.hidden);
    flag!(cfg.net.k_neigh, k.k_neigh);
    flag!(cfg.net.noise_std, k.noise_std);
    cfg.net.ablation.no_local |= k.no_local;
    cfg.net.ablation.no_global |= k.no_global;
    cfg.net.ablation.no_task_context |= k.no_task_context;
    cfg.seed = resolve_seed(k.seed, file_seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs, _invocation: &str) -> Result<()> {
    let (g, split) = load_dataset(&a.data)?;
    let af = adaptive_for(&g, &a.data)?;
    let mut cfg = build_train_config(g.num_features(), &a.knobs)?;
    cfg.dump_dir = a.dump_dir;
    let store = init_params(&cfg.net, cfg.seed)?;
    println!(
        "training: {} episodes of {}-way {}-shot pseudo-tasks, seed {}",
        cfg.episodes_total, cfg.task.n_way, cfg.task.k_shot, cfg.seed
    );
    // validation episodes run on the same fused features as training;
    // meta-testing is where raw features become the default
    let outcome = train(&g, &af, &af.x_task, split.as_ref(), store, &cfg)?;
    for v in &outcome.log.vals {
        println!(
            "  after {:>6} episodes: validation accuracy {:.4}",
            v.after_episodes, v.accuracy
        );
    }
    if let Some(best) = &outcome.log.best {
        println!(
            "best validation accuracy {:.4} after {} episodes",
            best.accuracy, best.after_episodes
        );
    }
    save_checkpoint(&outcome.best_params, &a.out, config_hash(&cfg.net), cfg.seed)?;
    println!("checkpoint sha256 = {}", sha256_file(&a.out)?);
    println!("checkpoint -> {}", a.out.display());
    if let Some(log_path) = &a.log {
        let json = serde_json::to_string_pretty(&outcome.log)
            .map_err(|e| Error::Config(format!("cannot serialize training log: {e}")))?;
        fs::write(log_path, json).map_err(|e| Error::io(log_path, e))?;
        println!("log -> {}", log_path.display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, invocation: &str) -> Result<()> {
    let (g, split) = load_dataset(&a.data)?;
    let split = split.ok_or_else(|| {
        Error::Config(format!(
            "dataset {} has no {SPLIT_FILE}; evaluation needs test classes",
            a.data.display()
        ))
    })?;
    let (store, stored_hash, _train_seed) = load_checkpoint(&a.checkpoint)?;
    let mut net = NetConfig::new(g.num_features());
    if let Some(h) = a.hidden {
        net.hidden = h;
    }
    if let Some(k) = a.k_neigh {
        net.k_neigh = k;
    }
    net.ablation.no_local = a.no_local;
    net.ablation.no_global = a.no_global;
    net.ablation.no_task_context = a.no_task_context;
    let want = config_hash(&net);
    if want != stored_hash {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint was built with config hash \
             {stored_hash:016x}, flags describe {want:016x}; pass the same \
             --hidden and ablation flags used in training"
        )));
    }
    let fused;
    let features = if a.task_features {
        fused = adaptive_for(&g, &a.data)?;
        &fused.x_task
    } else {
        g.features()
    };
    let mut setting = EvalSetting::new(a.n_way, a.k_shot);
    setting.m_query = a.m_query;
    setting.episodes_per_run = a.episodes;
    setting.runs = a.runs;
    let seed = resolve_seed(a.seed, None)?;
    let dataset = a.dataset.unwrap_or_else(|| {
        a.data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let report = meta_test(&g, features, &split, &store, &net, &setting, seed, &dataset)?;
    println!("{}", report.table_row());
    if let Some(out) = &a.out {
        let mut record = report.to_record();
        record.push_str(&format!("# invocation: {invocation}\n"));
        record.push_str(&format!("# checkpoint: {}\n", a.checkpoint.display()));
        record.push_str(&format!(
            "# features: {}\n",
            if a.task_features { "task" } else { "raw" }
        ));
        record.push_str(&format!("# seed: {seed}\n"));
        fs::write(out, record).map_err(|e| Error::io(out, e))?;
        println!("report -> {}", out.display());
    }
    Ok(())
}

fn cmd_gen_tasks(a: GenTasksArgs) -> Result<()> {
    let (g, _) = load_dataset(&a.data)?;
    let af = adaptive_for(&g, &a.data)?;
    let mut cfg = TaskGenConfig::new(a.n_way, a.k_shot, a.m_query);
    cfg.pool_size = a.pool_size;
    cfg.validate()?;
    let seed = resolve_seed(a.seed, None)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(a.count);
    for _ in 0..a.count {
        episodes.push(gen_pseudo_task(&af.x_task, &cfg, &mut rng)?);
    }
    write_episodes(&a.out, &episodes)?;
    println!(
        "wrote {} pseudo-tasks ({}-way {}-shot, {} queries/class) -> {}",
        episodes.len(),
        a.n_way,
        a.k_shot,
        a.m_query,
        a.out.display()
    );
    Ok(())
}

/// Fixture rows for the Monte Carlo diversity table: each is measured over
/// the meta-training classes with its published anchor count.
const DIVERSITY_ROWS: [(&str, usize); 4] =
    [("cora", 2), ("citeseer", 2), ("cora_ml", 2), ("corafull", 5)];

fn cmd_verify_anchors(a: VerifyAnchorsArgs) -> Result<()> {
    match (a.classes, a.ways) {
        (Some(c), Some(n)) => {
            if n == 0 || c < n {
                return Err(Error::Config(format!(
                    "need 1 <= ways <= classes, got classes {c}, ways {n}"
                )));
            }
            println!("{:.6}", anchor_distinct_probability(c, n));
            return Ok(());
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "--classes and --ways go together; or pass --table".into(),
            ))
        }
    }
    if !a.table {
        return Err(Error::Config(
            "pass --classes C --ways N for the closed form, or --table for \
             the fixture comparison"
                .into(),
        ));
    }
    println!(
        "{:<10} {:>7} {:>10} {:>12} {:>8}",
        "fixture", "anchors", "exact", "monte-carlo", "|diff|"
    );
    for (name, n) in DIVERSITY_ROWS {
        let spec = preset(name)?;
        let (g, split) = generate_citation(&spec, a.seed)?;
        let exact = expected_distinct(&spec.class_sizes, &split.train, n);
        let mut rng = ChaCha20Rng::seed_from_u64(crate::mix_seed(a.seed, n as u64));
        let est =
            anchor_diversity_monte_carlo(&g, n, a.trials, Some(&split.train), &mut rng)?;
        println!(
            "{:<10} {:>7} {:>10.4} {:>12.4} {:>8.4}",
            name,
            n,
            exact,
            est.mean_distinct,
            (exact - est.mean_distinct).abs()
        );
    }
    println!("({} trials per row)", a.trials);
    Ok(())
}

fn cmd_ablate(a: AblateArgs, invocation: &str) -> Result<()> {
    let (g, split) = load_dataset(&a.data)?;
    let split = split.ok_or_else(|| {
        Error::Config(format!(
            "dataset {} has no {SPLIT_FILE}; the sweep evaluates on test classes",
            a.data.display()
        ))
    })?;
    let af = adaptive_for(&g, &a.data)?;
    let base = build_train_config(g.num_features(), &a.knobs)?;
    if base.net.ablation != Ablation::default() {
        return Err(Error::Config(
            "the sweep sets ablation switches itself; drop --no-local/--no-global/--no-task-context"
                .into(),
        ));
    }
    let variants = [
        Ablation::default(),
        Ablation { no_local: true, ..Ablation::default() },
        Ablation { no_global: true, ..Ablation::default() },
        Ablation { no_task_context: true, ..Ablation::default() },
        Ablation { no_local: true, no_global: true, ..Ablation::default() },
    ];
    let mut setting = EvalSetting::new(base.task.n_way, base.task.k_shot);
    setting.m_query = a.eval_m_query;
    setting.episodes_per_run = a.eval_episodes;
    setting.runs = 1;
    let fused;
    let eval_features = if a.task_features {
        fused = af.x_task.clone();
        &fused
    } else {
        g.features()
    };
    let mut rows = Vec::new();
    for ablation in variants {
        let mut cfg = base.clone();
        cfg.net.ablation = ablation;
        let store = init_params(&cfg.net, cfg.seed)?;
        let outcome = train(&g, &af, &af.x_task, Some(&split), store, &cfg)?;
        let report = meta_test(
            &g,
            eval_features,
            &split,
            &outcome.best_params,
            &cfg.net,
            &setting,
            crate::mix_seed(cfg.seed, 0x6162_6c74),
            ablation_label(&ablation),
        )?;
        rows.push((ablation_label(&ablation), report.mean));
    }
    let mut table = String::new();
    table.push_str(&format!("{:<16} {:>9}\n", "variant", "test-acc"));
    for (name, acc) in &rows {
        table.push_str(&format!("{name:<16} {acc:>9.4}\n"));
    }
    print!("{table}");
    if let Some(out) = &a.out {
        let mut record = table;
        record.push_str(&format!("# invocation: {invocation}\n"));
        record.push_str(&format!(
            "# {} episodes of {}-way {}-shot training per variant, seed {}\n",
            base.episodes_total, base.task.n_way, base.task.k_shot, base.seed
        ));
        record.push_str(&format!(
            "# evaluated on {} {}-way {}-shot test episodes ({} features)\n",
            a.eval_episodes,
            setting.n_way,
            setting.k_shot,
            if a.task_features { "task" } else { "raw" }
        ));
        fs::write(out, record).map_err(|e| Error::io(out, e))?;
        println!("table -> {}", out.display());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (g, split, sparse) = match a.name.as_str() {
        "two-cluster" => {
            let (g, s) = two_cluster(a.nodes, a.feat_dim, a.separation, a.seed)?;
            (g, s, false)
        }
        "three-blobs" => {
            let (g, s) = three_blobs(a.per_class, a.feat_dim, a.separation, a.seed)?;
            (g, s, false)
        }
        name if PRESET_NAMES.contains(&name) => {
            let (g, s) = generate_citation(&preset(name)?, a.seed)?;
            (g, s, true)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown fixture {:?}; choose one of {}, two-cluster, three-blobs",
                other,
                PRESET_NAMES.join(", ")
            )))
        }
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    g.save_files(
        &a.out.join(FEATURES_FILE),
        &a.out.join(EDGES_FILE),
        &a.out.join(LABELS_FILE),
        sparse,
    )?;
    save_split(&a.out.join(SPLIT_FILE), &split)?;
    println!(
        "wrote {}: {} nodes, {} edges, {} classes, {} features -> {}",
        a.name,
        g.num_nodes(),
        g.num_edges(),
        g.num_classes(),
        g.num_features(),
        a.out.display()
    );
    Ok(())
}
