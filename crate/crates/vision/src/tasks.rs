//! Episode construction: unsupervised pseudo-tasks built by anchor +
//! sequential-exclusion nearest-neighbor sampling, labeled evaluation
//! episodes drawn from class splits, and anchor-diversity statistics.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassSplit, GraphStore, Phase};
use crate::mat::{cosine, Mat};

/// One N-way K-shot problem instance. Relative labels are local to the
/// episode: support pairs carry labels in `0..n_way`, and `query_truth`
/// holds the hidden relative label of each query node (loss/scoring only).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub support: Vec<(u32, u32)>,
    pub query: Vec<u32>,
    pub query_truth: Vec<u32>,
}

impl Episode {
    /// Structural invariants: exactly K support nodes per relative label,
    /// N·M queries with truths in range, and no node id used twice.
    pub fn check_invariants(&self) -> Result<()> {
        let (n, k, m) = (self.n_way, self.k_shot, self.m_query);
        if self.support.len() != n * k {
            return Err(Error::Contract(format!(
                "episode has {} support nodes, expected {}",
                self.support.len(),
                n * k
            )));
        }
        if self.query.len() != n * m || self.query_truth.len() != n * m {
            return Err(Error::Contract(format!(
                "episode has {} queries / {} truths, expected {}",
                self.query.len(),
                self.query_truth.len(),
                n * m
            )));
        }
        let mut per_label = vec![0usize; n];
        for &(_, l) in &self.support {
            let l = l as usize;
            if l >= n {
                return Err(Error::Contract(format!("support label {} out of 0..{}", l, n)));
            }
            per_label[l] += 1;
        }
        if per_label.iter().any(|&c| c != k) {
            return Err(Error::Contract(format!(
                "support counts per label {:?}, expected {} each",
                per_label, k
            )));
        }
        for &t in &self.query_truth {
            if t as usize >= n {
                return Err(Error::Contract(format!("query truth {} out of 0..{}", t, n)));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self.support.iter().map(|&(v, _)| v).chain(self.query.iter().copied()) {
            if !seen.insert(id) {
                return Err(Error::Contract(format!("node {} appears twice in episode", id)));
            }
        }
        Ok(())
    }

    /// All node ids referenced by the episode, support first.
    pub fn member_nodes(&self) -> Vec<u32> {
        self.support
            .iter()
            .map(|&(v, _)| v)
            .chain(self.query.iter().copied())
            .collect()
    }
}

/// Knobs for pseudo-task generation.
#[derive(Clone, Copy, Debug)]
pub struct TaskGenConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    /// Shared candidate-pool size per episode.
    pub pool_size: usize,
    /// Fresh-pool retries after exhaustion before giving up.
    pub max_pool_retries: usize,
}

impl TaskGenConfig {
    pub fn new(n_way: usize, k_shot: usize, m_query: usize) -> Self {
        TaskGenConfig {
            n_way,
            k_shot,
            m_query,
            pool_size: 4096,
            max_pool_retries: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.m_query == 0 {
            return Err(Error::Config(
                "n_way, k_shot and m_query must all be positive".into(),
            ));
        }
        let need = self.n_way * (self.k_shot + self.m_query) + self.n_way;
        if self.pool_size < need {
            return Err(Error::Config(format!(
                "pool_size {} cannot host an {}-way {}-shot/{}-query episode (needs >= {})",
                self.pool_size, self.n_way, self.k_shot, self.m_query, need
            )));
        }
        Ok(())
    }
}

/// `count` distinct values uniformly from `0..population`, draw order kept.
fn sample_indices<R: Rng>(rng: &mut R, population: usize, count: usize) -> Vec<u32> {
    debug_assert!(count <= population);
    if count * 8 <= population {
        // rejection sampling: collisions are rare at this ratio
        let mut out: Vec<u32> = Vec::with_capacity(count);
        while out.len() < count {
            let cand = rng.gen_range(0..population) as u32;
            if !out.contains(&cand) {
                out.push(cand);
            }
        }
        out
    } else {
        // partial Fisher-Yates
        let mut idx: Vec<u32> = (0..population as u32).collect();
        for i in 0..count {
            let j = rng.gen_range(i..population);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    }
}

/// `count` distinct elements of `pop` uniformly without replacement.
fn sample_from<R: Rng>(rng: &mut R, pop: &[u32], count: usize) -> Vec<u32> {
    sample_indices(rng, pop.len(), count)
        .into_iter()
        .map(|i| pop[i as usize])
        .collect()
}

/// Build one pseudo-task over task-adapted features `x_task` (rows are
/// nodes). Draws N distinct anchors, one shared candidate pool excluding
/// the anchors, then for each anchor in order takes the K+M unclaimed pool
/// nodes most cosine-similar to it (ties broken by ascending node id):
/// the first K become support with relative label j, the next M become
/// queries with hidden truth j. A pool exhausted mid-episode is resampled
/// with the same anchors up to `max_pool_retries` times, then the episode
/// is abandoned.
pub fn gen_pseudo_task<R: Rng>(x_task: &Mat, cfg: &TaskGenConfig, rng: &mut R) -> Result<Episode> {
    cfg.validate()?;
    let v = x_task.rows();
    let (n, k, m) = (cfg.n_way, cfg.k_shot, cfg.m_query);
    if v < n + 1 {
        return Err(Error::Config(format!(
            "graph has {} nodes; {}-way generation needs at least {}",
            v,
            n,
            n + 1
        )));
    }
    let anchors = sample_indices(rng, v, n);
    let is_anchor = {
        let mut flags = vec![false; v];
        for &a in &anchors {
            flags[a as usize] = true;
        }
        flags
    };
    let non_anchors: Vec<u32> = (0..v as u32).filter(|&i| !is_anchor[i as usize]).collect();

    let mut last_err = None;
    for _attempt in 0..=cfg.max_pool_retries {
        let pool: Vec<u32> = if non_anchors.len() <= cfg.pool_size {
            non_anchors.clone()
        } else {
            sample_from(rng, &non_anchors, cfg.pool_size)
        };
        match assemble_groups(x_task, &anchors, &pool, k, m) {
            Ok((support, query, query_truth)) => {
                let ep = Episode {
                    n_way: n,
                    k_shot: k,
                    m_query: m,
                    support,
                    query,
                    query_truth,
                };
                ep.check_invariants()?;
                return Ok(ep);
            }
            Err(e @ Error::PoolExhausted { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran at least once"))
}

/// Sequential-exclusion selection for a fixed anchor list and pool.
#[allow(clippy::type_complexity)]
fn assemble_groups(
    x_task: &Mat,
    anchors: &[u32],
    pool: &[u32],
    k: usize,
    m: usize,
) -> Result<(Vec<(u32, u32)>, Vec<u32>, Vec<u32>)> {
    let mut claimed = vec![false; x_task.rows()];
    let mut support = Vec::with_capacity(anchors.len() * k);
    let mut query = Vec::with_capacity(anchors.len() * m);
    let mut query_truth = Vec::with_capacity(anchors.len() * m);
    let mut available = pool.len();
    for (j, &anchor) in anchors.iter().enumerate() {
        let a_row = x_task.row(anchor as usize);
        let mut ranked: Vec<(f64, u32)> = pool
            .iter()
            .filter(|&&p| !claimed[p as usize])
            .map(|&p| (cosine(a_row, x_task.row(p as usize)), p))
            .collect();
        if ranked.len() < k + m {
            return Err(Error::PoolExhausted {
                anchor: j,
                needed: k + m,
                available: ranked.len(),
            });
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (rank, &(_, node)) in ranked[..k + m].iter().enumerate() {
            claimed[node as usize] = true;
            available -= 1;
            if rank < k {
                support.push((node, j as u32));
            } else {
                query.push(node);
                query_truth.push(j as u32);
            }
        }
    }
    let _ = available;
    Ok((support, query, query_truth))
}

/// Sample a labeled evaluation episode: N classes without replacement from
/// the phase's class set, then K+M labeled nodes per class without
/// replacement; relative labels follow class draw order.
pub fn gen_eval_episode<R: Rng>(
    g: &GraphStore,
    split: &ClassSplit,
    phase: Phase,
    n_way: usize,
    k_shot: usize,
    m_query: usize,
    rng: &mut R,
) -> Result<Episode> {
    let classes: &[u32] = match phase {
        Phase::Train => &split.train,
        Phase::Val => &split.val,
        Phase::Test => &split.test,
    };
    if n_way == 0 || k_shot == 0 || m_query == 0 {
        return Err(Error::Config(
            "n_way, k_shot and m_query must all be positive".into(),
        ));
    }
    if classes.len() < n_way {
        return Err(Error::Config(format!(
            "{} split has {} classes, cannot sample a {}-way episode",
            phase, classes.len(), n_way
        )));
    }
    let drawn = sample_from(rng, classes, n_way);
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * m_query);
    let mut query_truth = Vec::with_capacity(n_way * m_query);
    for (rel, &class) in drawn.iter().enumerate() {
        let nodes = g.nodes_of_class(class);
        if nodes.len() < k_shot + m_query {
            return Err(Error::Config(format!(
                "class {} has {} labeled nodes, {}-shot/{}-query needs {}",
                class,
                nodes.len(),
                k_shot,
                m_query,
                k_shot + m_query
            )));
        }
        let picks = sample_from(rng, &nodes, k_shot + m_query);
        for (i, &node) in picks.iter().enumerate() {
            if i < k_shot {
                support.push((node, rel as u32));
            } else {
                query.push(node);
                query_truth.push(rel as u32);
            }
        }
    }
    let ep = Episode {
        n_way,
        k_shot,
        m_query,
        support,
        query,
        query_truth,
    };
    ep.check_invariants()?;
    Ok(ep)
}

/// Probability that `n` anchors drawn with uniform class assignment from
/// `c_total` classes all land in distinct classes:
/// prod_{i=0}^{n-1} (c_total - i) / c_total^n.
pub fn anchor_distinct_probability(c_total: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if c_total == 0 || n > c_total {
        return 0.0;
    }
    let c = c_total as f64;
    (0..n).map(|i| (c - i as f64) / c).product()
}

/// Monte-Carlo estimate of anchor diversity together with how many
/// unlabeled nodes had to be excluded from the draw population.
#[derive(Clone, Copy, Debug)]
pub struct DiversityEstimate {
    pub mean_distinct: f64,
    pub excluded_unlabeled: usize,
}

/// Mean number of distinct true classes over `trials` draws of `n`
/// uniformly random labeled nodes (without replacement within a draw),
/// honouring the graph's empirical class proportions. Unlabeled nodes are
/// excluded from the population and counted. When `classes` is given, the
/// population is further restricted to nodes of those classes, which is
/// how diversity is measured over a meta-training class subset.
pub fn anchor_diversity_monte_carlo<R: Rng>(
    g: &GraphStore,
    n: usize,
    trials: usize,
    classes: Option<&[u32]>,
    rng: &mut R,
) -> Result<DiversityEstimate> {
    if n == 0 || trials == 0 {
        return Err(Error::Config("diversity estimate needs n >= 1 and trials >= 1".into()));
    }
    let keep = |c: u32| classes.map_or(true, |cs| cs.contains(&c));
    let mut population: Vec<u32> = Vec::new();
    let mut excluded_unlabeled = 0usize;
    for (v, lab) in g.labels().iter().enumerate() {
        match lab {
            Some(c) if keep(*c) => population.push(v as u32),
            Some(_) => {}
            None => excluded_unlabeled += 1,
        }
    }
    if population.len() < n {
        return Err(Error::Config(format!(
            "population of {} labeled nodes cannot support draws of {}",
            population.len(),
            n
        )));
    }
    // stamp marks avoid clearing a per-class set every trial
    let mut stamp = vec![usize::MAX; g.num_classes().max(1)];
    let mut total_distinct = 0usize;
    for t in 0..trials {
        let picks = sample_from(rng, &population, n);
        for node in picks {
            let c = g.labels()[node as usize].expect("population is labeled") as usize;
            if stamp[c] != t {
                stamp[c] = t;
                total_distinct += 1;
            }
        }
    }
    Ok(DiversityEstimate {
        mean_distinct: total_distinct as f64 / trials as f64,
        excluded_unlabeled,
    })
}

/// Append-free episode dump: one structured record per line.
pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for ep in episodes {
        let line = serde_json::to_string(ep)
            .map_err(|e| Error::Contract(format!("episode serialization failed: {}", e)))?;
        writeln!(file, "{}", line).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read an episode dump, validating every record's invariants.
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut episodes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad episode record: {}", e)))?;
        ep.check_invariants()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        episodes.push(ep);
    }
    Ok(episodes)
}
