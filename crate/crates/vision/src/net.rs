//! The context-aware network: task-level normalization, role-embedding
//! token initialization, stacked dual-context fusion layers (local
//! neighborhood attention gated against global support attention), and a
//! multi-head cosine readout against class prototypes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Tape, Val};
use crate::error::{Error, Result};
use crate::graph::GraphStore;
use crate::mat::Mat;
use crate::mix_seed;
use crate::params::ParamStore;
use crate::tasks::Episode;

/// LayerNorm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// Role index used for query tokens (their class is hidden).
pub const MASK_ROLE: usize = usize::MAX;

/// Parameter initialization scale.
const INIT_STD: f64 = 0.02;
/// Initial readout temperature (learnable, clamped to [0.01, 100]).
const TAU_INIT: f64 = 10.0;
const TAU_MIN: f64 = 0.01;
const TAU_MAX: f64 = 100.0;

/// Seed-stream tags so neighbor sampling and noise never share a stream.
const NEIGH_TAG: u64 = 0x6e65_6967;
const NOISE_TAG: u64 = 0x6e6f_6973;

/// Paths that can be disabled for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Skip local neighborhood attention; the fusion output is the global
    /// (support) attention alone.
    pub no_local: bool,
    /// Skip global support attention; the fusion output is the local
    /// attention alone.
    pub no_global: bool,
    /// Replace every role embedding with the mask embedding.
    pub no_task_context: bool,
}

impl Ablation {
    /// True when both attention paths are disabled, which skips the fusion
    /// sublayer entirely (the FFN sublayer is retained).
    pub fn no_fusion(&self) -> bool {
        self.no_local && self.no_global
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// Input feature dimensionality F.
    pub feat_dim: usize,
    /// Token width d.
    pub hidden: usize,
    pub attn_heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub readout_heads: usize,
    pub readout_dim: usize,
    /// Neighbor sample cap per node.
    pub k_neigh: usize,
    /// Sizes the role-embedding table.
    pub max_n_way: usize,
    /// Std of train-mode additive input noise.
    pub noise_std: f64,
    pub ablation: Ablation,
}

impl NetConfig {
    pub fn new(feat_dim: usize) -> Self {
        NetConfig {
            feat_dim,
            hidden: 256,
            attn_heads: 4,
            layers: 2,
            ffn_dim: 512,
            readout_heads: 3,
            readout_dim: 64,
            k_neigh: 30,
            max_n_way: 10,
            noise_std: 0.02,
            ablation: Ablation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.feat_dim,
            self.hidden,
            self.attn_heads,
            self.layers,
            self.ffn_dim,
            self.readout_heads,
            self.readout_dim,
            self.k_neigh,
            self.max_n_way,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("all architecture counts must be >= 1".into()));
        }
        if self.hidden % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "hidden dim {} is not divisible by {} attention heads",
                self.hidden, self.attn_heads
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Standard normal via Box-Muller.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normal_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = std * standard_normal(rng);
    }
    m
}

/// Create all parameters. Weights draw N(0, 0.02^2) from a single seeded
/// stream in a fixed order (embedding, roles, layers, readout); biases are
/// zero, LayerNorm scales start at identity, temperatures at 10.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = cfg.hidden;
    let mut store = ParamStore::new();
    store.insert("embed.weight", normal_mat(&mut rng, cfg.feat_dim, d, INIT_STD))?;
    store.insert("embed.norm.gamma", Mat::from_fn(1, d, |_, _| 1.0))?;
    store.insert("embed.norm.beta", Mat::zeros(1, d))?;
    for r in 0..cfg.max_n_way {
        store.insert(&format!("roles.{}", r), normal_mat(&mut rng, 1, d, INIT_STD))?;
    }
    store.insert("roles.mask", normal_mat(&mut rng, 1, d, INIT_STD))?;
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{}.{}", l, s);
        store.insert(&p("norm1.gamma"), Mat::from_fn(1, d, |_, _| 1.0))?;
        store.insert(&p("norm1.beta"), Mat::zeros(1, d))?;
        for path in ["local", "global"] {
            for w in ["wq", "wk", "wv"] {
                store.insert(
                    &format!("layer{}.{}.{}", l, path, w),
                    normal_mat(&mut rng, d, d, INIT_STD),
                )?;
            }
        }
        store.insert(&p("gate.weight"), normal_mat(&mut rng, 2 * d, 1, INIT_STD))?;
        store.insert(&p("gate.bias"), Mat::zeros(1, 1))?;
        store.insert(&p("norm2.gamma"), Mat::from_fn(1, d, |_, _| 1.0))?;
        store.insert(&p("norm2.beta"), Mat::zeros(1, d))?;
        store.insert(&p("ffn.w1"), normal_mat(&mut rng, d, cfg.ffn_dim, INIT_STD))?;
        store.insert(&p("ffn.b1"), Mat::zeros(1, cfg.ffn_dim))?;
        store.insert(&p("ffn.w2"), normal_mat(&mut rng, cfg.ffn_dim, d, INIT_STD))?;
        store.insert(&p("ffn.b2"), Mat::zeros(1, d))?;
    }
    for h in 0..cfg.readout_heads {
        store.insert(
            &format!("readout.{}.proj", h),
            normal_mat(&mut rng, d, cfg.readout_dim, INIT_STD),
        )?;
        store.insert(&format!("readout.{}.tau", h), Mat::scalar(TAU_INIT))?;
    }
    Ok(store)
}

/// Whether a forward pass injects input noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Center the listed member rows by their shared mean; returns the centered
/// rows (in member order) and the mean vector.
pub fn task_normalize(features: &Mat, members: &[u32]) -> Result<(Mat, Vec<f64>)> {
    if members.is_empty() {
        return Err(Error::Contract("task normalization of an empty episode".into()));
    }
    let f = features.cols();
    let mut mu = vec![0.0; f];
    for &v in members {
        if v as usize >= features.rows() {
            return Err(Error::NodeOutOfRange {
                node: v as usize,
                num_nodes: features.rows(),
            });
        }
        for (m, x) in mu.iter_mut().zip(features.row(v as usize)) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m /= members.len() as f64;
    }
    let mut out = Mat::zeros(members.len(), f);
    for (r, &v) in members.iter().enumerate() {
        let src = features.row(v as usize);
        let dst = out.row_mut(r);
        for c in 0..f {
            dst[c] = src[c] - mu[c];
        }
    }
    Ok((out, mu))
}

/// Everything a forward pass needs, laid out token-first: support tokens,
/// then query tokens, then (separately) frozen neighbor-context rows.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    /// Task-normalized (and, in train mode, noised) member features.
    pub feats: Mat,
    /// Role per token: relative label for support, `MASK_ROLE` for queries.
    pub roles: Vec<usize>,
    /// Neighbor-only context features, centered by the same episode mean.
    pub neigh_feats: Mat,
    /// Per token: indices into the combined row space
    /// `[tokens (0..n_tokens) | neighbor rows (n_tokens..)]` that form the
    /// node's local attention block.
    pub blocks: Vec<Vec<usize>>,
    pub support_labels: Vec<u32>,
    pub query_truth: Vec<u32>,
    /// Episode mean used for centering (diagnostics).
    pub mu: Vec<f64>,
}

impl EpisodeBatch {
    pub fn n_tokens(&self) -> usize {
        self.feats.rows()
    }

    pub fn n_support(&self) -> usize {
        self.support_labels.len()
    }

    /// Assemble the batch for an episode: gather member features, center
    /// them by the episode mean, sample each member's neighbor block with a
    /// per-node seeded stream (degree 0 falls back to the node itself),
    /// embed neighbor rows that are not themselves episode members, and in
    /// train mode add zero-mean input noise.
    pub fn build(
        g: &GraphStore,
        features: &Mat,
        ep: &Episode,
        cfg: &NetConfig,
        mode: Mode,
        seed: u64,
    ) -> Result<EpisodeBatch> {
        cfg.validate()?;
        ep.check_invariants()?;
        if features.rows() != g.num_nodes() || features.cols() != cfg.feat_dim {
            return Err(Error::Contract(format!(
                "feature matrix is {}x{}, expected {}x{}",
                features.rows(),
                features.cols(),
                g.num_nodes(),
                cfg.feat_dim
            )));
        }
        if ep.n_way > cfg.max_n_way {
            return Err(Error::Config(format!(
                "{}-way episode exceeds the configured maximum of {}",
                ep.n_way, cfg.max_n_way
            )));
        }
        let members = ep.member_nodes();
        let n_tok = members.len();
        let (feats, mu) = task_normalize(features, &members)?;

        // token index per member node
        let mut token_of = std::collections::BTreeMap::new();
        for (i, &v) in members.iter().enumerate() {
            token_of.insert(v, i);
        }

        // per-node neighbor sampling, seeded by (episode seed, node id)
        let mut sampled: Vec<Vec<u32>> = Vec::with_capacity(n_tok);
        let neigh_seed = mix_seed(seed, NEIGH_TAG);
        for &v in &members {
            let nbrs = g.neighbors(v as usize)?;
            let chosen: Vec<u32> = if nbrs.is_empty() {
                Vec::new()
            } else if nbrs.len() <= cfg.k_neigh {
                nbrs.to_vec()
            } else {
                let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(neigh_seed, v as u64));
                let mut idx: Vec<usize> = (0..nbrs.len()).collect();
                for i in 0..cfg.k_neigh {
                    let j = rng.gen_range(i..idx.len());
                    idx.swap(i, j);
                }
                idx.truncate(cfg.k_neigh);
                let mut picked: Vec<u32> = idx.into_iter().map(|i| nbrs[i]).collect();
                picked.sort_unstable();
                picked
            };
            sampled.push(chosen);
        }

        // rows for neighbors that are not episode members, ascending node id
        let mut extra: std::collections::BTreeSet<u32> = std::collections::BTreeSet::new();
        for chosen in &sampled {
            for &u in chosen {
                if !token_of.contains_key(&u) {
                    extra.insert(u);
                }
            }
        }
        let extra: Vec<u32> = extra.into_iter().collect();
        let row_of_extra: std::collections::BTreeMap<u32, usize> =
            extra.iter().enumerate().map(|(i, &u)| (u, n_tok + i)).collect();
        let mut neigh_feats = Mat::zeros(extra.len(), features.cols());
        for (r, &u) in extra.iter().enumerate() {
            let src = features.row(u as usize);
            let dst = neigh_feats.row_mut(r);
            for c in 0..features.cols() {
                dst[c] = src[c] - mu[c];
            }
        }

        let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(n_tok);
        for (i, chosen) in sampled.iter().enumerate() {
            if chosen.is_empty() {
                blocks.push(vec![i]);
            } else {
                blocks.push(
                    chosen
                        .iter()
                        .map(|u| token_of.get(u).copied().unwrap_or_else(|| row_of_extra[u]))
                        .collect(),
                );
            }
        }

        let mut feats = feats;
        if mode == Mode::Train && cfg.noise_std > 0.0 {
            let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, NOISE_TAG));
            for x in feats.as_mut_slice() {
                *x += cfg.noise_std * standard_normal(&mut rng);
            }
            for x in neigh_feats.as_mut_slice() {
                *x += cfg.noise_std * standard_normal(&mut rng);
            }
        }

        let roles: Vec<usize> = if cfg.ablation.no_task_context {
            vec![MASK_ROLE; n_tok]
        } else {
            ep.support
                .iter()
                .map(|&(_, l)| l as usize)
                .chain(std::iter::repeat(MASK_ROLE).take(ep.query.len()))
                .collect()
        };

        Ok(EpisodeBatch {
            n_way: ep.n_way,
            k_shot: ep.k_shot,
            m_query: ep.m_query,
            feats,
            roles,
            neigh_feats,
            blocks,
            support_labels: ep.support.iter().map(|&(_, l)| l).collect(),
            query_truth: ep.query_truth.clone(),
            mu,
        })
    }
}

/// LayerNorm with learned scale and shift.
fn layer_norm_affine(
    t: &mut Tape,
    store: &ParamStore,
    x: Val,
    gamma: &str,
    beta: &str,
) -> Result<Val> {
    let n = t.layer_norm_rows(x, LN_EPS);
    let g = t.param(store, gamma)?;
    let b = t.param(store, beta)?;
    let s = t.mul_row(n, g)?;
    t.add_row(s, b)
}

/// Shared feature embedding + LayerNorm, no role: used for neighbor rows.
pub fn embed_tokens(t: &mut Tape, store: &ParamStore, x: Val) -> Result<Val> {
    let w = t.param(store, "embed.weight")?;
    let e = t.matmul(x, w)?;
    layer_norm_affine(t, store, e, "embed.norm.gamma", "embed.norm.beta")
}

/// Token initialization: LayerNorm(W_f x + e_role) per member row.
pub fn init_tokens(
    t: &mut Tape,
    store: &ParamStore,
    cfg: &NetConfig,
    x: Val,
    roles: &[usize],
) -> Result<Val> {
    let rows = t.value(x).rows();
    if roles.len() != rows {
        return Err(Error::Contract(format!(
            "{} roles for {} token rows",
            roles.len(),
            rows
        )));
    }
    let mask = t.param(store, "roles.mask")?;
    let mut role_vals: Vec<Option<Val>> = vec![None; cfg.max_n_way];
    let mut stacked = Vec::with_capacity(rows);
    for &r in roles {
        let v = if r == MASK_ROLE {
            mask
        } else {
            if r >= cfg.max_n_way {
                return Err(Error::Contract(format!(
                    "role {} exceeds the role table (max {}-way)",
                    r, cfg.max_n_way
                )));
            }
            match role_vals[r] {
                Some(v) => v,
                None => {
                    let v = t.param(store, &format!("roles.{}", r))?;
                    role_vals[r] = Some(v);
                    v
                }
            }
        };
        stacked.push(v);
    }
    let role_mat = t.concat_rows(&stacked)?;
    let w = t.param(store, "embed.weight")?;
    let e = t.matmul(x, w)?;
    let summed = t.add(e, role_mat)?;
    layer_norm_affine(t, store, summed, "embed.norm.gamma", "embed.norm.beta")
}

/// Multi-head scaled-dot attention (no output projection): queries from
/// `q`, keys/values from `kv`, heads split along columns.
fn multi_head_attention(
    t: &mut Tape,
    q: Val,
    kv: Val,
    wq: Val,
    wk: Val,
    wv: Val,
    heads: usize,
) -> Result<Val> {
    let d = t.value(q).cols();
    let hd = d / heads;
    let qp = t.matmul(q, wq)?;
    let kp = t.matmul(kv, wk)?;
    let vp = t.matmul(kv, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_cols(qp, h * hd, hd)?;
        let kh = t.slice_cols(kp, h * hd, hd)?;
        let vh = t.slice_cols(vp, h * hd, hd)?;
        let scores = t.matmul_nt(qh, kh)?;
        let scaled = t.scale_k(scores, 1.0 / (hd as f64).sqrt());
        let attn = t.row_softmax(scaled);
        outs.push(t.matmul(attn, vh)?);
    }
    t.concat_cols(&outs)
}

/// One dual-context layer's result: updated tokens plus the gate column
/// (absent when an ablation removes the gate).
pub struct LayerOut {
    pub tokens: Val,
    pub alpha: Option<Val>,
}

/// Pre-norm dual-context fusion layer followed by a pre-norm FFN sublayer.
///
/// `tokens` are the n_tok member tokens; `neigh` holds frozen embedded
/// neighbor-only rows appended below them to form the local key space;
/// `blocks[i]` indexes that combined space. Global attention keys are the
/// first `n_support` tokens.
pub fn dual_context_layer(
    t: &mut Tape,
    store: &ParamStore,
    cfg: &NetConfig,
    layer: usize,
    tokens: Val,
    neigh: Option<Val>,
    blocks: &[Vec<usize>],
    n_support: usize,
) -> Result<LayerOut> {
    let n_tok = t.value(tokens).rows();
    if n_support == 0 || n_support > n_tok {
        return Err(Error::Contract(format!(
            "layer needs 1..={} support tokens, got {}",
            n_tok, n_support
        )));
    }
    if blocks.len() != n_tok {
        return Err(Error::Contract(format!(
            "{} neighbor blocks for {} tokens",
            blocks.len(),
            n_tok
        )));
    }
    let p = |s: &str| format!("layer{}.{}", layer, s);

    let mut alpha = None;
    let h_after_fusion = if cfg.ablation.no_fusion() {
        tokens
    } else {
        // shared pre-norm over member tokens and the neighbor key space
        let combined = match neigh {
            Some(nv) => {
                let cat = t.concat_rows(&[tokens, nv])?;
                layer_norm_affine(t, store, cat, &p("norm1.gamma"), &p("norm1.beta"))?
            }
            None => layer_norm_affine(t, store, tokens, &p("norm1.gamma"), &p("norm1.beta"))?,
        };
        let member_idx: Vec<usize> = (0..n_tok).collect();
        let u = t.gather_rows(combined, &member_idx)?;

        let z_task = if cfg.ablation.no_global {
            None
        } else {
            let sup_idx: Vec<usize> = (0..n_support).collect();
            let sup = t.gather_rows(combined, &sup_idx)?;
            let wq = t.param(store, &p("global.wq"))?;
            let wk = t.param(store, &p("global.wk"))?;
            let wv = t.param(store, &p("global.wv"))?;
            Some(multi_head_attention(t, u, sup, wq, wk, wv, cfg.attn_heads)?)
        };

        let z_struct = if cfg.ablation.no_local {
            None
        } else {
            let wq = t.param(store, &p("local.wq"))?;
            let wk = t.param(store, &p("local.wk"))?;
            let wv = t.param(store, &p("local.wv"))?;
            let mut rows = Vec::with_capacity(n_tok);
            for (i, block) in blocks.iter().enumerate() {
                if block.is_empty() {
                    return Err(Error::Contract(format!("empty neighbor block for token {}", i)));
                }
                let qi = t.gather_rows(combined, &[i])?;
                let ki = t.gather_rows(combined, block)?;
                rows.push(multi_head_attention(t, qi, ki, wq, wk, wv, cfg.attn_heads)?);
            }
            Some(t.concat_rows(&rows)?)
        };

        let fused = match (z_struct, z_task) {
            (Some(zs), Some(zt)) => {
                let cat = t.concat_cols(&[zs, zt])?;
                let gw = t.param(store, &p("gate.weight"))?;
                let gb = t.param(store, &p("gate.bias"))?;
                let pre = t.matmul(cat, gw)?;
                let ones = t.leaf(Mat::from_fn(n_tok, 1, |_, _| 1.0));
                let bias_col = t.matmul(ones, gb)?;
                let pre_b = t.add(pre, bias_col)?;
                let a = t.sigmoid(pre_b);
                alpha = Some(a);
                let neg = t.scale_k(a, -1.0);
                let one_minus = t.add_k(neg, 1.0);
                let left = t.mul_col(zs, one_minus)?;
                let right = t.mul_col(zt, a)?;
                t.add(left, right)?
            }
            (Some(zs), None) => zs,
            (None, Some(zt)) => zt,
            (None, None) => unreachable!("no_fusion handled above"),
        };
        t.add(tokens, fused)?
    };

    // FFN sublayer (pre-norm, GELU), kept under every ablation
    let n2 = layer_norm_affine(t, store, h_after_fusion, &p("norm2.gamma"), &p("norm2.beta"))?;
    let w1 = t.param(store, &p("ffn.w1"))?;
    let b1 = t.param(store, &p("ffn.b1"))?;
    let w2 = t.param(store, &p("ffn.w2"))?;
    let b2 = t.param(store, &p("ffn.b2"))?;
    let m1 = t.matmul(n2, w1)?;
    let a1 = t.add_row(m1, b1)?;
    let g1 = t.gelu(a1);
    let m2 = t.matmul(g1, w2)?;
    let a2 = t.add_row(m2, b2)?;
    let out = t.add(h_after_fusion, a2)?;
    Ok(LayerOut { tokens: out, alpha })
}

/// Multi-head cosine readout: per head, project tokens, build class
/// prototypes as mean projected support rows, score queries by
/// temperature-scaled cosine, and average over heads. Returns the logits
/// together with each head's (unnormalized) support and query projections.
#[allow(clippy::type_complexity)]
pub fn readout(
    t: &mut Tape,
    store: &ParamStore,
    cfg: &NetConfig,
    tokens: Val,
    support_labels: &[u32],
    n_way: usize,
) -> Result<(Val, Vec<Val>, Vec<Val>)> {
    let n_tok = t.value(tokens).rows();
    let n_sup = support_labels.len();
    if n_sup == 0 || n_sup >= n_tok {
        return Err(Error::Contract(format!(
            "readout needs support and query tokens, got {} support of {} total",
            n_sup, n_tok
        )));
    }
    let class_rows: Vec<Vec<usize>> = (0..n_way as u32)
        .map(|k| {
            support_labels
                .iter()
                .enumerate()
                .filter(|&(_, &l)| l == k)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    if let Some(k) = class_rows.iter().position(|r| r.is_empty()) {
        return Err(Error::Contract(format!("class {} has no support members", k)));
    }
    let sup_idx: Vec<usize> = (0..n_sup).collect();
    let qry_idx: Vec<usize> = (n_sup..n_tok).collect();
    let mut support_heads = Vec::with_capacity(cfg.readout_heads);
    let mut query_heads = Vec::with_capacity(cfg.readout_heads);
    let mut acc: Option<Val> = None;
    for h in 0..cfg.readout_heads {
        let proj = t.param(store, &format!("readout.{}.proj", h))?;
        let p = t.matmul(tokens, proj)?;
        let sup = t.gather_rows(p, &sup_idx)?;
        let qry = t.gather_rows(p, &qry_idx)?;
        let mut protos = Vec::with_capacity(n_way);
        for rows in &class_rows {
            let cls = t.gather_rows(sup, rows)?;
            protos.push(t.mean_rows(cls));
        }
        let proto_mat = t.concat_rows(&protos)?;
        let qn = t.l2_normalize_rows(qry);
        let pn = t.l2_normalize_rows(proto_mat);
        let cos = t.matmul_nt(qn, pn)?;
        let tau = t.param(store, &format!("readout.{}.tau", h))?;
        let tau_c = t.clamp(tau, TAU_MIN, TAU_MAX);
        let scored = t.mul_scalar(cos, tau_c)?;
        acc = Some(match acc {
            None => scored,
            Some(a) => t.add(a, scored)?,
        });
        support_heads.push(sup);
        query_heads.push(qry);
    }
    let logits = t.scale_k(acc.expect("at least one head"), 1.0 / cfg.readout_heads as f64);
    Ok((logits, support_heads, query_heads))
}

/// A completed forward pass, with the tape still alive so losses can be
/// composed on top and gradients taken.
pub struct Forward {
    pub tape: Tape,
    pub logits: Val,
    pub support_heads: Vec<Val>,
    pub query_heads: Vec<Val>,
    pub support_labels: Vec<u32>,
    pub query_truth: Vec<u32>,
    /// Per layer, the gate values actually used (empty under ablations
    /// that remove the gate).
    pub gates: Vec<Mat>,
}

impl Forward {
    pub fn logits_mat(&self) -> &Mat {
        self.tape.value(self.logits)
    }
}

/// Full forward pass over one episode: batch assembly, token init, stacked
/// dual-context layers, cosine readout.
pub fn forward_episode(
    g: &GraphStore,
    features: &Mat,
    ep: &Episode,
    store: &ParamStore,
    cfg: &NetConfig,
    mode: Mode,
    seed: u64,
) -> Result<Forward> {
    let batch = EpisodeBatch::build(g, features, ep, cfg, mode, seed)?;
    let mut t = Tape::new();
    let x = t.leaf(batch.feats.clone());
    let mut tokens = init_tokens(&mut t, store, cfg, x, &batch.roles)?;
    let neigh = if batch.neigh_feats.rows() > 0 {
        let nx = t.leaf(batch.neigh_feats.clone());
        Some(embed_tokens(&mut t, store, nx)?)
    } else {
        None
    };
    let mut gates = Vec::new();
    for l in 0..cfg.layers {
        let out = dual_context_layer(
            &mut t,
            store,
            cfg,
            l,
            tokens,
            neigh,
            &batch.blocks,
            batch.n_support(),
        )?;
        tokens = out.tokens;
        if let Some(a) = out.alpha {
            gates.push(t.value(a).clone());
        }
    }
    let (logits, support_heads, query_heads) =
        readout(&mut t, store, cfg, tokens, &batch.support_labels, batch.n_way)?;
    Ok(Forward {
        tape: t,
        logits,
        support_heads,
        query_heads,
        support_labels: batch.support_labels,
        query_truth: batch.query_truth,
        gates,
    })
}
