//! In-memory graph storage and the text loaders for the three dataset files
//! (features, edges, labels) plus the class-split file.
//!
//! Edges are undirected: input pairs are symmetrized, self-loops dropped and
//! duplicates merged at load time. Adjacency is CSR with neighbor lists in
//! ascending node order. Features are stored dense.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Immutable graph: dense node features, CSR adjacency, optional labels.
#[derive(Clone, Debug)]
pub struct GraphStore {
    features: Mat,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    labels: Vec<Option<u32>>,
    num_classes: usize,
    content_hash: [u8; 32],
}

impl GraphStore {
    /// Build a graph from parts. `edges` may contain duplicates, self-loops
    /// and single-direction pairs; the stored adjacency is symmetric, deduped
    /// and self-loop-free with ascending neighbor lists.
    pub fn new(
        features: Mat,
        edges: &[(u32, u32)],
        labels: Vec<Option<u32>>,
    ) -> Result<GraphStore> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "labels length {} does not match node count {}",
                labels.len(),
                n
            )));
        }
        let mut pairs = BTreeSet::new();
        for &(u, v) in edges {
            let (u, v) = (u as usize, v as usize);
            if u >= n {
                return Err(Error::NodeOutOfRange {
                    node: u,
                    num_nodes: n,
                });
            }
            if v >= n {
                return Err(Error::NodeOutOfRange {
                    node: v,
                    num_nodes: n,
                });
            }
            if u == v {
                continue; // self-loops are stripped; smoothing re-adds them
            }
            pairs.insert((u as u32, v as u32));
            pairs.insert((v as u32, u as u32));
        }
        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        // BTreeSet iteration is (u, v)-sorted, so each neighbor list comes
        // out ascending without a separate sort.
        let mut targets = Vec::with_capacity(pairs.len());
        for &(_, v) in &pairs {
            targets.push(v);
        }
        let num_classes = labels
            .iter()
            .flatten()
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(0);
        let mut g = GraphStore {
            features,
            offsets,
            targets,
            labels,
            num_classes,
            content_hash: [0; 32],
        };
        g.content_hash = g.compute_hash();
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    /// Neighbors of `v` in ascending node order.
    pub fn neighbors(&self, v: usize) -> Result<&[u32]> {
        if v >= self.num_nodes() {
            return Err(Error::NodeOutOfRange {
                node: v,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(&self.targets[self.offsets[v]..self.offsets[v + 1]])
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn label(&self, v: usize) -> Option<u32> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    /// All nodes carrying label `c`, ascending.
    pub fn nodes_of_class(&self, c: u32) -> Vec<u32> {
        (0..self.num_nodes() as u32)
            .filter(|&v| self.labels[v as usize] == Some(c))
            .collect()
    }

    /// SHA-256 over the full content (features, adjacency, labels); used to
    /// key derived-feature caches.
    pub fn content_hash(&self) -> [u8; 32] {
        self.content_hash
    }

    fn compute_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.num_nodes() as u64).to_le_bytes());
        h.update((self.num_features() as u64).to_le_bytes());
        for &x in self.features.as_slice() {
            h.update(x.to_le_bytes());
        }
        for &o in &self.offsets {
            h.update((o as u64).to_le_bytes());
        }
        for &t in &self.targets {
            h.update(t.to_le_bytes());
        }
        for l in &self.labels {
            match l {
                Some(c) => h.update((*c as i64).to_le_bytes()),
                None => h.update((-1i64).to_le_bytes()),
            }
        }
        h.finalize().into()
    }

    /// Write the graph back out in the loadable text formats. Features are
    /// written sparse (`idx:val`) when `sparse` is set, dense otherwise.
    pub fn save_files(
        &self,
        features_path: &Path,
        edges_path: &Path,
        labels_path: &Path,
        sparse: bool,
    ) -> Result<()> {
        let mut fbuf = String::new();
        for v in 0..self.num_nodes() {
            let row = self.features.row(v);
            if sparse {
                write!(fbuf, "{}\t", v).unwrap();
                let mut first = true;
                for (i, &x) in row.iter().enumerate() {
                    if x != 0.0 {
                        if !first {
                            fbuf.push(' ');
                        }
                        write!(fbuf, "{}:{}", i, x).unwrap();
                        first = false;
                    }
                }
                fbuf.push('\n');
            } else {
                write!(fbuf, "{}\t", v).unwrap();
                for (i, &x) in row.iter().enumerate() {
                    if i > 0 {
                        fbuf.push(' ');
                    }
                    write!(fbuf, "{}", x).unwrap();
                }
                fbuf.push('\n');
            }
        }
        fs::write(features_path, fbuf).map_err(|e| Error::io(features_path, e))?;

        let mut ebuf = String::new();
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u)? {
                if (v as usize) > u {
                    writeln!(ebuf, "{} {}", u, v).unwrap();
                }
            }
        }
        fs::write(edges_path, ebuf).map_err(|e| Error::io(edges_path, e))?;

        let mut lbuf = String::new();
        for v in 0..self.num_nodes() {
            if let Some(c) = self.labels[v] {
                writeln!(lbuf, "{} {}", v, c).unwrap();
            }
        }
        fs::write(labels_path, lbuf).map_err(|e| Error::io(labels_path, e))?;
        Ok(())
    }
}

/// Load a graph from the three text files.
///
/// Features: `node_id<TAB>f_0 f_1 ...` (dense) or `node_id<TAB>idx:val ...`
/// (sparse). Edges: `u v` per line, undirected. Labels: `node_id class_id`;
/// nodes absent from the labels file are unlabeled.
pub fn load_graph(features: &Path, edges: &Path, labels: &Path) -> Result<GraphStore> {
    let (feat_mat, n) = load_features(features)?;
    let edge_list = load_edges(edges, n)?;
    let label_vec = load_labels(labels, n)?;
    GraphStore::new(feat_mat, &edge_list, label_vec)
}

struct FeatureRow {
    node: usize,
    dense: Option<Vec<f64>>,
    sparse: Option<Vec<(usize, f64)>>,
}

fn load_features(path: &Path) -> Result<(Mat, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut dense_width: Option<usize> = None;
    let mut max_sparse_idx = 0usize;
    let mut saw_sparse = false;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // a bare id with no value part is an all-zero (sparse) row
        let (id_part, rest) = line.split_once('\t').unwrap_or((line, ""));
        if rest.is_empty() && id_part.split_whitespace().count() != 1 {
            return Err(Error::parse(path, lineno, "expected node_id<TAB>values"));
        }
        let node: usize = id_part
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {:?}", id_part)))?;
        let rest = rest.trim();
        if rest.is_empty() {
            rows.push(FeatureRow {
                node,
                dense: None,
                sparse: Some(Vec::new()),
            });
            continue;
        }
        let is_sparse = rest.split_whitespace().next().map(|t| t.contains(':')) == Some(true);
        if is_sparse {
            let mut entries = Vec::new();
            for tok in rest.split_whitespace() {
                let (i, v) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad sparse entry {:?}", tok)))?;
                let idx: usize = i
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad feature index {:?}", i)))?;
                let val: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad feature value {:?}", v)))?;
                if !val.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite feature value"));
                }
                max_sparse_idx = max_sparse_idx.max(idx);
                entries.push((idx, val));
            }
            saw_sparse = true;
            rows.push(FeatureRow {
                node,
                dense: None,
                sparse: Some(entries),
            });
        } else {
            let mut vals = Vec::new();
            for tok in rest.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad feature value {:?}", tok)))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite feature value"));
                }
                vals.push(v);
            }
            match dense_width {
                None => dense_width = Some(vals.len()),
                Some(w) if w != vals.len() => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("row has {} values, earlier rows had {}", vals.len(), w),
                    ));
                }
                _ => {}
            }
            rows.push(FeatureRow {
                node,
                dense: Some(vals),
                sparse: None,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no feature rows"));
    }
    let n = rows.iter().map(|r| r.node + 1).max().unwrap();
    // Feature dimensionality: the dense row width when present, otherwise the
    // largest sparse index + 1.
    let f = match dense_width {
        Some(w) => {
            if saw_sparse && max_sparse_idx >= w {
                return Err(Error::parse(
                    path,
                    0,
                    format!(
                        "sparse index {} exceeds dense width {}",
                        max_sparse_idx, w
                    ),
                ));
            }
            w
        }
        None => max_sparse_idx + 1,
    };
    let mut seen = vec![false; n];
    let mut mat = Mat::zeros(n, f);
    for r in rows {
        if seen[r.node] {
            return Err(Error::parse(
                path,
                0,
                format!("duplicate feature row for node {}", r.node),
            ));
        }
        seen[r.node] = true;
        let row = mat.row_mut(r.node);
        if let Some(dense) = r.dense {
            row.copy_from_slice(&dense);
        } else if let Some(entries) = r.sparse {
            for (i, v) in entries {
                row[i] = v;
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            path,
            0,
            format!("no feature row for node {}", missing),
        ));
    }
    Ok((mat, n))
}

fn load_edges(path: &Path, n: usize) -> Result<Vec<(u32, u32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(Error::parse(path, lineno, "expected `u v`")),
        };
        let u: usize = u
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {:?}", u)))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {:?}", v)))?;
        if u >= n || v >= n {
            return Err(Error::parse(
                path,
                lineno,
                format!("edge ({}, {}) references a node >= {}", u, v, n),
            ));
        }
        edges.push((u as u32, v as u32));
    }
    Ok(edges)
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<Option<u32>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = vec![None; n];
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (v, c) = match (it.next(), it.next(), it.next()) {
            (Some(v), Some(c), None) => (v, c),
            _ => return Err(Error::parse(path, lineno, "expected `node_id class_id`")),
        };
        let v: usize = v
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {:?}", v)))?;
        let c: u32 = c
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad class id {:?}", c)))?;
        if v >= n {
            return Err(Error::parse(
                path,
                lineno,
                format!("label references node {} >= {}", v, n),
            ));
        }
        if labels[v].is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate label for node {}", v),
            ));
        }
        labels[v] = Some(c);
    }
    Ok(labels)
}

/// Disjoint class groups for the meta-learning phases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl ClassSplit {
    pub fn classes_for(&self, phase: Phase) -> &[u32] {
        match phase {
            Phase::Train => &self.train,
            Phase::Val => &self.val,
            Phase::Test => &self.test,
        }
    }

    /// Every class id in range, no class listed twice within a phase.
    /// Phases MAY share classes: tiny synthetic fixtures reuse the same
    /// classes for training, validation, and testing.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (phase, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mut seen = BTreeSet::new();
            for &c in ids {
                if c as usize >= num_classes {
                    return Err(Error::Config(format!(
                        "class {} out of range (graph has {} classes)",
                        c, num_classes
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Config(format!(
                        "class {} listed twice in phase {}",
                        c, phase
                    )));
                }
            }
        }
        Ok(())
    }

    /// Additionally require that no class appears in more than one phase —
    /// the convention for citation-style datasets, where meta-test classes
    /// must be unseen.
    pub fn require_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &c in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(c) {
                return Err(Error::Config(format!(
                    "class {} appears in more than one phase",
                    c
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Test => "test",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Phase> {
        match s {
            "train" => Ok(Phase::Train),
            "val" => Ok(Phase::Val),
            "test" => Ok(Phase::Test),
            other => Err(Error::Config(format!("unknown phase {:?}", other))),
        }
    }
}

/// Load a class split: three lines `train:`, `val:`, `test:` with
/// comma-separated class ids, each in range for the graph's class count.
/// Phases may share classes (toy fixtures do); within a phase each class
/// appears once.
pub fn load_split(path: &Path, num_classes: usize) -> Result<ClassSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut train = None;
    let mut val = None;
    let mut test = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(path, lineno, "expected `phase: id,id,...`"))?;
        let mut ids = Vec::new();
        for tok in rest.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            let c: u32 = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad class id {:?}", tok)))?;
            if c as usize >= num_classes {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("class {} out of range (graph has {} classes)", c, num_classes),
                ));
            }
            ids.push(c);
        }
        let slot = match key.trim() {
            "train" => &mut train,
            "val" => &mut val,
            "test" => &mut test,
            other => {
                return Err(Error::parse(path, lineno, format!("unknown phase {:?}", other)))
            }
        };
        if slot.is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate {:?} line", key)));
        }
        *slot = Some(ids);
    }
    let split = ClassSplit {
        train: train.ok_or_else(|| Error::parse(path, 0, "missing train: line"))?,
        val: val.ok_or_else(|| Error::parse(path, 0, "missing val: line"))?,
        test: test.ok_or_else(|| Error::parse(path, 0, "missing test: line"))?,
    };
    split
        .validate(num_classes)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok(split)
}

/// Write a class split in the loadable format.
pub fn save_split(path: &Path, split: &ClassSplit) -> Result<()> {
    let fmt = |ids: &[u32]| {
        ids.iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let text = format!(
        "train: {}\nval: {}\ntest: {}\n",
        fmt(&split.train),
        fmt(&split.val),
        fmt(&split.test)
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
