//! Structure-adaptive input features: one round of symmetric-normalized
//! neighborhood smoothing, a per-node agreement gate, and the convex fusion
//! of raw and smoothed features.
//!
//! For node i with self-augmented degree d~_i = deg(i) + 1:
//!
//! - smoothing: x_smooth_i = sum over j in N(i) u {i} of x_j / sqrt(d~_i d~_j)
//! - gate: g_i = (clamp(cos(x_raw_i, x_smooth_i), -1, 1) + 1) / 2
//! - fusion: x_task_i = (1 - g_i) x_raw_i + g_i x_smooth_i
//!
//! Zero-norm rows take cosine 0, hence g = 0.5. The computation is pure
//! preprocessing (no gradients); results can be cached to disk keyed by the
//! graph's content hash.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphStore;
use crate::mat::{cosine, Mat};

/// Smoothed features, per-node gate values, and the fused task features.
#[derive(Clone, Debug)]
pub struct AdaptiveFeatures {
    pub x_smooth: Mat,
    pub gate: Vec<f64>,
    pub x_task: Mat,
}

/// One round of D~^(-1/2) (A + I) D~^(-1/2) smoothing over the CSR adjacency.
pub fn smooth(g: &GraphStore) -> Mat {
    let x = g.features();
    let n = g.num_nodes();
    let f = g.num_features();
    let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt()).collect();
    let mut out = Mat::zeros(n, f);
    for i in 0..n {
        let si = inv_sqrt[i];
        // self-loop term
        let w_self = si * si;
        {
            let row_i = x.row(i);
            let out_i = out.row_mut(i);
            for c in 0..f {
                out_i[c] += w_self * row_i[c];
            }
        }
        for &j in g.neighbors(i).expect("node in range") {
            let j = j as usize;
            let w = si * inv_sqrt[j];
            let row_j = x.row(j);
            let out_i = out.row_mut(i);
            for c in 0..f {
                out_i[c] += w * row_j[c];
            }
        }
    }
    out
}

/// Per-node agreement gate between raw and smoothed features, in [0, 1].
pub fn gate(x_raw: &Mat, x_smooth: &Mat) -> Result<Vec<f64>> {
    if x_raw.shape() != x_smooth.shape() {
        let (lr, lc) = x_raw.shape();
        let (rr, rc) = x_smooth.shape();
        return Err(Error::Shape {
            op: "gate",
            lhs_rows: lr,
            lhs_cols: lc,
            rhs_rows: rr,
            rhs_cols: rc,
        });
    }
    Ok((0..x_raw.rows())
        .map(|i| {
            let c = cosine(x_raw.row(i), x_smooth.row(i)).clamp(-1.0, 1.0);
            (c + 1.0) / 2.0
        })
        .collect())
}

/// Convex per-node combination of raw and smoothed rows.
pub fn fuse(x_raw: &Mat, x_smooth: &Mat, gate: &[f64]) -> Result<Mat> {
    if x_raw.shape() != x_smooth.shape() || gate.len() != x_raw.rows() {
        let (lr, lc) = x_raw.shape();
        let (rr, rc) = x_smooth.shape();
        return Err(Error::Shape {
            op: "fuse",
            lhs_rows: lr,
            lhs_cols: lc,
            rhs_rows: rr,
            rhs_cols: rc,
        });
    }
    let mut out = Mat::zeros(x_raw.rows(), x_raw.cols());
    for i in 0..x_raw.rows() {
        let gi = gate[i];
        let raw = x_raw.row(i);
        let sm = x_smooth.row(i);
        let o = out.row_mut(i);
        for c in 0..raw.len() {
            o[c] = (1.0 - gi) * raw[c] + gi * sm[c];
        }
    }
    Ok(out)
}

/// Full pipeline: smooth, gate, fuse.
pub fn compute(g: &GraphStore) -> AdaptiveFeatures {
    let x_smooth = smooth(g);
    let gate = gate(g.features(), &x_smooth).expect("shapes agree by construction");
    let x_task = fuse(g.features(), &x_smooth, &gate).expect("shapes agree by construction");
    AdaptiveFeatures {
        x_smooth,
        gate,
        x_task,
    }
}

const CACHE_MAGIC: &[u8; 4] = b"VADF";
const CACHE_VERSION: u32 = 1;

/// Persist gate + fused features keyed by the graph's content hash.
/// The smoothed matrix is cheap to recompute and is not stored.
pub fn save_cache(path: &Path, graph_hash: [u8; 32], af: &AdaptiveFeatures) -> Result<()> {
    let n = af.x_task.rows();
    let f = af.x_task.cols();
    let mut buf: Vec<u8> = Vec::with_capacity(16 + 32 + 8 * (n + n * f));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&graph_hash);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(f as u64).to_le_bytes());
    for &g in &af.gate {
        buf.extend_from_slice(&g.to_le_bytes());
    }
    for &x in af.x_task.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a cache file; `Ok(None)` when the stored hash does not match the
/// graph (stale cache), so callers recompute.
pub fn load_cache(path: &Path, graph_hash: [u8; 32]) -> Result<Option<(Vec<f64>, Mat)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 + 4 + 32 + 16 || &bytes[0..4] != CACHE_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a feature cache",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported feature cache version {}",
            version
        )));
    }
    if bytes[8..40] != graph_hash {
        return Ok(None);
    }
    let n = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
    let expect = 56 + 8 * (n + n * f);
    if bytes.len() != expect {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expect,
            bytes.len()
        )));
    }
    let mut pos = 56;
    let mut gate = Vec::with_capacity(n);
    for _ in 0..n {
        gate.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
        pos += 8;
    }
    let mut data = Vec::with_capacity(n * f);
    for _ in 0..n * f {
        data.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
        pos += 8;
    }
    Ok(Some((gate, Mat::from_vec(n, f, data))))
}

/// Load the cache when fresh, otherwise compute and (re)write it.
pub fn compute_or_cached(g: &GraphStore, cache_path: Option<&Path>) -> Result<AdaptiveFeatures> {
    if let Some(path) = cache_path {
        if path.exists() {
            if let Some((gate, x_task)) = load_cache(path, g.content_hash())? {
                let x_smooth = smooth(g);
                return Ok(AdaptiveFeatures {
                    x_smooth,
                    gate,
                    x_task,
                });
            }
        }
        let af = compute(g);
        save_cache(path, g.content_hash(), &af)?;
        Ok(af)
    } else {
        Ok(compute(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(u32, u32)], feats: Mat) -> GraphStore {
        let n = feats.rows();
        GraphStore::new(feats, edges, vec![None; n]).unwrap()
    }

    /// Dense reference: build A+I, normalize both sides by D~^(-1/2),
    /// multiply. Quadratic and allocation-happy, kept as the test oracle.
    fn smooth_dense_reference(g: &GraphStore) -> Mat {
        let n = g.num_nodes();
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            *a.at_mut(i, i) = 1.0;
            for &j in g.neighbors(i).unwrap() {
                *a.at_mut(i, j as usize) = 1.0;
            }
        }
        let deg: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
        for i in 0..n {
            for j in 0..n {
                *a.at_mut(i, j) /= (deg[i] * deg[j]).sqrt();
            }
        }
        a.matmul(g.features())
    }

    #[test]
    fn two_node_path_smooths_to_midpoint() {
        let g = graph(
            &[(0, 1)],
            Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
        );
        let s = smooth(&g);
        for r in 0..2 {
            assert!((s.at(r, 0) - 0.5).abs() < 1e-12);
            assert!((s.at(r, 1) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_keeps_raw_features() {
        let g = graph(&[], Mat::from_vec(1, 3, vec![2.0, -1.0, 0.5]));
        let s = smooth(&g);
        assert_eq!(s.row(0), g.features().row(0));
        // cos(x, x) = 1 -> gate 1 -> fusion returns x_smooth = x_raw
        let af = compute(&g);
        assert!((af.gate[0] - 1.0).abs() < 1e-12);
        assert_eq!(af.x_task.row(0), g.features().row(0));
    }

    #[test]
    fn constant_features_are_a_fixed_point() {
        let g = graph(
            &[(0, 1), (1, 2), (0, 2)],
            Mat::from_fn(3, 2, |_, c| if c == 0 { 2.0 } else { -3.0 }),
        );
        let s = smooth(&g);
        for r in 0..3 {
            assert!((s.at(r, 0) - 2.0).abs() < 1e-12);
            assert!((s.at(r, 1) + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_frozen_cases() {
        // identical rows -> 1; opposite -> 0; orthogonal -> 0.5; zero -> 0.5
        let raw = Mat::from_vec(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let sm = Mat::from_vec(4, 2, vec![2.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = gate(&raw, &sm).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
        assert!((g[2] - 0.5).abs() < 1e-12);
        assert!((g[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_node_path_gate_and_fusion_values() {
        // raw rows [1,0] and [0,1]; smoothed rows are both [0.5, 0.5];
        // cos = 1/sqrt(2), so g = (1/sqrt(2) + 1)/2 = 0.8535533906.
        let g = graph(&[(0, 1)], Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let af = compute(&g);
        let expect_g = (std::f64::consts::FRAC_1_SQRT_2 + 1.0) / 2.0;
        assert!((af.gate[0] - expect_g).abs() < 1e-12);
        assert!((af.gate[0] - 0.853553).abs() < 1e-6);
        // row 0: (1-g)[1,0] + g[0.5,0.5] = [1 - g/2, g/2]
        assert!((af.x_task.at(0, 0) - (1.0 - expect_g / 2.0)).abs() < 1e-12);
        assert!((af.x_task.at(0, 0) - 0.573223).abs() < 1e-6);
        assert!((af.x_task.at(0, 1) - 0.426777).abs() < 1e-6);
    }

    #[test]
    fn gate_saturates_when_neighbors_echo_the_node() {
        // all neighbors carry exactly the node's features -> smoothing is a
        // no-op up to scaling -> cosine 1 -> gate 1
        let feats = Mat::from_fn(4, 3, |_, c| (c as f64) - 1.0);
        let g = graph(&[(0, 1), (0, 2), (0, 3)], feats);
        let af = compute(&g);
        assert!((af.gate[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_matches_dense_reference_on_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(2..60);
            let f = rng.gen_range(1..8);
            let feats = Mat::from_fn(n, f, |_, _| rng.gen_range(-2.0..2.0));
            let mut edges = Vec::new();
            for u in 0..n as u32 {
                for v in (u + 1)..n as u32 {
                    if rng.gen_bool(0.15) {
                        edges.push((u, v));
                    }
                }
            }
            let g = graph(&edges, feats);
            let fast = smooth(&g);
            let dense = smooth_dense_reference(&g);
            for (a, b) in fast.as_slice().iter().zip(dense.as_slice()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fusion_is_convex_and_gate_in_range() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
        let n = 40;
        let f = 5;
        let feats = Mat::from_fn(n, f, |_, _| rng.gen_range(-3.0..3.0));
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in (u + 1)..n as u32 {
                if rng.gen_bool(0.1) {
                    edges.push((u, v));
                }
            }
        }
        let g = graph(&edges, feats);
        let af = compute(&g);
        for i in 0..n {
            assert!(af.gate[i] >= 0.0 && af.gate[i] <= 1.0);
            for c in 0..f {
                let lo = g.features().at(i, c).min(af.x_smooth.at(i, c));
                let hi = g.features().at(i, c).max(af.x_smooth.at(i, c));
                let x = af.x_task.at(i, c);
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                assert!(x.is_finite());
            }
        }
    }

    #[test]
    fn cache_round_trip_and_stale_hash_detection() {
        let dir = tempfile::tempdir().unwrap();
        let g = graph(&[(0, 1)], Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let af = compute(&g);
        let path = dir.path().join("af.bin");
        save_cache(&path, g.content_hash(), &af).unwrap();
        let (gate2, x2) = load_cache(&path, g.content_hash()).unwrap().unwrap();
        assert_eq!(af.gate, gate2);
        assert_eq!(af.x_task, x2);
        assert!(load_cache(&path, [9u8; 32]).unwrap().is_none());
    }
}
