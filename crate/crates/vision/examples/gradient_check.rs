//! Verifies analytic gradients of the full episode loss against central
//! finite differences, parameter by parameter, on a small network.
//!
//! Run with: cargo run --example gradient_check

use vision::autodiff::gradcheck::{fd_param_grad, max_rel_err};
use vision::graph::GraphStore;
use vision::loss::{ce_label_smoothing_loss, contrastive_loss};
use vision::mat::Mat;
use vision::net::{forward_episode, init_params, Ablation, Mode, NetConfig};
use vision::params::ParamStore;
use vision::tasks::Episode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() {
    let feat_dim = 5;
    let cfg = NetConfig {
        feat_dim,
        hidden: 8,
        attn_heads: 2,
        layers: 2,
        ffn_dim: 16,
        readout_heads: 2,
        readout_dim: 4,
        k_neigh: 3,
        max_n_way: 4,
        noise_std: 0.02,
        ablation: Ablation::default(),
    };

    // small ring graph with random features
    let n = 12;
    let mut rng = ChaCha20Rng::seed_from_u64(73);
    let feats = Mat::from_fn(n, feat_dim, |_, _| rng.gen_range(-1.0..1.0));
    let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
    let g = GraphStore::new(feats.clone(), &edges, vec![None; n]).expect("graph");

    let ep = Episode {
        n_way: 2,
        k_shot: 2,
        m_query: 2,
        support: vec![(0, 0), (1, 0), (2, 1), (3, 1)],
        query: vec![4, 5, 6, 7],
        query_truth: vec![0, 0, 1, 1],
    };

    let (lambda, eps, tau_c, seed) = (0.5, 0.1, 0.5, 9u64);
    let total_loss = |store: &ParamStore| {
        let mut fwd =
            forward_episode(&g, &feats, &ep, store, &cfg, Mode::Train, seed).expect("forward");
        let t = &mut fwd.tape;
        let ce = ce_label_smoothing_loss(t, fwd.logits, &fwd.query_truth, eps).expect("ce");
        let con = contrastive_loss(
            t,
            &fwd.support_heads,
            &fwd.query_heads,
            &fwd.support_labels,
            &fwd.query_truth,
            tau_c,
        )
        .expect("contrastive");
        let scaled = t.scale_k(con, lambda);
        let total = t.add(ce, scaled).expect("add");
        (fwd, total)
    };

    let mut store = init_params(&cfg, 71).expect("params");
    let (mut fwd, total) = total_loss(&store);
    println!("total loss at init: {:.6}", fwd.tape.value(total).item());
    fwd.tape.backward(total).expect("backward");
    fwd.tape.grads_to(&mut store).expect("grads");

    let start = std::time::Instant::now();
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0usize;
    for name in &names {
        let analytic = store.grad(name).expect("grad").clone();
        let fd = fd_param_grad(&mut store, name, 1e-4, |s| {
            let (fwd, total) = total_loss(s);
            fwd.tape.value(total).item()
        });
        let err = max_rel_err(&analytic, &fd);
        checked += analytic.rows() * analytic.cols();
        if err > worst.0 {
            worst = (err, name.clone());
        }
        println!("{:<24} max rel err {:.3e}", name, err);
    }
    println!(
        "\nchecked {} parameters in {} groups in {:.2?}",
        checked,
        names.len(),
        start.elapsed()
    );
    println!("worst: {} at {:.3e}", worst.1, worst.0);
    if worst.0 < 1e-4 {
        println!("PASS: all gradients within 1e-4 of finite differences");
    } else {
        println!("FAIL: gradient mismatch above 1e-4");
        std::process::exit(1);
    }
}
