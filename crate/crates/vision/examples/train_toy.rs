//! Meta-train on pseudo-tasks from a separable two-cluster graph and watch
//! validation accuracy climb. No true labels are used for training —
//! pseudo-labels come entirely from feature-space anchor proximity.

use vision::adaptive;
use vision::net::{init_params, NetConfig};
use vision::synth::two_cluster;
use vision::tasks::TaskGenConfig;
use vision::train::{train, TrainConfig};

fn main() {
    let (g, split) = two_cluster(200, 16, 4.0, 5).expect("fixture");
    let af = adaptive::compute(&g);

    let mut net = NetConfig::new(g.num_features());
    net.hidden = 64; // desk-scale width keeps this under half a minute
    net.ffn_dim = 128;
    let mut cfg = TrainConfig::new(net, TaskGenConfig::new(2, 5, 5));
    cfg.episodes_total = 300;
    cfg.eval_every = 60;
    cfg.val_episodes = 40;
    cfg.seed = 1;

    let store = init_params(&cfg.net, cfg.seed).expect("init");
    println!(
        "training {} episodes of {}-way {}-shot pseudo-tasks...",
        cfg.episodes_total, cfg.task.n_way, cfg.task.k_shot
    );
    let out = train(&g, &af, &af.x_task, Some(&split), store, &cfg).expect("training");

    let show = |i: usize| {
        let s = &out.log.steps[i];
        println!(
            "  episode {:>4}: loss {:.4} (classification {:.4} + 0.5 * alignment {:.4})",
            s.episode, s.loss_total, s.loss_ce, s.loss_con
        );
    };
    show(0);
    show(out.log.steps.len() / 2);
    show(out.log.steps.len() - 1);

    println!();
    for v in &out.log.vals {
        println!(
            "  after {:>4} episodes: validation accuracy {:.3}",
            v.after_episodes, v.accuracy
        );
    }
    let best = out.log.best.expect("validation ran");
    println!(
        "\nbest checkpoint: accuracy {:.3} after {} episodes",
        best.accuracy, best.after_episodes
    );
    println!("final parameter hash: {}", &out.params.content_hash()[..16]);
    println!("best  parameter hash: {}", &out.best_params.content_hash()[..16]);
}
