//! How often do uniformly drawn anchors land on distinct true classes?
//! Closed form for uniform class sizes, and exact-vs-Monte-Carlo expected
//! distinct-class counts under the empirical class histograms of four
//! citation-style fixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vision::synth::{expected_distinct, generate_citation, preset};
use vision::tasks::{anchor_distinct_probability, anchor_diversity_monte_carlo};

fn main() {
    println!("P(all anchors hit distinct classes), uniform class sizes:");
    for (classes, ways) in [(7usize, 2usize), (40, 5), (70, 5)] {
        println!(
            "  {classes:>2} classes, {ways} anchors -> {:.6}",
            anchor_distinct_probability(classes, ways)
        );
    }

    println!("\nExpected distinct classes among anchors, per fixture");
    println!("(exact under the class histogram vs 10k-trial Monte Carlo):");
    println!("  {:<10} {:>7} {:>9} {:>12}", "fixture", "anchors", "exact", "monte-carlo");
    for (name, ways) in [("cora", 2usize), ("citeseer", 2), ("cora_ml", 2), ("corafull", 5)] {
        let spec = preset(name).expect("preset");
        let (g, split) = generate_citation(&spec, 0).expect("fixture");
        let exact = expected_distinct(&spec.class_sizes, &split.train, ways);
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let est = anchor_diversity_monte_carlo(&g, ways, 10_000, Some(&split.train), &mut rng)
            .expect("estimate");
        println!(
            "  {:<10} {:>7} {:>9.4} {:>12.4}",
            name, ways, exact, est.mean_distinct
        );
    }
}
