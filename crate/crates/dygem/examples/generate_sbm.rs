//! Generate a dynamic stochastic-block-model graph and print its shape:
//! snapshot edge counts, the chronological split, and how community churn
//! reshapes the graph over time.
//!
//! `cargo run -p dygem --example generate_sbm`

use dygem::rng::Rng;
use dygem::sbm::{generate_sbm_with_membership, SbmConfig};

fn main() {
    let cfg = SbmConfig {
        n: 60,
        communities: 3,
        p_in: 0.25,
        p_out: 0.02,
        churn: (3, 6),
        timestamps: 12,
    };
    let mut rng = Rng::seed(7);
    let (graph, memberships) = generate_sbm_with_membership(&cfg, &mut rng).expect("valid config");

    println!(
        "generated n={} T={} split train/val/test = {}/{}/{}",
        graph.n,
        graph.timestamps(),
        graph.train_end,
        graph.val_end - graph.train_end,
        graph.timestamps() - graph.val_end
    );
    println!("t  edges  within-community");
    for (t, snap) in graph.snapshots.iter().enumerate() {
        let within = snap
            .edges
            .iter()
            .filter(|&&(u, v, _)| memberships[t][u] == memberships[t][v])
            .count();
        println!(
            "{t:2}  {:5}  {within:5} ({:.0}%)",
            snap.edge_count(),
            100.0 * within as f64 / snap.edge_count().max(1) as f64
        );
    }

    let moved: usize = memberships
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| a != b).count())
        .sum();
    println!("total membership moves across the run: {moved}");
}
