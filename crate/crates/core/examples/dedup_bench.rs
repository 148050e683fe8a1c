//! Times the blocked dedup on random unit vectors.
//!
//! Usage: dedup_bench [n] [dim] [workers]

use std::time::Instant;

use curate_core::dedup::{pairwise_dedup_with, DedupOptions};
use curate_core::EmbeddingVector;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let n = args.first().copied().unwrap_or(25_000);
    let dim = args.get(1).copied().unwrap_or(1024);
    let workers = args.get(2).copied().unwrap_or(0);
    let mut rng = rand::rngs::StdRng::seed_from_u64(42);
    let vectors: Vec<EmbeddingVector> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            EmbeddingVector::new(v).expect("nonzero")
        })
        .collect();
    let start = Instant::now();
    let result = pairwise_dedup_with(&vectors, 0.8, DedupOptions { workers, ..DedupOptions::default() })
        .expect("uniform dims");
    println!(
        "n={n} dim={dim} survivors={} removed={} elapsed={:.2?}",
        result.survivors.len(),
        result.removed.len(),
        start.elapsed()
    );
}
