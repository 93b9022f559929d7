//! Fixtures shared by the criterion benches in `benches/`.

use diversigraph_core::permscore::{random_permutation, Permutation};
use diversigraph_core::synth::gen_blocks;
use diversigraph_core::FollowerGraph;

/// Four-block planted graph with about 12 out-links per node.
pub fn block_graph(n: usize, seed: u64) -> FollowerGraph {
    let p_in = 40.0 / n as f64;
    let p_out = 8.0 / n as f64;
    gen_blocks(n, 4, p_in.min(1.0), p_out.min(1.0), seed)
        .expect("valid block parameters")
        .0
}

pub fn shuffled(g: &FollowerGraph, seed: u64) -> Permutation {
    random_permutation(g.node_count(), seed)
}
