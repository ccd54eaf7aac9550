//! Synthetic corpora shared by the benchmarks.

use situgraph::graphgen::RelationSchedule;
use situgraph::text::tokenize;
use situgraph::{build_query, QueryTemplate, StGraph};

const WORDS: [&str; 24] = [
    "wind", "waves", "storm", "beach", "sand", "erosion", "rain", "river", "flood", "soil", "roots", "plants", "more",
    "less", "bigger", "smaller", "the", "a", "grows", "shrinks", "faster", "slower", "water", "heat",
];

/// Deterministic pseudo-sentence of `len` tokens.
pub fn sentence(seed: usize, len: usize) -> String {
    (0..len)
        .map(|i| WORDS[(seed.wrapping_mul(31) + i.wrapping_mul(17) + (seed ^ i) % 7) % WORDS.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` tokenized (hypothesis, reference) pairs of roughly `len` tokens.
pub fn token_pairs(n: usize, len: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let hyps = (0..n).map(|i| tokenize(&sentence(i, len))).collect();
    let refs = (0..n).map(|i| tokenize(&sentence(i + 3, len + i % 4))).collect();
    (hyps, refs)
}

/// Query/answer pairs for n-gram training, one per group and relation.
pub fn training_pairs(groups: usize) -> Vec<(String, String)> {
    let schedule = RelationSchedule::forward();
    let mut pairs = Vec::new();
    for g in 0..groups {
        let ctx = sentence(g, 12);
        let sit = sentence(g + 101, 4);
        for (k, (rel, eff)) in schedule.pairs().iter().enumerate() {
            let q = build_query(&ctx, &sit, *rel, *eff, QueryTemplate::Question).expect("non-empty text");
            pairs.push((q.surface, sentence(g * 2 + k, 3)));
        }
    }
    pairs
}

/// A broad graph: a root with `fanout` children, each with `fanout` children.
pub fn wide_graph(fanout: usize) -> StGraph {
    let schedule = RelationSchedule::forward();
    let mut g = StGraph::new(&sentence(0, 10), "the storm").expect("non-empty text");
    let root = g.root().expect("root exists");
    for i in 0..fanout {
        let (rel, eff) = schedule.pairs()[i % schedule.len()];
        let child = g
            .add_node(root, rel, eff, &format!("child {i}"))
            .expect("valid source")
            .node;
        for j in 0..fanout {
            let (rel, eff) = schedule.pairs()[j % schedule.len()];
            g.add_node(child, rel, eff, &format!("grandchild {i} {j}"))
                .expect("valid source");
        }
    }
    g
}
