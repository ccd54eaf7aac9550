use proptest::prelude::*;
use situgraph::{EffectType, NodeId, Relation, StGraph};

const PHRASES: &[&str] = &[
    "there is a storm",
    "stronger wind",
    "Stronger wind.",
    "bigger waves",
    "more erosion",
    "calm sea",
    "fewer boats",
    "wet sand",
    "high tide",
    "beach shrinks",
    "more clouds",
    "cold front",
];

/// (source choice, relation, effect, phrase) draws.
fn ops() -> impl Strategy<Value = Vec<(usize, usize, usize, usize)>> {
    prop::collection::vec((0usize..64, 0usize..8, 0usize..2, 0..PHRASES.len()), 0..40)
}

fn build(ops: &[(usize, usize, usize, usize)]) -> StGraph {
    let mut g = StGraph::new("Wind creates waves. Waves wash on beaches.", PHRASES[0]).unwrap();
    for &(src, rel, eff, phrase) in ops {
        let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
        let source = ids[src % ids.len()];
        g.add_node(source, Relation::ALL[rel], EffectType::ALL[eff], PHRASES[phrase])
            .unwrap();
    }
    g
}

/// Counts (a, b, c) walks of two edges by scanning every node triple.
fn brute_force_two_hops(g: &StGraph) -> usize {
    let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
    let count = |a: NodeId, b: NodeId| g.edges().iter().filter(|e| e.source == a && e.target == b).count();
    let mut total = 0;
    for &a in &ids {
        for &b in &ids {
            let ab = count(a, b);
            if ab == 0 {
                continue;
            }
            for &c in &ids {
                total += ab * count(b, c);
            }
        }
    }
    total
}

/// Rewrites node ids in serialized form with `id -> (k - 1 - id)` and
/// reverses the node list.
fn relabel(json: &str, k: u32) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    let flip = |x: &mut serde_json::Value| {
        let id = x.as_u64().unwrap() as u32;
        *x = serde_json::json!(k - 1 - id);
    };
    for node in v["nodes"].as_array_mut().unwrap() {
        flip(&mut node["id"]);
    }
    v["nodes"].as_array_mut().unwrap().reverse();
    for edge in v["edges"].as_array_mut().unwrap() {
        flip(&mut edge["src"]);
        flip(&mut edge["dst"]);
    }
    v["provenance"] = serde_json::json!([]);
    serde_json::to_string(&v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn construction_preserves_invariants(ops in ops()) {
        let g = build(&ops);
        prop_assert!(g.validate().is_empty(), "{:?}", g.validate());
        prop_assert!(g.node_count() <= PHRASES.len());
        let depths = g.depths();
        prop_assert_eq!(depths.len(), g.node_count());
    }

    #[test]
    fn flatten_is_deterministic(ops in ops()) {
        let g = build(&ops);
        prop_assert_eq!(g.flatten(), g.flatten());
        let again = build(&ops);
        prop_assert_eq!(g.flatten(), again.flatten());
    }

    #[test]
    fn flatten_ignores_node_ids(ops in ops()) {
        let g = build(&ops);
        let k = g.node_count() as u32;
        let relabelled = StGraph::from_json(&relabel(&g.to_json(), k)).unwrap();
        prop_assert!(relabelled.validate().is_empty());
        prop_assert_eq!(relabelled.flatten(), g.flatten());
    }

    #[test]
    fn two_hop_paths_match_triple_scan(ops in ops()) {
        let g = build(&ops);
        prop_assert_eq!(g.paths_of_length_two().len(), brute_force_two_hops(&g));
    }

    #[test]
    fn json_round_trip_is_byte_identical(ops in ops()) {
        let g = build(&ops);
        let text = g.to_json();
        let back = StGraph::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back.flatten(), g.flatten());
    }

    #[test]
    fn dot_lists_every_edge(ops in ops()) {
        let g = build(&ops);
        let dot = g.to_dot();
        prop_assert_eq!(dot.matches(" -> ").count(), g.edge_count());
    }
}

#[test]
fn flatten_edge_cases() {
    let g = StGraph::new("ctx", "A Storm.").unwrap();
    assert_eq!(g.flatten(), "a storm");
    let mut g = StGraph::new("ctx", "storm").unwrap();
    let root = g.root().unwrap();
    g.add_node(root, Relation::Hurts, EffectType::Eventual, "calm").unwrap();
    g.add_node(root, Relation::Helps, EffectType::Eventual, "waves")
        .unwrap();
    g.add_node(root, Relation::Helps, EffectType::Imminent, "wind").unwrap();
    assert_eq!(
        g.flatten(),
        "storm helps imminent wind | storm helps eventual waves | storm hurts eventual calm"
    );
}
