use std::path::{Path, PathBuf};

use situgraph::adapters::{group_examples, load_split, reference_graph, FixtureManifest};
use situgraph::backends::train_ngram;
use situgraph::graphgen::{iterative_graph_gen, recursive_expand, ExpansionPolicy, RelationSchedule};
use situgraph::{build_query, Dataset, GenerationConfig, QueryTemplate, Split, StExample, StGraph};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(dataset: Dataset, split: Split) -> Vec<StExample> {
    let manifest = FixtureManifest::load(&fixtures().join("manifest.json")).unwrap();
    let path = fixtures().join(format!("{dataset}_{split}.jsonl"));
    let reader = load_split(&path, dataset, split, manifest.expected(dataset, split)).unwrap();
    reader.read_all().unwrap().0
}

#[test]
fn adapted_examples_respect_dataset_rules() {
    for dataset in Dataset::ALL {
        for split in Split::ALL {
            let examples = load(dataset, split);
            assert_eq!(examples, load(dataset, split), "{dataset} {split} not deterministic");
            for e in &examples {
                assert!(dataset.relations().contains(&e.relation), "{dataset}: {:?}", e.relation);
                assert!(!e.answer.trim().is_empty());
                assert_eq!((e.dataset, e.split), (dataset, split));
            }
            for group in group_examples(examples) {
                let g = reference_graph(&group).unwrap();
                assert!(g.validate().is_empty());
                assert!(group.iter().all(|e| e.group_key == group[0].group_key));
            }
        }
    }
}

fn ngram_graphs(threads: usize) -> Vec<StGraph> {
    let examples = load(Dataset::Wiqa, Split::Train);
    let pairs = examples.iter().map(|e| {
        let q = build_query(&e.context, &e.situation, e.relation, e.effect, QueryTemplate::Question).unwrap();
        (q.surface, e.answer.clone())
    });
    let (model, _) = train_ngram(pairs, 4, 0.4).unwrap();
    let config = GenerationConfig::new(0.9, 16, 11).unwrap();
    let policy = ExpansionPolicy::new(3, 20, RelationSchedule::forward()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        group_examples(examples)
            .iter()
            .map(|group| {
                let schedule = RelationSchedule::from_examples(group).unwrap();
                let g = iterative_graph_gen(&model, &group[0].context, &group[0].situation, &schedule, &config)
                    .unwrap();
                let frontier: Vec<_> = g.nodes().iter().skip(1).map(|n| n.id).collect();
                recursive_expand(&model, g, &frontier, &policy, &config).unwrap().graph
            })
            .collect()
    })
}

#[test]
fn sampled_generation_ignores_thread_count() {
    let one: Vec<String> = ngram_graphs(1).iter().map(StGraph::to_json).collect();
    let four: Vec<String> = ngram_graphs(4).iter().map(StGraph::to_json).collect();
    assert_eq!(one, four);
    assert!(one.len() > 1);
}
