use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use situgraph::adapters::{group_examples, load_split, reference_graph, FixtureManifest};
use situgraph::backends::{train_ngram, OracleEntry, OracleTable};
use situgraph::downstream::{augment_all, export_training_file, read_jsonl, zero_shot_eval};
use situgraph::graphgen::{failure_count, GraphGenerator, RelationSchedule, StopReason};
use situgraph::metrics::{consistency_rate, eval_graphs};
use situgraph::{build_query, Dataset, QaItem, Split, StExample, StGraph, ZeroShotItem};

use crate::config::{open_backend, BackendSelector, RunConfig, ScheduleSpec};
use crate::output::{hash_inputs, OutDir, RunManifest, CONFIG_FILE};
use crate::{Cli, Command, ExportFormat};

struct Prepared {
    config: RunConfig,
    out: OutDir,
    inputs: Vec<PathBuf>,
}

fn prepare(cli: &Cli, out: &Path, inputs: &[&Path], apply: impl FnOnce(&mut RunConfig)) -> anyhow::Result<Prepared> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !cli.no_env {
        config.apply_env()?;
    }
    apply(&mut config);
    let mut inputs: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    if let Some(selector) = config.backend.selector.as_deref() {
        if let Some(file) = BackendSelector::parse(selector)?.input_file() {
            inputs.push(file.to_path_buf());
        }
    }
    Ok(Prepared {
        config,
        out: OutDir::create(out)?,
        inputs,
    })
}

fn finish(prepared: Prepared, command: &str, args: Vec<String>) -> anyhow::Result<RunManifest> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        args,
        seed: prepared.config.seed,
        inputs: hash_inputs(&prepared.inputs)?,
        outputs: Vec::new(),
    };
    let manifest = prepared.out.finish(manifest, &prepared.config.to_toml())?;
    log::info!(target: command, "wrote {} output files", manifest.outputs.len());
    Ok(manifest)
}

pub fn run(cli: &Cli, args: Vec<String>) -> anyhow::Result<()> {
    run_command(cli, args).map(|_| ())
}

fn run_command(cli: &Cli, args: Vec<String>) -> anyhow::Result<Option<RunManifest>> {
    let manifest = match &cli.command {
        Command::Adapt(a) => {
            let mut inputs = vec![a.input.as_path()];
            inputs.extend(a.fixture_manifest.as_deref());
            let mut p = prepare(cli, &a.out, &inputs, |_| {})?;
            adapt(&mut p, a)?;
            finish(p, "adapt", args)?
        }
        Command::TrainNgram(a) => {
            let mut p = prepare(cli, &a.out, &[&a.input], |c| {
                if let Some(v) = a.order {
                    c.ngram.order = v;
                }
                if let Some(v) = a.backoff {
                    c.ngram.backoff = v;
                }
                if let Some(v) = &a.template {
                    c.generation.template = v.clone();
                }
            })?;
            train(&mut p, &a.input)?;
            finish(p, "train-ngram", args)?
        }
        Command::Generate(a) => {
            let mut p = prepare(cli, &a.out, &[&a.input], |c| {
                a.gen.apply(c);
                if let Some(v) = &a.schedule {
                    c.graphgen.schedule = v.clone();
                }
            })?;
            generate(&mut p, &a.input)?;
            finish(p, "generate", args)?
        }
        Command::Expand(a) => {
            let mut p = prepare(cli, &a.out, &[&a.graphs], |c| {
                a.gen.apply(c);
                if let Some(v) = a.max_depth {
                    c.expansion.max_depth = v;
                }
                if let Some(v) = a.max_nodes {
                    c.expansion.max_nodes = v;
                }
                if let Some(v) = &a.schedule {
                    c.expansion.schedule = v.clone();
                }
            })?;
            expand(&mut p, &a.graphs)?;
            finish(p, "expand", args)?
        }
        Command::Eval(a) => {
            let mut p = prepare(cli, &a.out, &[&a.generated, &a.references], |_| {})?;
            eval(&mut p, &a.generated, &a.references)?;
            finish(p, "eval", args)?
        }
        Command::Consistency(a) => {
            let mut p = prepare(cli, &a.out, &[&a.cases], |c| {
                a.gen.apply(c);
                if let Some(v) = &a.criterion {
                    c.consistency.criterion = v.clone();
                }
                if let Some(v) = a.threshold {
                    c.consistency.threshold = v;
                }
                if let Some(v) = a.max_depth {
                    c.consistency.max_depth = v;
                }
                if let Some(v) = a.max_nodes {
                    c.consistency.max_nodes = v;
                }
            })?;
            consistency(&mut p, &a.cases)?;
            finish(p, "consistency", args)?
        }
        Command::Augment(a) => {
            let mut p = prepare(cli, &a.out, &[&a.input], |c| {
                a.gen.apply(c);
                if let Some(v) = &a.separator {
                    c.augment.separator = v.clone();
                }
                if let Some(v) = a.alpha {
                    c.augment.alpha = v;
                }
                if let Some(v) = a.beta {
                    c.augment.beta = v;
                }
                if let Some(v) = &a.cause_schedule {
                    c.augment.cause_schedule = v.clone();
                }
                if let Some(v) = &a.ending_schedule {
                    c.augment.ending_schedule = v.clone();
                }
            })?;
            augment(&mut p, &a.input)?;
            finish(p, "augment", args)?
        }
        Command::Zeroshot(a) => {
            let mut p = prepare(cli, &a.out, &[&a.input], |c| {
                a.gen.apply(c);
                if let Some(v) = a.length_normalize {
                    c.zeroshot.length_normalize = v;
                }
                if let Some(v) = a.knowledge_first {
                    c.zeroshot.knowledge_first = v;
                }
                if let Some(v) = &a.separator {
                    c.zeroshot.separator = v.clone();
                }
            })?;
            zeroshot(&mut p, &a.input)?;
            finish(p, "zeroshot", args)?
        }
        Command::GraphExport(a) => {
            let input = a
                .examples
                .as_deref()
                .or(a.graphs.as_deref())
                .expect("clap enforces one source");
            let mut p = prepare(cli, &a.out, &[input], |_| {})?;
            export(&mut p, a.examples.as_deref(), a.graphs.as_deref(), a.format)?;
            finish(p, "graph-export", args)?
        }
        Command::Replay(a) => {
            replay(&a.manifest, &a.out)?;
            return Ok(None);
        }
    };
    Ok(Some(manifest))
}

fn adapt(p: &mut Prepared, a: &crate::AdaptArgs) -> anyhow::Result<()> {
    let dataset: Dataset = a.dataset.parse()?;
    let split: Split = a.split.parse()?;
    let fixture_count = match &a.fixture_manifest {
        Some(path) => {
            let count = FixtureManifest::load(path)?.expected(dataset, split);
            if count.is_none() {
                log::warn!(target: "adapt", "{} has no entry for {dataset} {split}", path.display());
            }
            count
        }
        None => None,
    };
    let mut reader = load_split(&a.input, dataset, split, fixture_count)?;
    let mut lines = p.out.writer("examples.jsonl")?;
    let mut table = OracleTable::default();
    for example in reader.by_ref() {
        let example = example?;
        writeln!(lines, "{}", example.to_json_line())?;
        table.entries.push(OracleEntry {
            answer: example.answer.clone(),
            context: example.context.clone(),
            effect: example.effect,
            relation: example.relation,
            situation: example.situation.clone(),
        });
    }
    lines.flush()?;
    drop(lines);
    let manifest = reader.finish();
    #[derive(Serialize)]
    struct AdaptReport<'a> {
        #[serde(flatten)]
        manifest: &'a situgraph::adapters::SplitManifest,
        diagnostics: &'a [situgraph::adapters::Diagnostic],
    }
    p.out.write_json(
        "manifest.json",
        &AdaptReport {
            manifest: &manifest,
            diagnostics: reader.diagnostics(),
        },
    )?;
    p.out.write("oracle_table.json", &table.to_json())?;
    log::info!(
        target: "adapt",
        "{dataset} {split}: {} records, {} examples, {} skipped lines",
        manifest.observed_count,
        manifest.examples,
        manifest.skipped_lines
    );
    Ok(())
}

fn train(p: &mut Prepared, input: &Path) -> anyhow::Result<()> {
    let examples: Vec<StExample> = read_jsonl(input)?;
    let template = p.config.template()?;
    let pairs = examples
        .iter()
        .map(|e| {
            Ok((
                build_query(&e.context, &e.situation, e.relation, e.effect, template)?.surface,
                e.answer.clone(),
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (model, stats) = train_ngram(pairs, p.config.ngram.order, p.config.ngram.backoff)?;
    p.out.write("model.json", &model.to_json())?;
    #[derive(Serialize)]
    struct Stats {
        retained: usize,
        filtered_empty: usize,
        vocab_size: usize,
        order: usize,
    }
    p.out.write_json(
        "train_stats.json",
        &Stats {
            retained: stats.retained,
            filtered_empty: stats.filtered_empty,
            vocab_size: model.vocab().len(),
            order: model.order(),
        },
    )?;
    log::info!(target: "train-ngram", "trained order-{} model on {} pairs", model.order(), stats.retained);
    Ok(())
}

fn graph_file(index: usize, key: &str) -> String {
    format!("{index:04}_{key}")
}

/// Graph JSON files in a directory, sorted by name.
fn load_graph_dir(dir: &Path) -> anyhow::Result<Vec<(String, StGraph)>> {
    let mut graphs = Vec::new();
    for path in crate::output::list_files(dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .context("graph file name is not UTF-8")?
            .to_string();
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let graph = StGraph::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        graphs.push((name, graph));
    }
    if graphs.is_empty() {
        bail!("no graph files in {}", dir.display());
    }
    Ok(graphs)
}

#[derive(Serialize)]
struct GraphSummary {
    name: String,
    nodes: usize,
    edges: usize,
    failures: usize,
}

fn summarize(name: &str, g: &StGraph) -> GraphSummary {
    GraphSummary {
        name: name.to_string(),
        nodes: g.node_count(),
        edges: g.edge_count(),
        failures: failure_count(g),
    }
}

fn generate(p: &mut Prepared, input: &Path) -> anyhow::Result<()> {
    let backend = open_backend(&p.config)?;
    let gen_config = p.config.generation()?;
    let template = p.config.template()?;
    let spec = p.config.schedule()?;
    let groups = group_examples(read_jsonl::<StExample>(input)?);
    let graphs = groups
        .par_iter()
        .enumerate()
        .map(|(i, group)| {
            let schedule = match &spec {
                ScheduleSpec::FromExamples => RelationSchedule::from_examples(group)?,
                ScheduleSpec::Fixed(s) => s.clone(),
            };
            let first = &group[0];
            let mut generator = GraphGenerator::new(&*backend, &gen_config)?
                .with_template(template)
                .with_stream_base((i as u64) << 32);
            Ok((
                graph_file(i, &first.group_key),
                generator.generate(&first.context, &first.situation, &schedule)?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for (name, graph) in &graphs {
        p.out.write(&format!("graphs/{name}.json"), &graph.to_json())?;
        summary.push(summarize(name, graph));
    }
    let failures: usize = summary.iter().map(|s| s.failures).sum();
    p.out.write_json("generate_summary.json", &summary)?;
    log::info!(target: "generate", "built {} graphs with {} failed queries using {}", graphs.len(), failures, backend.name());
    Ok(())
}

fn expand(p: &mut Prepared, dir: &Path) -> anyhow::Result<()> {
    let backend = open_backend(&p.config)?;
    let gen_config = p.config.generation()?;
    let template = p.config.template()?;
    let policy = p.config.expansion_policy()?;
    let graphs = load_graph_dir(dir)?;
    let expanded = graphs
        .into_par_iter()
        .enumerate()
        .map(|(i, (name, graph))| {
            let leaves: Vec<_> = graph
                .nodes()
                .iter()
                .map(|n| n.id)
                .filter(|&id| graph.outgoing(id).next().is_none())
                .collect();
            let base = graph
                .provenance()
                .iter()
                .map(|r| r.stream + 1)
                .max()
                .unwrap_or((i as u64) << 32);
            let mut generator = GraphGenerator::new(&*backend, &gen_config)?
                .with_template(template)
                .with_stream_base(base);
            Ok((name, generator.expand(graph, &leaves, &policy)?))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct ExpandSummary {
        #[serde(flatten)]
        graph: GraphSummary,
        stop_reason: StopReason,
        layers: usize,
    }
    let mut summary = Vec::new();
    for (name, expansion) in &expanded {
        p.out
            .write(&format!("graphs/{name}.json"), &expansion.graph.to_json())?;
        summary.push(ExpandSummary {
            graph: summarize(name, &expansion.graph),
            stop_reason: expansion.stop_reason,
            layers: expansion.layers,
        });
    }
    p.out.write_json("expand_summary.json", &summary)?;
    log::info!(target: "expand", "expanded {} graphs", expanded.len());
    Ok(())
}

fn eval(p: &mut Prepared, generated: &Path, references: &Path) -> anyhow::Result<()> {
    let refs = load_graph_dir(references)?;
    let gens = load_graph_dir(generated)?;
    let mut paired = Vec::with_capacity(refs.len());
    for (name, _) in &refs {
        let g = gens
            .iter()
            .find(|(n, _)| n == name)
            .with_context(|| format!("no generated graph named {name}"))?;
        paired.push(g.1.clone());
    }
    let names: Vec<&str> = refs.iter().map(|(n, _)| n.as_str()).collect();
    let refs: Vec<StGraph> = refs.iter().map(|(_, g)| g.clone()).collect();
    let report = eval_graphs(&paired, &refs)?;
    #[derive(Serialize)]
    struct Named<'a> {
        names: Vec<&'a str>,
        #[serde(flatten)]
        report: &'a situgraph::EvalReport,
    }
    p.out
        .write_json("eval_report.json", &Named { names, report: &report })?;
    println!("{:<10} {:>10}", "metric", "score");
    for (n, b) in report.bleu_by_order.iter().enumerate() {
        println!("{:<10} {:>10.2}", format!("BLEU-{}", n + 1), b);
    }
    println!("{:<10} {:>10.2}", "ROUGE-L", report.rouge_l_f);
    println!("{:<10} {:>10}", "pairs", report.n_pairs);
    Ok(())
}

fn consistency(p: &mut Prepared, cases_path: &Path) -> anyhow::Result<()> {
    let backend = open_backend(&p.config)?;
    let gen_config = p.config.generation()?;
    let policy = p.config.consistency_policy()?;
    let criterion = p.config.criterion()?;
    let mut seen = HashSet::new();
    let cases: Vec<(String, String)> = read_jsonl::<StExample>(cases_path)?
        .into_iter()
        .filter(|e| seen.insert(e.group_key.clone()))
        .map(|e| (e.context, e.situation))
        .collect();
    let report = consistency_rate(&*backend, &cases, &policy, criterion, &gen_config)?;
    p.out.write_json("consistency_report.json", &report)?;
    match report.rate {
        Some(rate) => println!(
            "paths {}  consistent {}  exact {}  rate {:.4}",
            report.n_paths, report.n_consistent, report.n_exact, rate
        ),
        None => println!("paths 0  rate undefined (no positive two-hop paths)"),
    }
    Ok(())
}

fn augment(p: &mut Prepared, input: &Path) -> anyhow::Result<()> {
    let backend = open_backend(&p.config)?;
    let gen_config = p.config.generation()?;
    let config = p.config.augment()?;
    let items: Vec<QaItem> = read_jsonl(input)?;
    let augmented = augment_all(&*backend, &items, &gen_config, &config)?;
    let path = p.out.path_for("train.jsonl")?;
    let manifest = export_training_file(&augmented, &path)?;
    p.out.write_json("export_manifest.json", &manifest)?;
    for (i, item) in augmented.iter().enumerate() {
        p.out
            .write(&format!("graphs/{i:04}_cause.json"), &item.cause_graph.to_json())?;
        p.out
            .write(&format!("graphs/{i:04}_ending.json"), &item.ending_graph.to_json())?;
    }
    log::info!(target: "augment", "exported {} items", manifest.n_items);
    Ok(())
}

fn zeroshot(p: &mut Prepared, input: &Path) -> anyhow::Result<()> {
    let backend = open_backend(&p.config)?;
    let items: Vec<ZeroShotItem> = read_jsonl(input)?;
    let report = zero_shot_eval(&*backend, &items, &p.config.zeroshot())?;
    p.out.write_json("zeroshot_report.json", &report)?;
    println!(
        "items {}  correct {}  ties {}  accuracy {:.4}",
        report.n_items, report.n_correct, report.ties, report.accuracy
    );
    Ok(())
}

fn export(
    p: &mut Prepared,
    examples: Option<&Path>,
    graphs: Option<&Path>,
    format: ExportFormat,
) -> anyhow::Result<()> {
    let graphs: Vec<(String, StGraph)> = match (examples, graphs) {
        (Some(path), _) => group_examples(read_jsonl::<StExample>(path)?)
            .iter()
            .enumerate()
            .map(|(i, group)| Ok((graph_file(i, &group[0].group_key), reference_graph(group)?)))
            .collect::<anyhow::Result<_>>()?,
        (None, Some(dir)) => load_graph_dir(dir)?,
        (None, None) => bail!("either --examples or --graphs is required"),
    };
    for (name, graph) in &graphs {
        let (ext, body) = match format {
            ExportFormat::Json => ("json", graph.to_json()),
            ExportFormat::Dot => ("dot", graph.to_dot()),
            ExportFormat::Flat => ("txt", format!("{}\n", graph.flatten())),
        };
        p.out.write(&format!("graphs/{name}.{ext}"), &body)?;
    }
    log::info!(target: "graph-export", "exported {} graphs", graphs.len());
    Ok(())
}

fn replay(manifest_path: &Path, out: &Path) -> anyhow::Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let config = dir.join(CONFIG_FILE);
    let current = hash_inputs(
        &manifest
            .inputs
            .iter()
            .map(|i| PathBuf::from(&i.path))
            .collect::<Vec<_>>(),
    )?;
    for (then, now) in manifest.inputs.iter().zip(&current) {
        if then != now {
            bail!("input {} changed since the recorded run", then.path);
        }
    }
    if current.len() != manifest.inputs.len() {
        bail!("the set of input files changed since the recorded run");
    }
    let mut argv = vec!["situgraph".to_string()];
    argv.extend(manifest.args.iter().cloned());
    argv.extend([
        "--config".to_string(),
        config.display().to_string(),
        "--out".to_string(),
        out.display().to_string(),
        "--no-env".to_string(),
    ]);
    let cli = Cli::try_parse_from(&argv).context("recorded arguments no longer parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("refusing to replay a replay");
    }
    let fresh = run_command(&cli, manifest.args.clone())?.expect("non-replay commands produce a manifest");
    if fresh.outputs != manifest.outputs {
        let differing: Vec<&str> = fresh
            .outputs
            .iter()
            .filter(|o| !manifest.outputs.contains(o))
            .map(|o| o.path.as_str())
            .collect();
        bail!(
            "replayed outputs differ from the recorded run: {}",
            differing.join(", ")
        );
    }
    log::info!(target: "replay", "{} outputs match the recorded run", fresh.outputs.len());
    Ok(())
}
