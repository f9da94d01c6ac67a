//! Command-line front end for the temporal retrieval laboratory. One
//! manifest file drives every subcommand; artifacts are plain files
//! (JSONL corpus, binary checkpoints, TREC runs, CSV reports).
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tempmerge::corpuslab::{
    queries_to_jsonl, read_queries, write_passages, write_queries, QueryRecord, Split,
};
use tempmerge::encoder::{
    encode, load_checkpoint, materialize_lora, save_checkpoint, EncoderParams, Vocab,
};
use tempmerge::evalkit::{
    ndcg_at_k, per_specifier_report, recall_at_k, MetricsReport, MetricsRow, Qrels,
};
use tempmerge::experiment::{
    base_train_data, load_router, prepare, save_router, train_data_for, ExperimentConfig,
    Prepared,
};
use tempmerge::mergekit::{merge_average, merge_report, merge_sequence, weight_change};
use tempmerge::retrieval::{
    build_index, ensemble_search, load_index, routed_search, run_from_trec, run_to_trec,
    save_index, search, RetrievalRun,
};
use tempmerge::timeparse::Specifier;
use tempmerge::trainlab::{trace_to_csv, train, train_router, RouterConfig, TrainMode};

#[derive(Parser)]
#[command(name = "tempmerge", version, about = "temporal dense-retrieval laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment manifest (key=value lines).
    #[arg(long, default_value = "tempmerge.manifest")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, queries, vocabulary, and qrels.
    GenCorpus {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train one model and write its checkpoint plus a loss trace.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Train the single-specifier model for this specifier name.
        #[arg(long, conflicts_with_all = ["pooled", "lora", "router", "base"])]
        specifier: Option<String>,
        /// Train on the pooled temporal train split.
        #[arg(long)]
        pooled: bool,
        /// Regularized variant of --pooled (dropout + weight decay).
        #[arg(long, requires = "pooled")]
        regularized: bool,
        /// LoRA variant over the frozen base model.
        #[arg(long)]
        lora: bool,
        /// Train the temporal/non-temporal query router.
        #[arg(long)]
        router: bool,
        /// Pretrain the base model on the non-temporal train split.
        #[arg(long)]
        base: bool,
    },
    /// Average checkpoints (full merge or the prefix sequence).
    Merge {
        #[command(flatten)]
        config: ConfigArg,
        /// Explicit checkpoint paths to merge.
        #[arg(long, num_args = 1.., conflicts_with = "sequence")]
        inputs: Vec<PathBuf>,
        /// Output checkpoint path for --inputs.
        #[arg(long, requires = "inputs")]
        output: Option<PathBuf>,
        /// Merge the specifier checkpoints incrementally in data order.
        #[arg(long)]
        sequence: bool,
    },
    /// Build and save the exact-search index for a checkpoint.
    Index {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a retrieval strategy over the test queries, emitting TREC run
    /// lines.
    Search {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_parser = ["single", "ensemble", "routed"])]
        strategy: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Model checkpoint(s): one for single, two or more for ensemble,
        /// vanilla then tuned for routed.
        #[arg(long, num_args = 1..)]
        model: Vec<PathBuf>,
        /// Matching index file(s), parallel to --model.
        #[arg(long, num_args = 1..)]
        index: Vec<PathBuf>,
        /// Router checkpoint (routed strategy only).
        #[arg(long)]
        router: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a run file against qrels.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Also write the per-specifier Recall@20 breakdown here.
        #[arg(long)]
        breakdown: Option<PathBuf>,
    },
    /// Weight-change magnitudes of checkpoints against a base.
    AnalyzeWeights {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        base: PathBuf,
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
    },
    /// Per-token contributions to one query-passage score.
    DumpScores {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        passage: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;
type CliResult = Result<(), AnyError>;

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig, AnyError> {
    let mut config = ExperimentConfig::load_manifest(&arg.config)?;
    let seed = config.effective_seed();
    config.corpus.seed = seed;
    config.train.seed = seed;
    Ok(config)
}

fn corpus_paths(config: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let dir = &config.corpus_dir;
    (
        dir.join("passages.jsonl"),
        dir.join("queries.jsonl"),
        dir.join("vocab.txt"),
        dir.join("qrels.txt"),
    )
}

/// Corpus artifacts reloaded from disk for post-generation commands.
struct LoadedCorpus {
    queries: Vec<QueryRecord>,
    vocab: Vocab,
    prepared: Prepared,
}

fn load_corpus(config: &ExperimentConfig) -> Result<LoadedCorpus, AnyError> {
    let (passages_path, queries_path, vocab_path, _) = corpus_paths(config);
    if !passages_path.exists() {
        return Err(format!(
            "corpus not found at {}; run gen-corpus first",
            passages_path.display()
        )
        .into());
    }
    let passages = tempmerge::corpuslab::read_passages(&passages_path)?;
    let queries = read_queries(&queries_path)?;
    let vocab = Vocab::load(&vocab_path)?;
    let passage_tokens = passages
        .iter()
        .map(|p| (p.passage_id.clone(), vocab.encode_text(&p.text)))
        .collect();
    Ok(LoadedCorpus {
        queries: queries.clone(),
        vocab: vocab.clone(),
        prepared: Prepared {
            passages,
            queries,
            vocab,
            passage_tokens,
        },
    })
}

fn qrels_to_text(queries: &[QueryRecord]) -> String {
    let mut out = String::new();
    for q in queries.iter().filter(|q| q.split == Split::Test) {
        for pid in &q.gold_passage_ids {
            out.push_str(&format!("{} 0 {pid} 1\n", q.query_id));
        }
    }
    out
}

fn qrels_from_file(path: &Path) -> Result<Qrels, AnyError> {
    let text = std::fs::read_to_string(path)?;
    let mut qrels = Qrels::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(format!("qrels line {}: expected 4 fields", i + 1).into());
        }
        let relevance: i64 = fields[3].parse()?;
        if relevance > 0 {
            qrels
                .relevant
                .entry(fields[0].to_string())
                .or_default()
                .insert(fields[2].to_string());
        }
    }
    Ok(qrels)
}

fn seed_name(config: &ExperimentConfig, stem: &str, ext: &str) -> PathBuf {
    config
        .checkpoint_dir
        .join(format!("{stem}-seed{}.{ext}", config.train.seed))
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenCorpus { config } => cmd_gen_corpus(&load_config(&config)?),
        Command::Train {
            config,
            specifier,
            pooled,
            regularized,
            lora,
            router,
            base,
        } => {
            let scope = match (&specifier, pooled, lora, router, base) {
                (Some(name), ..) => TrainScope::Specifier(
                    Specifier::from_name(name).ok_or_else(|| {
                        format!("unknown specifier {name:?}; expected one of the seven names")
                    })?,
                ),
                (None, true, ..) => TrainScope::Pooled { regularized },
                (None, false, true, ..) => TrainScope::Lora,
                (None, false, false, true, _) => TrainScope::Router,
                (None, false, false, false, true) => TrainScope::Base,
                _ => return Err("choose one of --specifier/--pooled/--lora/--router/--base".into()),
            };
            cmd_train(&load_config(&config)?, scope)
        }
        Command::Merge {
            config,
            inputs,
            output,
            sequence,
        } => cmd_merge(&load_config(&config)?, &inputs, output.as_deref(), sequence),
        Command::Index {
            config,
            model,
            output,
        } => cmd_index(&load_config(&config)?, &model, &output),
        Command::Search {
            config,
            strategy,
            k,
            model,
            index,
            router,
            output,
        } => cmd_search(
            &load_config(&config)?,
            &strategy,
            k,
            &model,
            &index,
            router.as_deref(),
            &output,
        ),
        Command::Eval {
            config,
            run,
            qrels,
            breakdown,
        } => cmd_eval(&load_config(&config)?, &run, &qrels, breakdown.as_deref()),
        Command::AnalyzeWeights {
            config,
            base,
            checkpoints,
        } => cmd_analyze_weights(&load_config(&config)?, &base, &checkpoints),
        Command::DumpScores {
            config,
            model,
            query,
            passage,
        } => cmd_dump_scores(&load_config(&config)?, &model, &query, &passage),
    }
}

fn cmd_gen_corpus(config: &ExperimentConfig) -> CliResult {
    let prepared = prepare(config)?;
    std::fs::create_dir_all(&config.corpus_dir)?;
    let (passages_path, queries_path, vocab_path, qrels_path) = corpus_paths(config);
    write_passages(&prepared.passages, &passages_path)?;
    write_queries(&prepared.queries, &queries_path)?;
    prepared.vocab.save(&vocab_path)?;
    std::fs::write(&qrels_path, qrels_to_text(&prepared.queries))?;
    // keep the round-trip honest: serialized text matches in-memory state
    debug_assert_eq!(
        queries_to_jsonl(&prepared.queries),
        std::fs::read_to_string(&queries_path)?
    );

    println!("passages: {}", prepared.passages.len());
    println!("vocab: {} tokens", prepared.vocab.len());
    println!("{:<10} {:>7} {:>6} {:>6}", "specifier", "train", "dev", "test");
    let mut totals = (0usize, 0usize, 0usize);
    for &spec in &Specifier::ALL {
        let count = |split| {
            prepared
                .queries
                .iter()
                .filter(|q| q.specifier == Some(spec) && q.split == split)
                .count()
        };
        let (tr, de, te) = (count(Split::Train), count(Split::Dev), count(Split::Test));
        totals = (totals.0 + tr, totals.1 + de, totals.2 + te);
        println!("{:<10} {tr:>7} {de:>6} {te:>6}", spec.name());
    }
    println!("{:<10} {:>7} {:>6} {:>6}", "total", totals.0, totals.1, totals.2);
    let nt = |split| {
        prepared
            .queries
            .iter()
            .filter(|q| !q.is_temporal() && q.split == split)
            .count()
    };
    println!(
        "{:<10} {:>7} {:>6} {:>6}",
        "none",
        nt(Split::Train),
        nt(Split::Dev),
        nt(Split::Test)
    );
    Ok(())
}

enum TrainScope {
    Base,
    Pooled { regularized: bool },
    Lora,
    Router,
    Specifier(Specifier),
}

fn cmd_train(config: &ExperimentConfig, scope: TrainScope) -> CliResult {
    let corpus = load_corpus(config)?;
    let prepared = &corpus.prepared;
    std::fs::create_dir_all(&config.checkpoint_dir)?;
    std::fs::create_dir_all(&config.run_dir)?;

    if let TrainScope::Router = scope {
        let base = load_checkpoint(&seed_name(config, "base", "ckpt"))?;
        let tokens = |temporal: bool| -> Vec<Vec<u32>> {
            prepared
                .queries_where(Split::Train, Some(temporal))
                .iter()
                .map(|q| prepared.vocab.encode_text(&q.text))
                .collect()
        };
        let router = train_router(
            &tokens(true),
            &tokens(false),
            &base,
            &RouterConfig {
                seed: config.train.seed,
                ..RouterConfig::default()
            },
        )?;
        let path = seed_name(config, "router", "bin");
        save_router(&router, &path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let is_base = matches!(scope, TrainScope::Base);
    let (stem, start, train_config, queries, dev): (
        String,
        EncoderParams,
        _,
        Vec<&QueryRecord>,
        Vec<&QueryRecord>,
    ) = match scope {
        TrainScope::Base => {
            let init = EncoderParams::init(
                prepared.vocab.len(),
                config.dim,
                config.init_scale,
                config.train.seed,
                prepared.vocab.hash(),
            );
            let cfg = tempmerge::trainlab::TrainConfig {
                epochs: config.base_epochs,
                mode: TrainMode::Full,
                ..config.train.clone()
            };
            (
                "base".into(),
                init,
                cfg,
                prepared.queries_where(Split::Train, Some(false)),
                prepared.queries_where(Split::Dev, Some(false)),
            )
        }
        TrainScope::Pooled { regularized } => {
            let base = load_checkpoint(&seed_name(config, "base", "ckpt"))?;
            let mode = if regularized {
                TrainMode::FullRegularized
            } else {
                TrainMode::Full
            };
            let cfg = tempmerge::trainlab::TrainConfig {
                mode,
                ..config.train.clone()
            };
            let stem = if regularized { "pooled-reg" } else { "pooled" };
            (
                stem.into(),
                base,
                cfg,
                prepared.queries_where(Split::Train, Some(true)),
                prepared.queries_where(Split::Dev, Some(true)),
            )
        }
        TrainScope::Lora => {
            let base = load_checkpoint(&seed_name(config, "base", "ckpt"))?;
            let cfg = tempmerge::trainlab::TrainConfig {
                mode: TrainMode::Lora,
                ..config.train.clone()
            };
            (
                "lora".into(),
                base,
                cfg,
                prepared.queries_where(Split::Train, Some(true)),
                prepared.queries_where(Split::Dev, Some(true)),
            )
        }
        TrainScope::Specifier(spec) => {
            let base = load_checkpoint(&seed_name(config, "base", "ckpt"))?;
            let pick = |split| -> Vec<&QueryRecord> {
                prepared
                    .queries
                    .iter()
                    .filter(|q| q.split == split && q.specifier == Some(spec))
                    .collect()
            };
            (
                format!("specialist-{}", spec.name()),
                base,
                config.train.clone(),
                pick(Split::Train),
                pick(Split::Dev),
            )
        }
        TrainScope::Router => unreachable!(),
    };

    let data = if is_base {
        base_train_data(prepared)
    } else {
        train_data_for(prepared, &queries, &dev)
    };
    let outcome = train(&start, &data, &train_config)?;
    let params = match &outcome.adapter {
        Some(adapter) => materialize_lora(&outcome.params, adapter)?,
        None => outcome.params.clone(),
    };
    let ckpt = seed_name(config, &stem, "ckpt");
    save_checkpoint(&params, &ckpt)?;
    let trace_path = config
        .run_dir
        .join(format!("{stem}-seed{}-trace.csv", config.train.seed));
    std::fs::write(&trace_path, trace_to_csv(&outcome.trace))?;
    println!(
        "wrote {} ({} examples, best dev top-1 {:.4})",
        ckpt.display(),
        data.examples.len(),
        outcome.best_dev_top1
    );
    let _ = corpus.queries;
    Ok(())
}

/// Specifier checkpoints ordered by train-split size, largest first.
fn merge_order(config: &ExperimentConfig, queries: &[QueryRecord]) -> Vec<(Specifier, PathBuf)> {
    let mut order: Vec<(Specifier, usize)> = Specifier::ALL
        .iter()
        .map(|&s| {
            let count = queries
                .iter()
                .filter(|q| q.split == Split::Train && q.specifier == Some(s))
                .count();
            (s, count)
        })
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
        .into_iter()
        .map(|(s, _)| (s, seed_name(config, &format!("specialist-{}", s.name()), "ckpt")))
        .collect()
}

fn cmd_merge(
    config: &ExperimentConfig,
    inputs: &[PathBuf],
    output: Option<&Path>,
    sequence: bool,
) -> CliResult {
    std::fs::create_dir_all(&config.checkpoint_dir)?;
    std::fs::create_dir_all(&config.run_dir)?;
    if sequence {
        let corpus = load_corpus(config)?;
        let ordered = merge_order(config, &corpus.queries);
        let mut members = Vec::new();
        for (spec, path) in &ordered {
            members.push((spec.name().to_string(), load_checkpoint(path)?));
        }
        let models: Vec<EncoderParams> = members.iter().map(|(_, m)| m.clone()).collect();
        let prefixes = merge_sequence(&models)?;
        for (i, prefix) in prefixes.iter().enumerate() {
            let path = seed_name(config, &format!("merge{}", i + 1), "ckpt");
            save_checkpoint(prefix, &path)?;
        }
        let tsm_path = seed_name(config, "tsm", "ckpt");
        save_checkpoint(prefixes.last().unwrap(), &tsm_path)?;

        let base = load_checkpoint(&seed_name(config, "base", "ckpt"))?;
        let report = merge_report(&base, &members)?;
        if !report.convexity_holds() {
            return Err("merge convexity violated: merged change exceeds member mean".into());
        }
        let kv_path = config
            .run_dir
            .join(format!("merge-report-seed{}.txt", config.train.seed));
        std::fs::write(&kv_path, report.to_key_value())?;
        let csv_path = config
            .run_dir
            .join(format!("merge-report-seed{}.csv", config.train.seed));
        std::fs::write(&csv_path, report.to_csv())?;
        println!(
            "wrote {} prefix checkpoints, {}, and merge reports",
            prefixes.len(),
            tsm_path.display()
        );
        print!("{}", report.to_key_value());
        return Ok(());
    }

    if inputs.is_empty() {
        return Err("merge needs --inputs or --sequence".into());
    }
    let output = output.ok_or("merge --inputs needs --output")?;
    let mut models = Vec::new();
    for path in inputs {
        models.push(load_checkpoint(path)?);
    }
    let merged = merge_average(&models)?;
    save_checkpoint(&merged, output)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn cmd_index(config: &ExperimentConfig, model: &Path, output: &Path) -> CliResult {
    let corpus = load_corpus(config)?;
    let params = load_checkpoint(model)?;
    let index = build_index(&params, &corpus.prepared.passage_tokens)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_index(&index, output)?;
    println!(
        "indexed {} passages at dimension {}",
        index.ids.len(),
        index.matrix.cols
    );
    Ok(())
}

fn cmd_search(
    config: &ExperimentConfig,
    strategy: &str,
    k: usize,
    model_paths: &[PathBuf],
    index_paths: &[PathBuf],
    router_path: Option<&Path>,
    output: &Path,
) -> CliResult {
    let corpus = load_corpus(config)?;
    let vocab = &corpus.vocab;
    let test_queries: Vec<&QueryRecord> = corpus
        .queries
        .iter()
        .filter(|q| q.split == Split::Test)
        .collect();
    if model_paths.len() != index_paths.len() {
        return Err("--model and --index must be given in matching pairs".into());
    }
    let mut models = Vec::new();
    for (m, i) in model_paths.iter().zip(index_paths) {
        models.push((load_checkpoint(m)?, load_index(i)?));
    }

    let mut results = BTreeMap::new();
    match strategy {
        "single" => {
            if models.len() != 1 {
                return Err("single strategy takes exactly one --model/--index pair".into());
            }
            let (params, index) = &models[0];
            for q in &test_queries {
                let emb = encode(params, None, &vocab.encode_text(&q.text))?;
                results.insert(q.query_id.clone(), search(index, &emb, k)?);
            }
        }
        "ensemble" => {
            let refs: Vec<(&EncoderParams, &tempmerge::retrieval::Index)> =
                models.iter().map(|(p, i)| (p, i)).collect();
            for q in &test_queries {
                let hits = ensemble_search(&refs, &vocab.encode_text(&q.text), k)?;
                results.insert(q.query_id.clone(), hits);
            }
        }
        "routed" => {
            if models.len() != 2 {
                return Err("routed strategy takes vanilla then tuned --model/--index pairs".into());
            }
            let router_path = router_path.ok_or("routed strategy needs --router")?;
            let router = load_router(router_path)?;
            let (vanilla, iv) = &models[0];
            let (tuned, it) = &models[1];
            let mut temporal_routes = 0usize;
            for q in &test_queries {
                let (hits, route) = routed_search(
                    &router,
                    (vanilla, iv),
                    (tuned, it),
                    &vocab.encode_text(&q.text),
                    k,
                )?;
                if route == tempmerge::retrieval::Route::Temporal {
                    temporal_routes += 1;
                }
                results.insert(q.query_id.clone(), hits);
            }
            println!(
                "routed {temporal_routes}/{} queries to the tuned model",
                test_queries.len()
            );
        }
        other => return Err(format!("unknown strategy {other}").into()),
    }

    let run = RetrievalRun {
        results,
        strategy: strategy.to_string(),
        k,
    };
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(output, run_to_trec(&run))?;
    println!("wrote {} ({} queries)", output.display(), run.results.len());
    Ok(())
}

fn cmd_eval(
    config: &ExperimentConfig,
    run_path: &Path,
    qrels_path: &Path,
    breakdown: Option<&Path>,
) -> CliResult {
    let run = run_from_trec(&std::fs::read_to_string(run_path)?)?;
    let qrels = qrels_from_file(qrels_path)?;

    let mut report = MetricsReport::default();
    let ks = if config.k_values.is_empty() {
        vec![5, 20]
    } else {
        config.k_values.clone()
    };
    // Table-style row per temporal/non-temporal partition of the run
    let corpus = load_corpus(config)?;
    let temporal_ids: std::collections::BTreeSet<&str> = corpus
        .queries
        .iter()
        .filter(|q| q.is_temporal())
        .map(|q| q.query_id.as_str())
        .collect();
    let partition = |temporal: bool| -> RetrievalRun {
        RetrievalRun {
            results: run
                .results
                .iter()
                .filter(|(qid, _)| temporal_ids.contains(qid.as_str()) == temporal)
                .map(|(q, h)| (q.clone(), h.clone()))
                .collect(),
            strategy: run.strategy.clone(),
            k: run.k,
        }
    };
    for (name, sub) in [
        ("temporal", partition(true)),
        ("non_temporal", partition(false)),
    ] {
        if sub.results.is_empty() {
            continue;
        }
        let metric = |k: usize| -> Result<(f64, f64), AnyError> {
            Ok((recall_at_k(&sub, &qrels, k)?, ndcg_at_k(&sub, &qrels, k)?))
        };
        let (r5, n5) = metric(*ks.first().unwrap_or(&5))?;
        let (r20, n20) = metric(*ks.last().unwrap_or(&20))?;
        report.rows.push(MetricsRow {
            dataset: name.into(),
            recall5: r5,
            recall20: r20,
            ndcg5: n5,
            ndcg20: n20,
        });
    }
    print!("{}", report.to_csv());

    if let Some(path) = breakdown {
        let spec_report = per_specifier_report(&run, &corpus.queries, &qrels, 20)?;
        std::fs::write(path, spec_report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_analyze_weights(
    config: &ExperimentConfig,
    base_path: &Path,
    checkpoint_paths: &[PathBuf],
) -> CliResult {
    let base = load_checkpoint(base_path)?;
    let mut csv = String::from("model,tensor,frobenius_norm\n");
    let mut totals = Vec::new();
    for path in checkpoint_paths {
        let params = load_checkpoint(path)?;
        let change = weight_change(&base, &params)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for (tensor, norm) in &change.per_tensor {
            csv.push_str(&format!("{name},{tensor},{norm:.12}\n"));
        }
        csv.push_str(&format!("{name},total,{:.12}\n", change.total));
        totals.push((name, change.total));
    }
    print!("{csv}");
    std::fs::create_dir_all(&config.run_dir)?;
    let out = config
        .run_dir
        .join(format!("weight-change-seed{}.csv", config.train.seed));
    std::fs::write(&out, csv)?;
    for (name, total) in totals {
        eprintln!("{name}: {total:.6}");
    }
    Ok(())
}

fn cmd_dump_scores(
    config: &ExperimentConfig,
    model: &Path,
    query: &str,
    passage: &str,
) -> CliResult {
    let corpus = load_corpus(config)?;
    let vocab = &corpus.vocab;
    let params = load_checkpoint(model)?;
    let q_tokens = vocab.encode_text(query);
    let p_tokens = vocab.encode_text(passage);
    if p_tokens.is_empty() {
        return Err("passage has no tokens".into());
    }
    if q_tokens.is_empty() {
        return Err("query has no tokens".into());
    }
    let q_emb = encode(&params, None, &q_tokens)?;

    // the passage embedding is affine in its token mean, so the dot
    // product splits into one term per token plus a bias term
    let len = p_tokens.len() as f64;
    let mut csv = String::from("token,token_id,contribution\n");
    let mut total = 0.0;
    for &tok in &p_tokens {
        let row = params.embed.row(tok as usize);
        let projected = params.proj_w.matvec(row);
        let contribution: f64 = projected
            .iter()
            .zip(&q_emb.0)
            .map(|(a, b)| a * b / len)
            .sum();
        total += contribution;
        let surface = vocab.token(tok).unwrap_or("<unk>");
        csv.push_str(&format!("{surface},{tok},{contribution:.12}\n"));
    }
    let bias: f64 = params.proj_b.iter().zip(&q_emb.0).map(|(a, b)| a * b).sum();
    total += bias;
    csv.push_str(&format!("<bias>,,{bias:.12}\n"));
    csv.push_str(&format!("<total>,,{total:.12}\n"));

    let p_emb = encode(&params, None, &p_tokens)?;
    let direct: f64 = q_emb.0.iter().zip(&p_emb.0).map(|(a, b)| a * b).sum();
    if (total - direct).abs() > 1e-10 {
        return Err(format!(
            "per-token contributions ({total}) disagree with the direct score ({direct})"
        )
        .into());
    }
    print!("{csv}");
    Ok(())
}
