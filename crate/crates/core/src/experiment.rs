//! Manifest-driven experiment orchestration: corpus preparation, the
//! full training roster (base, pooled, per-specifier, router), merging,
//! and the directional per-seed evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpuslab::{
    balance_augment, sample_by_specifier, CorpusConfig, CorpusError, Passage, QueryRecord,
    Split, World,
};
use crate::encoder::{encode, EncoderError, EncoderParams, Matrix, Vocab};
use crate::evalkit::{per_specifier_report, recall_at_k, EvalError, Qrels, SpecifierReport};
use crate::mergekit::{merge_average, merge_report, merge_sequence, MergeError, MergeReport};
use crate::retrieval::{build_index, search, Index, RetrievalError, RetrievalRun};
use crate::timeparse::Specifier;
use crate::trainlab::{
    train, train_router, DevQuery, RouterConfig, RouterParams, TrainConfig, TrainData,
    TrainError, TrainExample, TrainMode,
};

/// Environment variable overriding the manifest seed.
pub const SEED_ENV: &str = "TEMPMERGE_SEED";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("manifest line {line}: {text}")]
    Manifest { line: usize, text: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Single source of truth for an experiment: corpus shape, training
/// hyperparameters, encoder size, and artifact paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub run_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    /// Pretraining epochs for the base model on non-temporal data.
    pub base_epochs: usize,
    pub dim: usize,
    pub init_scale: f64,
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_dir: "corpus".into(),
            checkpoint_dir: "checkpoints".into(),
            run_dir: "runs".into(),
            corpus: CorpusConfig::default(),
            train: TrainConfig {
                batch_size: 8,
                ..TrainConfig::default()
            },
            base_epochs: 2,
            dim: 32,
            init_scale: 0.05,
            k_values: vec![5, 20],
            seeds: vec![17, 18, 19],
        }
    }
}

impl ExperimentConfig {
    /// The manifest seed, unless `TEMPMERGE_SEED` overrides it.
    pub fn effective_seed(&self) -> u64 {
        std::env::var(SEED_ENV)
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(self.corpus.seed)
    }

    pub fn to_manifest(&self) -> String {
        let mode = match self.train.mode {
            TrainMode::Full => "full",
            TrainMode::Lora => "lora",
            TrainMode::FullRegularized => "reg",
        };
        let join = |xs: &[u64]| {
            xs.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        };
        format!(
            "paths.corpus_dir={}\n\
             paths.checkpoint_dir={}\n\
             paths.run_dir={}\n\
             corpus.entity_count={}\n\
             corpus.facts_per_entity={}\n\
             corpus.year_start={}\n\
             corpus.year_end={}\n\
             corpus.queries_per_specifier={}\n\
             corpus.nontemporal_query_count={}\n\
             corpus.chunk_size={}\n\
             corpus.seed={}\n\
             train.learning_rate={}\n\
             train.epochs={}\n\
             train.batch_size={}\n\
             train.temperature={}\n\
             train.negatives={}\n\
             train.weight_decay={}\n\
             train.dropout_rate={}\n\
             train.seed={}\n\
             train.eval_every={}\n\
             train.mode={mode}\n\
             train.lora_rank={}\n\
             train.lora_alpha={}\n\
             base_epochs={}\n\
             dim={}\n\
             init_scale={}\n\
             k_values={}\n\
             seeds={}\n",
            self.corpus_dir.display(),
            self.checkpoint_dir.display(),
            self.run_dir.display(),
            self.corpus.entity_count,
            self.corpus.facts_per_entity,
            self.corpus.year_range.0,
            self.corpus.year_range.1,
            self.corpus.queries_per_specifier,
            self.corpus.nontemporal_query_count,
            self.corpus.chunk_size,
            self.corpus.seed,
            self.train.learning_rate,
            self.train.epochs,
            self.train.batch_size,
            self.train.temperature,
            self.train.negatives,
            self.train.weight_decay,
            self.train.dropout_rate,
            self.train.seed,
            self.train.eval_every,
            self.train.lora_rank,
            self.train.lora_alpha,
            self.base_epochs,
            self.dim,
            self.init_scale,
            self.k_values
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            join(&self.seeds),
        )
    }

    pub fn from_manifest(text: &str) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = || ExperimentError::Manifest {
                line: i + 1,
                text: raw.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(err)?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! set {
                ($slot:expr) => {
                    $slot = value.parse().map_err(|_| err())?
                };
            }
            match key {
                "paths.corpus_dir" => config.corpus_dir = value.into(),
                "paths.checkpoint_dir" => config.checkpoint_dir = value.into(),
                "paths.run_dir" => config.run_dir = value.into(),
                "corpus.entity_count" => set!(config.corpus.entity_count),
                "corpus.facts_per_entity" => set!(config.corpus.facts_per_entity),
                "corpus.year_start" => set!(config.corpus.year_range.0),
                "corpus.year_end" => set!(config.corpus.year_range.1),
                "corpus.queries_per_specifier" => set!(config.corpus.queries_per_specifier),
                "corpus.nontemporal_query_count" => set!(config.corpus.nontemporal_query_count),
                "corpus.chunk_size" => set!(config.corpus.chunk_size),
                "corpus.seed" => set!(config.corpus.seed),
                "train.learning_rate" => set!(config.train.learning_rate),
                "train.epochs" => set!(config.train.epochs),
                "train.batch_size" => set!(config.train.batch_size),
                "train.temperature" => set!(config.train.temperature),
                "train.negatives" => set!(config.train.negatives),
                "train.weight_decay" => set!(config.train.weight_decay),
                "train.dropout_rate" => set!(config.train.dropout_rate),
                "train.seed" => set!(config.train.seed),
                "train.eval_every" => set!(config.train.eval_every),
                "train.mode" => {
                    config.train.mode = match value {
                        "full" => TrainMode::Full,
                        "lora" => TrainMode::Lora,
                        "reg" => TrainMode::FullRegularized,
                        _ => return Err(err()),
                    }
                }
                "train.lora_rank" => set!(config.train.lora_rank),
                "train.lora_alpha" => set!(config.train.lora_alpha),
                "base_epochs" => set!(config.base_epochs),
                "dim" => set!(config.dim),
                "init_scale" => set!(config.init_scale),
                "k_values" => {
                    config.k_values = value
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| err()))
                        .collect::<Result<_>>()?;
                }
                "seeds" => {
                    config.seeds = value
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| err()))
                        .collect::<Result<_>>()?;
                }
                _ => return Err(err()),
            }
        }
        Ok(config)
    }

    pub fn load_manifest(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_manifest(&std::fs::read_to_string(path)?)
    }
}

/// A generated corpus with its augmented train split, shared vocabulary,
/// and pre-tokenized passages.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub passages: Vec<Passage>,
    /// All queries; the temporal train split is post-augmentation.
    pub queries: Vec<QueryRecord>,
    pub vocab: Vocab,
    pub passage_tokens: Vec<(String, Vec<u32>)>,
}

impl Prepared {
    pub fn queries_where(
        &self,
        split: Split,
        temporal: Option<bool>,
    ) -> Vec<&QueryRecord> {
        self.queries
            .iter()
            .filter(|q| q.split == split)
            .filter(|q| temporal.map_or(true, |t| q.is_temporal() == t))
            .collect()
    }
}

/// Equal-share augmentation target for the temporal train split.
pub fn augment_target(queries: &[QueryRecord]) -> usize {
    let total = queries
        .iter()
        .filter(|q| q.split == Split::Train && q.is_temporal())
        .count();
    total / Specifier::ALL.len()
}

/// Generates the world, augments the under-represented train specifiers
/// to an equal share, and builds the shared vocabulary.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let world = World::generate(&config.corpus)?;
    let train_temporal: Vec<QueryRecord> = world
        .queries
        .iter()
        .filter(|q| q.split == Split::Train && q.is_temporal())
        .cloned()
        .collect();
    let groups: Vec<_> = Specifier::ALL
        .iter()
        .map(|&s| sample_by_specifier(&train_temporal, s))
        .collect();
    let target = augment_target(&world.queries);
    let augmented = balance_augment(&world, &groups, target, config.corpus.seed ^ 0xa0a0)?;

    let mut queries: Vec<QueryRecord> = world
        .queries
        .iter()
        .filter(|q| !(q.split == Split::Train && q.is_temporal()))
        .cloned()
        .collect();
    for group in &augmented {
        queries.extend(group.queries.iter().cloned());
    }

    let vocab = Vocab::build(
        world
            .passages
            .iter()
            .map(|p| p.text.as_str())
            .chain(queries.iter().map(|q| q.text.as_str())),
    );
    let passage_tokens = world
        .passages
        .iter()
        .map(|p| (p.passage_id.clone(), vocab.encode_text(&p.text)))
        .collect();
    Ok(Prepared {
        passages: world.passages.clone(),
        queries,
        vocab,
        passage_tokens,
    })
}

const MONTH_TOKENS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august",
    "september", "october", "november", "december",
];

/// Inverse-cloze-style pretraining pairs for the vanilla retriever: each
/// passage is paired with a pseudo-query made of its own tokens minus all
/// explicit date tokens (years and month names). The base model therefore
/// learns to separate every passage, including same-entity fact passages,
/// by content alone while date tokens stay untrained; temporal
/// fine-tuning only has to add the date geometry on top.
pub fn pretrain_examples(prepared: &Prepared) -> Vec<TrainExample> {
    prepared
        .passage_tokens
        .iter()
        .map(|(id, tokens)| {
            let query_tokens: Vec<u32> = tokens
                .iter()
                .copied()
                .filter(|&t| {
                    let word = prepared.vocab.token(t).unwrap_or("");
                    !word.chars().all(|c| c.is_ascii_digit())
                        && !MONTH_TOKENS.contains(&word)
                })
                .collect();
            TrainExample {
                query_tokens,
                positive_tokens: tokens.clone(),
                query_id: format!("ict_{id}"),
            }
        })
        .collect()
}

/// Training data for the vanilla base model: the non-temporal train split
/// plus the inverse-cloze pretraining pairs. The dev set is the plain
/// non-temporal dev split, so the best-dev snapshot is taken where the
/// learned attribute-word associations peak rather than where raw
/// passage-reconstruction accuracy happens to sit.
pub fn base_train_data(prepared: &Prepared) -> TrainData {
    let nt_train = prepared.queries_where(Split::Train, Some(false));
    let nt_dev = prepared.queries_where(Split::Dev, Some(false));
    let mut data = train_data_for(prepared, &nt_train, &nt_dev);
    data.examples.extend(pretrain_examples(prepared));
    data
}

/// Builds training data: one example per (query, gold passage) pair.
/// Spreading examples over the whole gold set keeps the positive-frequency
/// distribution flat enough that in-batch InfoNCE does not learn a passage
/// popularity prior that would swamp within-cluster ranking.
pub fn train_data_for(
    prepared: &Prepared,
    train_queries: &[&QueryRecord],
    dev_queries: &[&QueryRecord],
) -> TrainData {
    let text_of: BTreeMap<&str, &Vec<u32>> = prepared
        .passage_tokens
        .iter()
        .map(|(id, toks)| (id.as_str(), toks))
        .collect();
    let mut examples = Vec::new();
    for q in train_queries {
        let query_tokens = prepared.vocab.encode_text(&q.text);
        for gold in &q.gold_passage_ids {
            if let Some(positive) = text_of.get(gold.as_str()) {
                examples.push(TrainExample {
                    query_tokens: query_tokens.clone(),
                    positive_tokens: (*positive).clone(),
                    query_id: q.query_id.clone(),
                });
            }
        }
    }
    let dev = dev_queries
        .iter()
        .map(|q| DevQuery {
            tokens: prepared.vocab.encode_text(&q.text),
            gold: q.gold_passage_ids.clone(),
        })
        .collect();
    TrainData {
        examples,
        dev,
        passages: prepared.passage_tokens.clone(),
    }
}

/// All models produced by one training pass over a prepared corpus.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub base: EncoderParams,
    pub pooled: EncoderParams,
    /// Per-specifier models in merge order (largest train group first).
    pub specialists: Vec<(Specifier, EncoderParams)>,
    pub tsm: EncoderParams,
    /// Prefix merges of length 1..=7 over `specialists`.
    pub sequence: Vec<EncoderParams>,
    pub merge: MergeReport,
    pub router: RouterParams,
}

pub fn run_training(prepared: &Prepared, config: &ExperimentConfig) -> Result<TrainedModels> {
    let init = EncoderParams::init(
        prepared.vocab.len(),
        config.dim,
        config.init_scale,
        config.train.seed,
        prepared.vocab.hash(),
    );

    // base model: pretrained on date-free inverse-cloze pairs over the
    // whole corpus plus the non-temporal train split
    let base_config = TrainConfig {
        epochs: config.base_epochs,
        mode: TrainMode::Full,
        ..config.train.clone()
    };
    let base = train(&init, &base_train_data(prepared), &base_config)?.params;
    let nt_train = prepared.queries_where(Split::Train, Some(false));

    let t_train = prepared.queries_where(Split::Train, Some(true));
    let t_dev = prepared.queries_where(Split::Dev, Some(true));
    let pooled = train(
        &base,
        &train_data_for(prepared, &t_train, &t_dev),
        &config.train,
    )?
    .params;

    let mut specialists: Vec<(Specifier, usize, EncoderParams)> = Vec::new();
    for &spec in &Specifier::ALL {
        let group: Vec<&QueryRecord> = t_train
            .iter()
            .copied()
            .filter(|q| q.specifier == Some(spec))
            .collect();
        let dev: Vec<&QueryRecord> = t_dev
            .iter()
            .copied()
            .filter(|q| q.specifier == Some(spec))
            .collect();
        let model = train(&base, &train_data_for(prepared, &group, &dev), &config.train)?.params;
        specialists.push((spec, group.len(), model));
    }
    // merge order: most training data first
    specialists.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ordered: Vec<EncoderParams> = specialists.iter().map(|(_, _, m)| m.clone()).collect();
    let tsm = merge_average(&ordered)?;
    let sequence = merge_sequence(&ordered)?;
    let merge = merge_report(
        &base,
        &specialists
            .iter()
            .map(|(s, _, m)| (s.name().to_string(), m.clone()))
            .collect::<Vec<_>>(),
    )?;

    let temporal_tokens: Vec<Vec<u32>> = t_train
        .iter()
        .map(|q| prepared.vocab.encode_text(&q.text))
        .collect();
    let nontemporal_tokens: Vec<Vec<u32>> = nt_train
        .iter()
        .map(|q| prepared.vocab.encode_text(&q.text))
        .collect();
    let router = train_router(
        &temporal_tokens,
        &nontemporal_tokens,
        &base,
        &RouterConfig {
            seed: config.train.seed,
            ..RouterConfig::default()
        },
    )?;

    Ok(TrainedModels {
        base,
        pooled,
        specialists: specialists.into_iter().map(|(s, _, m)| (s, m)).collect(),
        tsm,
        sequence,
        merge,
        router,
    })
}

/// Single-model run over the given queries.
pub fn model_run(
    params: &EncoderParams,
    index: &Index,
    vocab: &Vocab,
    queries: &[&QueryRecord],
    k: usize,
) -> Result<RetrievalRun> {
    let mut results = BTreeMap::new();
    for q in queries {
        let emb = encode(params, None, &vocab.encode_text(&q.text))?;
        results.insert(q.query_id.clone(), search(index, &emb, k)?);
    }
    Ok(RetrievalRun {
        results,
        strategy: "single".into(),
        k,
    })
}

/// Per-seed directional results backing the trend checks.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub base_temporal_r20: f64,
    pub base_nontemporal_r20: f64,
    pub pooled_temporal_r20: f64,
    pub pooled_nontemporal_r20: f64,
    pub tsm_temporal_r20: f64,
    pub tsm_nontemporal_r20: f64,
    /// Temporal Recall@20 after merging 1..=7 specialists.
    pub sequence_temporal_r20: Vec<f64>,
    pub tsm_breakdown: SpecifierReport,
    pub specialist_breakdowns: Vec<(Specifier, SpecifierReport)>,
    pub convexity_holds: bool,
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let mut cfg = config.clone();
    cfg.corpus.seed = seed;
    cfg.train.seed = seed;
    let prepared = prepare(&cfg)?;
    let models = run_training(&prepared, &cfg)?;
    let k = 20;

    let temporal = prepared.queries_where(Split::Test, Some(true));
    let nontemporal = prepared.queries_where(Split::Test, Some(false));
    let all_test: Vec<&QueryRecord> = temporal.iter().chain(&nontemporal).copied().collect();
    let qrels = Qrels::from_queries(
        &all_test.iter().map(|q| (*q).clone()).collect::<Vec<_>>(),
    )?;
    let owned_queries: Vec<QueryRecord> = all_test.iter().map(|q| (*q).clone()).collect();

    let eval_pair = |params: &EncoderParams| -> Result<(f64, f64)> {
        let index = build_index(params, &prepared.passage_tokens)?;
        let t_run = model_run(params, &index, &prepared.vocab, &temporal, k)?;
        let n_run = model_run(params, &index, &prepared.vocab, &nontemporal, k)?;
        Ok((
            recall_at_k(&t_run, &qrels, k)?,
            recall_at_k(&n_run, &qrels, k)?,
        ))
    };

    let (base_t, base_n) = eval_pair(&models.base)?;
    let (pooled_t, pooled_n) = eval_pair(&models.pooled)?;

    let tsm_index = build_index(&models.tsm, &prepared.passage_tokens)?;
    let tsm_t_run = model_run(&models.tsm, &tsm_index, &prepared.vocab, &temporal, k)?;
    let tsm_n_run = model_run(&models.tsm, &tsm_index, &prepared.vocab, &nontemporal, k)?;
    let tsm_t = recall_at_k(&tsm_t_run, &qrels, k)?;
    let tsm_n = recall_at_k(&tsm_n_run, &qrels, k)?;
    let tsm_breakdown = per_specifier_report(&tsm_t_run, &owned_queries, &qrels, k)?;

    let mut sequence_temporal_r20 = Vec::with_capacity(models.sequence.len());
    for (i, prefix) in models.sequence.iter().enumerate() {
        if i + 1 == models.sequence.len() {
            sequence_temporal_r20.push(tsm_t);
            break;
        }
        let index = build_index(prefix, &prepared.passage_tokens)?;
        let run = model_run(prefix, &index, &prepared.vocab, &temporal, k)?;
        sequence_temporal_r20.push(recall_at_k(&run, &qrels, k)?);
    }

    let mut specialist_breakdowns = Vec::new();
    for (spec, params) in &models.specialists {
        let index = build_index(params, &prepared.passage_tokens)?;
        let run = model_run(params, &index, &prepared.vocab, &temporal, k)?;
        specialist_breakdowns.push((
            *spec,
            per_specifier_report(&run, &owned_queries, &qrels, k)?,
        ));
    }

    Ok(SeedOutcome {
        seed,
        base_temporal_r20: base_t,
        base_nontemporal_r20: base_n,
        pooled_temporal_r20: pooled_t,
        pooled_nontemporal_r20: pooled_n,
        tsm_temporal_r20: tsm_t,
        tsm_nontemporal_r20: tsm_n,
        sequence_temporal_r20,
        tsm_breakdown,
        specialist_breakdowns,
        convexity_holds: models.merge.convexity_holds(),
    })
}

/// Spearman rank correlation of `values` against their positions.
pub fn spearman_against_position(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2);
    let ranks = average_ranks(values);
    let pos: Vec<f64> = (0..n).map(|i| (i + 1) as f64).collect();
    let mean_r: f64 = ranks.iter().sum::<f64>() / n as f64;
    let mean_p: f64 = pos.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var_r = 0.0;
    let mut var_p = 0.0;
    for i in 0..n {
        let dr = ranks[i] - mean_r;
        let dp = pos[i] - mean_p;
        cov += dr * dp;
        var_r += dr * dr;
        var_p += dp * dp;
    }
    if var_r == 0.0 || var_p == 0.0 {
        return 0.0;
    }
    cov / (var_r.sqrt() * var_p.sqrt())
}

/// Fractional ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

// ---- router checkpoint file ----

const ROUTER_MAGIC: &[u8; 4] = b"TMRT";

pub fn save_router(router: &RouterParams, path: &Path) -> std::io::Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(ROUTER_MAGIC);
    out.extend_from_slice(&(router.w1.rows as u64).to_le_bytes());
    out.extend_from_slice(&(router.w1.cols as u64).to_le_bytes());
    for v in router
        .w1
        .data
        .iter()
        .chain(&router.b1)
        .chain(&router.w2.data)
        .chain(&router.b2)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)
}

pub fn load_router(path: &Path) -> std::io::Result<RouterParams> {
    use std::io::{Error, ErrorKind, Read};
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |what: &str| Error::new(ErrorKind::InvalidData, format!("router file: {what}"));
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != ROUTER_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut buf = [0u8; 8];
    file.read_exact(&mut buf)?;
    let hidden = u64::from_le_bytes(buf) as usize;
    file.read_exact(&mut buf)?;
    let dim = u64::from_le_bytes(buf) as usize;
    let mut read_f64s = |count: usize| -> std::io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut b = [0u8; 8];
        for _ in 0..count {
            file.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let mut w1 = Matrix::zeros(hidden, dim);
    w1.data = read_f64s(hidden * dim)?;
    let b1 = read_f64s(hidden)?;
    let mut w2 = Matrix::zeros(2, hidden);
    w2.data = read_f64s(2 * hidden)?;
    let b2 = read_f64s(2)?;
    Ok(RouterParams { w1, b1, w2, b2 })
}
