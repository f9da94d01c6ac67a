//! Corpus indexing, exact top-k dot-product search, and the three
//! retrieval strategies: single model, score-averaged ensemble, and
//! router-dispatched.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::encoder::{encode, EncoderError, EncoderParams, Embedding, Matrix};
use crate::trainlab::RouterParams;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("ensembling requires at least two models")]
    TooFewModels,
    #[error("indexes cover different passage lists (first difference at row {row})")]
    PassageListMismatch { row: usize },
    #[error("failed to encode passage {passage_id}: {source}")]
    Encode {
        passage_id: String,
        source: EncoderError,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("malformed run line {line}: {text}")]
    BadRunLine { line: usize, text: String },
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

/// Immutable exact-search index: one embedding row per passage, in input
/// order, under the recorded model.
#[derive(Debug, Clone)]
pub struct Index {
    pub ids: Vec<String>,
    pub matrix: Matrix,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Temporal,
    NonTemporal,
}

impl Route {
    pub fn tag(self) -> &'static str {
        match self {
            Route::Temporal => "temporal",
            Route::NonTemporal => "non_temporal",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalRun {
    pub results: BTreeMap<String, Vec<ScoredHit>>,
    pub strategy: String,
    pub k: usize,
}

pub fn build_index(params: &EncoderParams, passages: &[(String, Vec<u32>)]) -> Result<Index> {
    if passages.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let d = params.dim();
    let mut matrix = Matrix::zeros(passages.len(), d);
    let mut ids = Vec::with_capacity(passages.len());
    for (row, (id, tokens)) in passages.iter().enumerate() {
        let emb = encode(params, None, tokens).map_err(|source| RetrievalError::Encode {
            passage_id: id.clone(),
            source,
        })?;
        matrix.row_mut(row).copy_from_slice(&emb.0);
        ids.push(id.clone());
    }
    Ok(Index {
        ids,
        matrix,
        model_hash: params.content_hash(),
    })
}

/// Raw dot-product scores of the query against every indexed passage, in
/// row order.
pub fn score_all(index: &Index, q_emb: &Embedding) -> Result<Vec<f64>> {
    if q_emb.dim() != index.matrix.cols {
        return Err(EncoderError::DimMismatch {
            left: q_emb.dim(),
            right: index.matrix.cols,
        }
        .into());
    }
    Ok((0..index.ids.len())
        .map(|r| {
            index
                .matrix
                .row(r)
                .iter()
                .zip(&q_emb.0)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

/// Exact top-k over precomputed scores; ties broken by ascending passage
/// id, ranks consecutive from 1. k > N returns all N hits.
fn rank_scores(index: &Index, scores: &[f64], k: usize) -> Vec<ScoredHit> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| index.ids[a].cmp(&index.ids[b]))
    });
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, row)| ScoredHit {
            passage_id: index.ids[row].clone(),
            score: scores[row],
            rank: i + 1,
        })
        .collect()
}

pub fn search(index: &Index, q_emb: &Embedding, k: usize) -> Result<Vec<ScoredHit>> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let scores = score_all(index, q_emb)?;
    Ok(rank_scores(index, &scores, k))
}

/// Min-max normalize to [0,1] in place; a constant score vector maps to
/// 0.5 everywhere.
fn min_max_normalize(scores: &mut [f64]) {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        scores.iter_mut().for_each(|s| *s = 0.5);
    } else {
        scores.iter_mut().for_each(|s| *s = (*s - min) / (max - min));
    }
}

pub fn ensemble_search(
    members: &[(&EncoderParams, &Index)],
    query_tokens: &[u32],
    k: usize,
) -> Result<Vec<ScoredHit>> {
    if members.len() < 2 {
        return Err(RetrievalError::TooFewModels);
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let first = members[0].1;
    for (_, index) in &members[1..] {
        if index.ids.len() != first.ids.len() {
            return Err(RetrievalError::PassageListMismatch {
                row: first.ids.len().min(index.ids.len()),
            });
        }
        if let Some(row) = (0..first.ids.len()).find(|&r| index.ids[r] != first.ids[r]) {
            return Err(RetrievalError::PassageListMismatch { row });
        }
    }
    let mut averaged = vec![0.0; first.ids.len()];
    for (params, index) in members {
        let q_emb = encode(params, None, query_tokens)?;
        let mut scores = score_all(index, &q_emb)?;
        min_max_normalize(&mut scores);
        for (acc, s) in averaged.iter_mut().zip(&scores) {
            *acc += s;
        }
    }
    let inv = 1.0 / members.len() as f64;
    averaged.iter_mut().for_each(|s| *s *= inv);
    Ok(rank_scores(first, &averaged, k))
}

/// Dispatches the query by the router's class decision: temporal goes to
/// the tuned model, anything else to the vanilla one. The router sees the
/// vanilla model's query embedding.
pub fn routed_search(
    router: &RouterParams,
    vanilla: (&EncoderParams, &Index),
    tuned: (&EncoderParams, &Index),
    query_tokens: &[u32],
    k: usize,
) -> Result<(Vec<ScoredHit>, Route)> {
    let probe = encode(vanilla.0, None, query_tokens)?;
    let route = if router.is_temporal(&probe.0) {
        Route::Temporal
    } else {
        Route::NonTemporal
    };
    let (params, index) = match route {
        Route::Temporal => tuned,
        Route::NonTemporal => vanilla,
    };
    let q_emb = encode(params, None, query_tokens)?;
    Ok((search(index, &q_emb, k)?, route))
}

const INDEX_MAGIC: &[u8; 4] = b"TMIX";

/// Binary index file: magic, N, d, model hash, ids, then row-major f64
/// little-endian embeddings.
pub fn save_index(index: &Index, path: &std::path::Path) -> std::io::Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&(index.ids.len() as u64).to_le_bytes());
    out.extend_from_slice(&(index.matrix.cols as u64).to_le_bytes());
    out.extend_from_slice(&(index.model_hash.len() as u64).to_le_bytes());
    out.extend_from_slice(index.model_hash.as_bytes());
    for id in &index.ids {
        out.extend_from_slice(&(id.len() as u64).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in &index.matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)
}

pub fn load_index(path: &std::path::Path) -> std::io::Result<Index> {
    use std::io::{Error, ErrorKind, Read};
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |what: &str| Error::new(ErrorKind::InvalidData, format!("index file: {what}"));
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |f: &mut dyn Read| -> std::io::Result<u64> {
        f.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let n = read_u64(&mut file)? as usize;
    let d = read_u64(&mut file)? as usize;
    let hash_len = read_u64(&mut file)? as usize;
    let mut hash = vec![0u8; hash_len];
    file.read_exact(&mut hash)?;
    let model_hash = String::from_utf8(hash).map_err(|_| bad("hash not utf-8"))?;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u64(&mut file)? as usize;
        let mut id = vec![0u8; len];
        file.read_exact(&mut id)?;
        ids.push(String::from_utf8(id).map_err(|_| bad("id not utf-8"))?);
    }
    let mut matrix = Matrix::zeros(n, d);
    let mut f64buf = [0u8; 8];
    for v in matrix.data.iter_mut() {
        file.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    Ok(Index { ids, matrix, model_hash })
}

/// TREC-style run lines: `query_id Q0 passage_id rank score strategy_tag`.
pub fn run_to_trec(run: &RetrievalRun) -> String {
    let mut out = String::new();
    for (query_id, hits) in &run.results {
        for hit in hits {
            out.push_str(&format!(
                "{query_id} Q0 {} {} {:.6} {}\n",
                hit.passage_id, hit.rank, hit.score, run.strategy
            ));
        }
    }
    out
}

pub fn run_from_trec(text: &str) -> Result<RetrievalRun> {
    let mut results: BTreeMap<String, Vec<ScoredHit>> = BTreeMap::new();
    let mut strategy = String::from("single");
    let mut k = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || RetrievalError::BadRunLine {
            line: i + 1,
            text: line.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 || fields[1] != "Q0" {
            return Err(bad());
        }
        let rank: usize = fields[3].parse().map_err(|_| bad())?;
        let score: f64 = fields[4].parse().map_err(|_| bad())?;
        strategy = fields[5].to_string();
        k = k.max(rank);
        results.entry(fields[0].to_string()).or_default().push(ScoredHit {
            passage_id: fields[2].to_string(),
            score,
            rank,
        });
    }
    for hits in results.values_mut() {
        hits.sort_by_key(|h| h.rank);
    }
    Ok(RetrievalRun { results, strategy, k })
}
