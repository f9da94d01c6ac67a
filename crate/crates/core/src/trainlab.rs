//! Contrastive training: InfoNCE with deterministic in-batch negatives,
//! hand-derived analytic gradients, AdamW with a linear learning-rate
//! schedule decaying to zero, best-checkpoint selection by dev top-1
//! accuracy, LoRA and regularized variants, and the temporal/non-temporal
//! query router.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{
    mean_pool, project, EncoderError, EncoderParams, LoraAdapter, Matrix,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("batch of {batch} examples cannot supply {negatives} in-batch negatives")]
    BatchTooSmall { batch: usize, negatives: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite embedding input")]
    NonFiniteEmbedding,
    #[error("router needs both a temporal and a non-temporal class")]
    SingleClass,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// A query paired with one of its gold passages.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub query_tokens: Vec<u32>,
    pub positive_tokens: Vec<u32>,
    pub query_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Full,
    Lora,
    FullRegularized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub negatives: usize,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub mode: TrainMode,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 32,
            temperature: 1.0,
            negatives: 5,
            weight_decay: 0.01,
            dropout_rate: 0.1,
            seed: 0,
            eval_every: 50,
            mode: TrainMode::Full,
            lora_rank: 4,
            lora_alpha: 8.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(TrainError::InvalidConfig("temperature must be > 0".into()));
        }
        if self.negatives < 1 {
            return Err(TrainError::InvalidConfig("negatives must be >= 1".into()));
        }
        if self.batch_size <= self.negatives {
            return Err(TrainError::InvalidConfig(
                "batch_size must exceed the negative count".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// InfoNCE over one positive and `negs` similarities, with max-subtraction
/// so large margins cannot overflow.
pub fn info_nce_loss(
    q: &crate::encoder::Embedding,
    pos: &crate::encoder::Embedding,
    negs: &[crate::encoder::Embedding],
    temperature: f64,
) -> Result<f64> {
    if negs.is_empty() {
        return Err(TrainError::InvalidConfig("at least one negative required".into()));
    }
    if temperature <= 0.0 {
        return Err(TrainError::InvalidConfig("temperature must be > 0".into()));
    }
    for e in std::iter::once(q).chain(std::iter::once(pos)).chain(negs) {
        if !e.0.iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFiniteEmbedding);
        }
    }
    let pos_sim = crate::encoder::similarity(q, pos)?;
    let mut sims = vec![pos_sim];
    for n in negs {
        sims.push(crate::encoder::similarity(q, n)?);
    }
    Ok(info_nce_from_sims(&sims, temperature))
}

/// Loss from raw similarities; index 0 is the positive.
pub fn info_nce_from_sims(sims: &[f64], temperature: f64) -> f64 {
    let z: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    log_sum - z[0]
}

/// Gradients of the mean batch loss, same shapes as the trainable tensors.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub embed: Matrix,
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
    pub lora_a: Option<Matrix>,
    pub lora_b: Option<Matrix>,
}

impl GradientSet {
    fn zeros(params: &EncoderParams, adapter: Option<&LoraAdapter>) -> GradientSet {
        GradientSet {
            embed: Matrix::zeros(params.embed.rows, params.embed.cols),
            proj_w: Matrix::zeros(params.proj_w.rows, params.proj_w.cols),
            proj_b: vec![0.0; params.proj_b.len()],
            lora_a: adapter.map(|a| Matrix::zeros(a.a.rows, a.a.cols)),
            lora_b: adapter.map(|a| Matrix::zeros(a.b.rows, a.b.cols)),
        }
    }

    pub fn norm(&self) -> f64 {
        let mut s: f64 = self
            .embed
            .data
            .iter()
            .chain(&self.proj_w.data)
            .chain(&self.proj_b)
            .map(|v| v * v)
            .sum();
        if let (Some(a), Some(b)) = (&self.lora_a, &self.lora_b) {
            s += a.data.iter().chain(&b.data).map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }
}

/// Inverted-dropout masks for the pooled representations, drawn from a
/// dedicated per-step stream of the training seed.
fn dropout_masks(
    config: &TrainConfig,
    step: usize,
    count: usize,
    dim: usize,
) -> Option<Vec<Vec<f64>>> {
    if config.mode != TrainMode::FullRegularized || config.dropout_rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(step as u64 + 1);
    let keep = 1.0 - config.dropout_rate;
    Some(
        (0..count)
            .map(|_| {
                (0..dim)
                    .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect(),
    )
}

struct ExampleCache {
    pooled: Vec<f64>, // post-dropout pooled input to the projection
    mask: Option<Vec<f64>>,
    emb: Vec<f64>,
    tokens: Vec<u32>,
}

fn forward_one(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    tokens: &[u32],
    mask: Option<&[f64]>,
) -> Result<ExampleCache> {
    let mut pooled = mean_pool(params, tokens)?;
    if let Some(m) = mask {
        for (p, f) in pooled.iter_mut().zip(m) {
            *p *= f;
        }
    }
    let emb = project(params, adapter, &pooled)?;
    Ok(ExampleCache { pooled, mask: mask.map(|m| m.to_vec()), emb, tokens: tokens.to_vec() })
}

/// The candidate passages of query `i` in a batch of size `b`: its own
/// positive first, then the positives of the next `n` members cyclically.
fn candidate_indices(i: usize, b: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..=n).map(move |j| (i + j) % b)
}

fn batch_caches(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    batch: &[TrainExample],
    config: &TrainConfig,
    step: usize,
) -> Result<(Vec<ExampleCache>, Vec<ExampleCache>)> {
    if batch.len() <= config.negatives {
        return Err(TrainError::BatchTooSmall { batch: batch.len(), negatives: config.negatives });
    }
    let masks = dropout_masks(config, step, 2 * batch.len(), params.dim());
    let mask_for = |idx: usize| masks.as_ref().map(|m| m[idx].as_slice());
    let queries = batch
        .iter()
        .enumerate()
        .map(|(i, ex)| forward_one(params, adapter, &ex.query_tokens, mask_for(i)))
        .collect::<Result<Vec<_>>>()?;
    let passages = batch
        .iter()
        .enumerate()
        .map(|(i, ex)| forward_one(params, adapter, &ex.positive_tokens, mask_for(batch.len() + i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((queries, passages))
}

/// Mean InfoNCE loss of a batch under the deterministic in-batch negative
/// assignment. Shares every code path with [`loss_gradients`], so it is the
/// function finite differences probe.
pub fn batch_loss(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    batch: &[TrainExample],
    config: &TrainConfig,
    step: usize,
) -> Result<f64> {
    let (queries, passages) = batch_caches(params, adapter, batch, config, step)?;
    let b = batch.len();
    let mut total = 0.0;
    for i in 0..b {
        let sims: Vec<f64> = candidate_indices(i, b, config.negatives)
            .map(|c| dot(&queries[i].emb, &passages[c].emb))
            .collect();
        total += info_nce_from_sims(&sims, config.temperature);
    }
    Ok(total / b as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Analytic gradients of the mean batch loss. In `Lora` mode only the
/// adapter tensors receive gradient; otherwise the embedding rows touched by
/// the batch, the projection, and the bias do.
pub fn loss_gradients(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    batch: &[TrainExample],
    config: &TrainConfig,
    step: usize,
) -> Result<(f64, GradientSet)> {
    let (queries, passages) = batch_caches(params, adapter, batch, config, step)?;
    let b = batch.len();
    let n = config.negatives;
    let tau = config.temperature;
    let d = params.dim();

    let mut total = 0.0;
    let mut d_query_emb = vec![vec![0.0; d]; b];
    let mut d_passage_emb = vec![vec![0.0; d]; b];
    for i in 0..b {
        let cands: Vec<usize> = candidate_indices(i, b, n).collect();
        let sims: Vec<f64> = cands.iter().map(|&c| dot(&queries[i].emb, &passages[c].emb)).collect();
        total += info_nce_from_sims(&sims, tau);
        // softmax over candidates
        let z: Vec<f64> = sims.iter().map(|s| s / tau).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, &c) in cands.iter().enumerate() {
            let soft = exps[j] / sum;
            let gs = (soft - if j == 0 { 1.0 } else { 0.0 }) / (tau * b as f64);
            for k in 0..d {
                d_query_emb[i][k] += gs * passages[c].emb[k];
                d_passage_emb[c][k] += gs * queries[i].emb[k];
            }
        }
    }

    let mut grads = GradientSet::zeros(params, if config.mode == TrainMode::Lora { adapter } else { None });
    let train_base = config.mode != TrainMode::Lora;
    for (cache, g_emb) in queries.iter().chain(&passages).zip(d_query_emb.iter().chain(&d_passage_emb)) {
        backprop_encoder(params, adapter, cache, g_emb, train_base, &mut grads);
    }
    Ok((total / b as f64, grads))
}

/// Pushes the embedding-space gradient of one encoded input down through the
/// projection (and adapter) into the parameter gradients.
fn backprop_encoder(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    cache: &ExampleCache,
    g_emb: &[f64],
    train_base: bool,
    grads: &mut GradientSet,
) {
    let d = params.dim();
    if train_base {
        for r in 0..d {
            let row = grads.proj_w.row_mut(r);
            for c in 0..d {
                row[c] += g_emb[r] * cache.pooled[c];
            }
            grads.proj_b[r] += g_emb[r];
        }
    } else if let Some(ad) = adapter {
        // effective delta is (alpha/r) B A; chain through both factors
        let s = ad.scale();
        let ax = ad.a.matvec(&cache.pooled);
        let btg = ad.b.matvec_t(g_emb);
        let ga = grads.lora_a.as_mut().unwrap();
        let gb = grads.lora_b.as_mut().unwrap();
        for k in 0..ad.rank {
            for c in 0..d {
                ga.set(k, c, ga.get(k, c) + s * btg[k] * cache.pooled[c]);
            }
            for r in 0..d {
                gb.set(r, k, gb.get(r, k) + s * g_emb[r] * ax[k]);
            }
        }
    }

    // d pooled = W_eff^T g, through the dropout mask back to the mean pool
    let mut g_pooled = params.proj_w.matvec_t(g_emb);
    if let Some(ad) = adapter {
        let btg = ad.b.matvec_t(g_emb);
        let atbtg = ad.a.matvec_t(&btg);
        let s = ad.scale();
        for (gp, v) in g_pooled.iter_mut().zip(&atbtg) {
            *gp += s * v;
        }
    }
    if let Some(mask) = &cache.mask {
        // d(raw pooled) = mask .* d(masked pooled)
        for (g, f) in g_pooled.iter_mut().zip(mask) {
            *g *= f;
        }
    }
    if train_base {
        let inv = 1.0 / cache.tokens.len() as f64;
        for &id in &cache.tokens {
            let row = grads.embed.row_mut(id as usize);
            for c in 0..d {
                row[c] += g_pooled[c] * inv;
            }
        }
    }
}

/// Row of the training trace CSV: step, loss, and the dev top-1 accuracy
/// when an evaluation happened at that step.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub dev_top1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DevQuery {
    pub tokens: Vec<u32>,
    pub gold: BTreeSet<String>,
}

/// Everything a training run consumes: examples, the dev queries used for
/// best-checkpoint selection, and the tokenized corpus they retrieve from.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub examples: Vec<TrainExample>,
    pub dev: Vec<DevQuery>,
    pub passages: Vec<(String, Vec<u32>)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub adapter: Option<LoraAdapter>,
    pub trace: Vec<TraceRow>,
    pub best_dev_top1: f64,
}

/// Fraction of dev queries whose top-1 passage (ties broken by ascending
/// passage id) is gold.
pub fn top1_accuracy(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    dev: &[DevQuery],
    passages: &[(String, Vec<u32>)],
) -> Result<f64> {
    if dev.is_empty() || passages.is_empty() {
        return Ok(0.0);
    }
    let corpus: Vec<(&String, crate::encoder::Embedding)> = passages
        .iter()
        .map(|(id, toks)| Ok((id, crate::encoder::encode(params, adapter, toks)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    for q in dev {
        let q_emb = crate::encoder::encode(params, adapter, &q.tokens)?;
        let mut best: Option<(&String, f64)> = None;
        for (id, emb) in &corpus {
            let s = dot(&q_emb.0, &emb.0);
            let better = match &best {
                None => true,
                Some((bid, bs)) => s > *bs || (s == *bs && id.as_str() < bid.as_str()),
            };
            if better {
                best = Some((id, s));
            }
        }
        if let Some((id, _)) = best {
            if q.gold.contains(id.as_str()) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / dev.len() as f64)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> AdamState {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One decoupled-weight-decay Adam step.
    fn apply(&mut self, param: &mut [f64], grad: &[f64], t: usize, lr: f64, weight_decay: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..param.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            param[i] -= lr * (m_hat / (v_hat.sqrt() + EPS) + weight_decay * param[i]);
        }
    }
}

/// Fine-tunes the encoder on `data`, returning the checkpoint with the best
/// dev top-1 accuracy among evaluations every `eval_every` steps (and the
/// final step). Deterministic per seed: fixed shuffle order, fixed
/// accumulation order.
pub fn train(base: &EncoderParams, data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.examples.is_empty() {
        return Err(TrainError::InvalidConfig("training data is empty".into()));
    }
    let mut params = base.clone();
    let mut adapter = match config.mode {
        TrainMode::Lora => Some(LoraAdapter::init(
            base.dim(),
            config.lora_rank,
            config.lora_alpha,
            config.seed ^ 0x6c6f_7261,
        )),
        _ => None,
    };
    let weight_decay = match config.mode {
        TrainMode::FullRegularized => config.weight_decay,
        _ => 0.0,
    };

    let bs = config.batch_size;
    let full_batches = data.examples.len() / bs;
    let tail = data.examples.len() % bs;
    let batches_per_epoch = full_batches + usize::from(tail > config.negatives);
    let total_steps = (config.epochs * batches_per_epoch).max(1);

    let mut st_embed = AdamState::new(params.embed.data.len());
    let mut st_w = AdamState::new(params.proj_w.data.len());
    let mut st_b = AdamState::new(params.proj_b.len());
    let mut st_la = adapter.as_ref().map(|a| AdamState::new(a.a.data.len()));
    let mut st_lb = adapter.as_ref().map(|a| AdamState::new(a.b.data.len()));

    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step = 0usize;
    let mut trace = Vec::new();
    let mut best: Option<(f64, EncoderParams, Option<LoraAdapter>)> = None;

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            if chunk.len() <= config.negatives {
                continue;
            }
            let batch: Vec<TrainExample> =
                chunk.iter().map(|&i| data.examples[i].clone()).collect();
            let (loss, grads) =
                loss_gradients(&params, adapter.as_ref(), &batch, config, step)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            step += 1;
            // linear schedule to zero over total steps, no warmup
            let lr = config.learning_rate * (1.0 - (step - 1) as f64 / total_steps as f64);
            match config.mode {
                TrainMode::Lora => {
                    let ad = adapter.as_mut().unwrap();
                    st_la.as_mut().unwrap().apply(
                        &mut ad.a.data,
                        &grads.lora_a.as_ref().unwrap().data,
                        step,
                        lr,
                        0.0,
                    );
                    st_lb.as_mut().unwrap().apply(
                        &mut ad.b.data,
                        &grads.lora_b.as_ref().unwrap().data,
                        step,
                        lr,
                        0.0,
                    );
                }
                _ => {
                    st_embed.apply(&mut params.embed.data, &grads.embed.data, step, lr, weight_decay);
                    st_w.apply(&mut params.proj_w.data, &grads.proj_w.data, step, lr, weight_decay);
                    st_b.apply(&mut params.proj_b, &grads.proj_b, step, lr, weight_decay);
                }
            }
            params.check_finite()?;

            let at_eval = config.eval_every > 0 && step % config.eval_every == 0;
            let last = step == total_steps;
            let dev_top1 = if (at_eval || last) && !data.dev.is_empty() {
                let acc = top1_accuracy(&params, adapter.as_ref(), &data.dev, &data.passages)?;
                if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                    best = Some((acc, params.clone(), adapter.clone()));
                }
                Some(acc)
            } else {
                None
            };
            trace.push(TraceRow { step, loss, dev_top1 });
        }
    }

    let (best_dev_top1, params, adapter) = match best {
        Some((acc, p, a)) => (acc, p, a),
        None => (0.0, params, adapter),
    };
    Ok(TrainOutcome { params, adapter, trace, best_dev_top1 })
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,loss,dev_top1\n");
    for row in trace {
        let dev = row.dev_top1.map_or(String::new(), |v| format!("{v}"));
        out.push_str(&format!("{},{},{}\n", row.step, row.loss, dev));
    }
    out
}

// ---- Router ----

/// Two-layer feedforward binary classifier over frozen query embeddings:
/// tanh hidden layer, softmax output, cross-entropy loss. Class 1 means
/// temporal.
#[derive(Debug, Clone)]
pub struct RouterParams {
    pub w1: Matrix, // h x d
    pub b1: Vec<f64>,
    pub w2: Matrix, // 2 x h
    pub b2: Vec<f64>,
}

impl RouterParams {
    pub fn init(dim: usize, hidden: usize, seed: u64) -> RouterParams {
        assert!(hidden >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w1 = Matrix::zeros(hidden, dim);
        let mut w2 = Matrix::zeros(2, hidden);
        let scale1 = (1.0 / dim as f64).sqrt();
        let scale2 = (1.0 / hidden as f64).sqrt();
        for v in w1.data.iter_mut() {
            *v = rng.gen_range(-scale1..scale1);
        }
        for v in w2.data.iter_mut() {
            *v = rng.gen_range(-scale2..scale2);
        }
        RouterParams { w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; 2] }
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows
    }

    /// Class logits for one embedding.
    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let mut h = self.w1.matvec(x);
        for (hi, bi) in h.iter_mut().zip(&self.b1) {
            *hi = (*hi + bi).tanh();
        }
        let out = self.w2.matvec(&h);
        [out[0] + self.b2[0], out[1] + self.b2[1]]
    }

    /// True when the embedding is classified as temporal.
    pub fn is_temporal(&self, x: &[f64]) -> bool {
        let l = self.logits(x);
        l[1] > l[0]
    }
}

#[derive(Debug, Clone)]
pub struct RouterGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Mean cross-entropy of the router over labeled embeddings (label 1 =
/// temporal). The finite-difference oracle probes this function.
pub fn router_loss(router: &RouterParams, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let l = router.logits(x);
        let m = l[0].max(l[1]);
        let log_sum = ((l[0] - m).exp() + (l[1] - m).exp()).ln() + m;
        total += log_sum - l[y];
    }
    total / xs.len() as f64
}

/// Analytic gradients of [`router_loss`].
pub fn router_loss_grads(
    router: &RouterParams,
    xs: &[Vec<f64>],
    ys: &[usize],
) -> (f64, RouterGrads) {
    let h = router.hidden();
    let d = router.w1.cols;
    let mut grads = RouterGrads {
        w1: Matrix::zeros(h, d),
        b1: vec![0.0; h],
        w2: Matrix::zeros(2, h),
        b2: vec![0.0; 2],
    };
    let inv = 1.0 / xs.len() as f64;
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let mut hidden = router.w1.matvec(x);
        for (hi, bi) in hidden.iter_mut().zip(&router.b1) {
            *hi = (*hi + bi).tanh();
        }
        let mut logits = router.w2.matvec(&hidden);
        logits[0] += router.b2[0];
        logits[1] += router.b2[1];
        let m = logits[0].max(logits[1]);
        let exps = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let sum = exps[0] + exps[1];
        total += (sum.ln() + m - logits[y]) * inv;
        let g_logits = [
            (exps[0] / sum - if y == 0 { 1.0 } else { 0.0 }) * inv,
            (exps[1] / sum - if y == 1 { 1.0 } else { 0.0 }) * inv,
        ];
        for r in 0..2 {
            grads.b2[r] += g_logits[r];
            for c in 0..h {
                grads.w2.set(r, c, grads.w2.get(r, c) + g_logits[r] * hidden[c]);
            }
        }
        let g_hidden = router.w2.matvec_t(&g_logits);
        for r in 0..h {
            let g_pre = g_hidden[r] * (1.0 - hidden[r] * hidden[r]);
            grads.b1[r] += g_pre;
            for c in 0..d {
                grads.w1.set(r, c, grads.w1.get(r, c) + g_pre * x[c]);
            }
        }
    }
    (total, grads)
}

#[derive(Debug, Clone)]
pub struct RouterConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig { hidden: 16, learning_rate: 1e-2, epochs: 20, batch_size: 32, seed: 0 }
    }
}

/// Trains the router on frozen vanilla-encoder query embeddings. Every
/// fifth example of each class is held out as dev; the best-dev-accuracy
/// weights are returned.
pub fn train_router(
    temporal: &[Vec<u32>],
    nontemporal: &[Vec<u32>],
    vanilla: &EncoderParams,
    config: &RouterConfig,
) -> Result<RouterParams> {
    if temporal.is_empty() || nontemporal.is_empty() {
        return Err(TrainError::SingleClass);
    }
    let embed = |tokens: &Vec<u32>| -> Result<Vec<f64>> {
        Ok(crate::encoder::encode(vanilla, None, tokens)?.0)
    };
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut dev_x = Vec::new();
    let mut dev_y = Vec::new();
    for (class, queries) in [(1usize, temporal), (0usize, nontemporal)] {
        for (i, q) in queries.iter().enumerate() {
            let x = embed(q)?;
            if i % 5 == 0 {
                dev_x.push(x);
                dev_y.push(class);
            } else {
                train_x.push(x);
                train_y.push(class);
            }
        }
    }
    if train_x.is_empty() || dev_x.is_empty() {
        return Err(TrainError::InvalidConfig("not enough router examples".into()));
    }

    let dim = vanilla.dim();
    let mut router = RouterParams::init(dim, config.hidden, config.seed);
    let mut st_w1 = AdamState::new(router.w1.data.len());
    let mut st_b1 = AdamState::new(router.b1.len());
    let mut st_w2 = AdamState::new(router.w2.data.len());
    let mut st_b2 = AdamState::new(router.b2.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut best: Option<(f64, RouterParams)> = None;
    let mut t = 0usize;

    let dev_accuracy = |router: &RouterParams| {
        let hits = dev_x
            .iter()
            .zip(&dev_y)
            .filter(|(x, &y)| usize::from(router.is_temporal(x)) == y)
            .count();
        hits as f64 / dev_x.len() as f64
    };

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = router_loss_grads(&router, &xs, &ys);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: t });
            }
            t += 1;
            let lr = config.learning_rate;
            st_w1.apply(&mut router.w1.data, &grads.w1.data, t, lr, 0.0);
            st_b1.apply(&mut router.b1, &grads.b1, t, lr, 0.0);
            st_w2.apply(&mut router.w2.data, &grads.w2.data, t, lr, 0.0);
            st_b2.apply(&mut router.b2, &grads.b2, t, lr, 0.0);
        }
        let acc = dev_accuracy(&router);
        if best.as_ref().map_or(true, |(b, _)| acc > *b) {
            best = Some((acc, router.clone()));
        }
    }
    Ok(best.map(|(_, r)| r).unwrap_or(router))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Embedding;

    fn toy_params(vocab: usize, dim: usize, seed: u64) -> EncoderParams {
        EncoderParams::init(vocab, dim, 0.4, seed, [0u8; 32])
    }

    fn toy_batch(vocab: u32, count: usize, seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let len_q = rng.gen_range(2..6);
                let len_p = rng.gen_range(3..8);
                TrainExample {
                    query_tokens: (0..len_q).map(|_| rng.gen_range(1..vocab)).collect(),
                    positive_tokens: (0..len_p).map(|_| rng.gen_range(1..vocab)).collect(),
                    query_id: format!("q{i}"),
                }
            })
            .collect()
    }

    #[test]
    fn uniform_similarities_give_ln_n_plus_one() {
        let q = Embedding(vec![0.0, 0.0]);
        let pos = Embedding(vec![1.0, 0.0]);
        let negs = vec![Embedding(vec![0.5, 0.5]); 5];
        // all similarities are 0, so the softmax is uniform over 6 outcomes
        let loss = info_nce_loss(&q, &pos, &negs, 1.0).unwrap();
        assert!((loss - 6.0_f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn huge_positive_margin_drives_loss_to_zero() {
        let sims = [50.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let loss = info_nce_from_sims(&sims, 1.0);
        assert!(loss >= 0.0);
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn matches_direct_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = 4;
            let q = Embedding((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let pos = Embedding((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let negs: Vec<Embedding> = (0..5)
                .map(|_| Embedding((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()))
                .collect();
            let tau = rng.gen_range(0.2..3.0);
            let loss = info_nce_loss(&q, &pos, &negs, tau).unwrap();
            // independent direct evaluation, no max-subtraction
            let sim = |a: &Embedding, b: &Embedding| -> f64 {
                a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum()
            };
            let num = (sim(&q, &pos) / tau).exp();
            let den: f64 = num + negs.iter().map(|n| (sim(&q, n) / tau).exp()).sum::<f64>();
            let oracle = -(num / den).ln();
            let rel = (loss - oracle).abs() / oracle.abs().max(1e-12);
            assert!(rel < 1e-12, "loss {loss} oracle {oracle}");
        }
    }

    #[test]
    fn temperature_scaling_identity() {
        let sims = [1.3, -0.2, 0.8, 0.05];
        let c = 2.5;
        let tau = 0.7;
        let scaled_tau = info_nce_from_sims(&sims, c * tau);
        let scaled_sims: Vec<f64> = sims.iter().map(|s| s / c).collect();
        assert_eq!(scaled_tau, info_nce_from_sims(&scaled_sims, tau));
    }

    #[test]
    fn nonfinite_embedding_is_an_error() {
        let q = Embedding(vec![f64::NAN, 0.0]);
        let pos = Embedding(vec![1.0, 0.0]);
        let negs = vec![Embedding(vec![0.0, 1.0])];
        assert!(matches!(
            info_nce_loss(&q, &pos, &negs, 1.0),
            Err(TrainError::NonFiniteEmbedding)
        ));
    }

    /// Central finite differences over randomly chosen coordinates of every
    /// trainable tensor; asserts relative error < 1e-4.
    fn fd_check(
        params: &EncoderParams,
        adapter: Option<&LoraAdapter>,
        batch: &[TrainExample],
        config: &TrainConfig,
        coords: usize,
        seed: u64,
    ) {
        let h = 1e-6;
        let step = 3; // fixes the dropout mask in regularized mode
        let (_, grads) = loss_gradients(params, adapter, batch, config, step).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: Vec<(&str, usize)> = if config.mode == TrainMode::Lora {
            let ad = adapter.unwrap();
            vec![("lora_a", ad.a.data.len()), ("lora_b", ad.b.data.len())]
        } else {
            vec![
                ("embed", params.embed.data.len()),
                ("proj_w", params.proj_w.data.len()),
                ("proj_b", params.proj_b.len()),
            ]
        };
        for _ in 0..coords {
            let (name, len) = tensors[rng.gen_range(0..tensors.len())];
            let idx = rng.gen_range(0..len);
            let eval = |delta: f64| -> f64 {
                let mut p = params.clone();
                let mut a = adapter.cloned();
                let slot = match name {
                    "lora_a" => &mut a.as_mut().unwrap().a.data[idx],
                    "lora_b" => &mut a.as_mut().unwrap().b.data[idx],
                    _ => &mut p.tensor_mut(name).unwrap()[idx],
                };
                *slot += delta;
                batch_loss(&p, a.as_ref(), batch, config, step).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = match name {
                "embed" => grads.embed.data[idx],
                "proj_w" => grads.proj_w.data[idx],
                "proj_b" => grads.proj_b[idx],
                "lora_a" => grads.lora_a.as_ref().unwrap().data[idx],
                "lora_b" => grads.lora_b.as_ref().unwrap().data[idx],
                _ => unreachable!(),
            };
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "{name}[{idx}]: analytic {analytic} fd {fd} rel {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_full_mode() {
        let params = toy_params(12, 4, 1);
        let batch = toy_batch(12, 7, 2);
        let config = TrainConfig { negatives: 2, ..TrainConfig::default() };
        fd_check(&params, None, &batch, &config, 20, 4);
    }

    #[test]
    fn gradients_match_finite_differences_lora_mode() {
        let params = toy_params(12, 4, 5);
        let mut adapter = LoraAdapter::init(4, 2, 8.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for v in adapter.b.data.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        let batch = toy_batch(12, 6, 8);
        let config = TrainConfig { negatives: 2, mode: TrainMode::Lora, ..TrainConfig::default() };
        fd_check(&params, Some(&adapter), &batch, &config, 20, 9);
    }

    #[test]
    fn gradients_match_finite_differences_regularized_mode() {
        let params = toy_params(12, 4, 10);
        let batch = toy_batch(12, 6, 11);
        let config = TrainConfig {
            negatives: 2,
            mode: TrainMode::FullRegularized,
            ..TrainConfig::default()
        };
        fd_check(&params, None, &batch, &config, 20, 12);
    }

    #[test]
    fn flat_region_has_vanishing_gradient() {
        // orthogonal one-hot examples with a huge positive margin
        let d = 4;
        let mut params = EncoderParams {
            embed: Matrix::zeros(d, d),
            proj_w: Matrix::zeros(d, d),
            proj_b: vec![0.0; d],
            vocab_hash: [0u8; 32],
        };
        for i in 0..d {
            params.embed.set(i, i, 8.0);
            params.proj_w.set(i, i, 1.0);
        }
        let batch: Vec<TrainExample> = (0..d as u32)
            .map(|i| TrainExample {
                query_tokens: vec![i],
                positive_tokens: vec![i],
                query_id: format!("q{i}"),
            })
            .collect();
        let config = TrainConfig { negatives: 2, ..TrainConfig::default() };
        let (loss, grads) = loss_gradients(&params, None, &batch, &config, 0).unwrap();
        assert!(loss < 1e-20);
        assert!(grads.norm() < 1e-8, "norm {}", grads.norm());
    }

    #[test]
    fn whole_batch_duplication_preserves_mean_gradient() {
        // with cyclic negatives, duplicating the batch keeps every
        // example's candidate set, so the mean gradient is unchanged and
        // the summed gradient doubles
        let params = toy_params(10, 3, 20);
        let batch = toy_batch(10, 3, 21);
        let doubled: Vec<TrainExample> = batch.iter().chain(&batch).cloned().collect();
        let config = TrainConfig { negatives: 2, batch_size: 7, ..TrainConfig::default() };
        let (l1, g1) = loss_gradients(&params, None, &batch, &config, 0).unwrap();
        let (l2, g2) = loss_gradients(&params, None, &doubled, &config, 0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.embed.data.iter().zip(&g2.embed.data) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g1.proj_w.data.iter().zip(&g2.proj_w.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_negatives_is_an_error() {
        let params = toy_params(10, 3, 1);
        let batch = toy_batch(10, 3, 2);
        let config = TrainConfig { negatives: 3, batch_size: 8, ..TrainConfig::default() };
        assert!(matches!(
            loss_gradients(&params, None, &batch, &config, 0),
            Err(TrainError::BatchTooSmall { batch: 3, negatives: 3 })
        ));
    }

    fn toy_data(vocab: u32, count: usize, seed: u64) -> TrainData {
        let examples = toy_batch(vocab, count, seed);
        let passages: Vec<(String, Vec<u32>)> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| (format!("p{i:03}"), ex.positive_tokens.clone()))
            .collect();
        let dev: Vec<DevQuery> = examples
            .iter()
            .enumerate()
            .take(3)
            .map(|(i, ex)| DevQuery {
                tokens: ex.query_tokens.clone(),
                gold: std::iter::once(format!("p{i:03}")).collect(),
            })
            .collect();
        TrainData { examples, dev, passages }
    }

    #[test]
    fn zero_learning_rate_returns_base_exactly() {
        let base = toy_params(10, 3, 30);
        let data = toy_data(10, 8, 31);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 4,
            negatives: 2,
            ..TrainConfig::default()
        };
        let out = train(&base, &data, &config).unwrap();
        assert_eq!(out.params, base);
    }

    #[test]
    fn training_decreases_loss_on_toy_set() {
        let base = toy_params(10, 4, 40);
        let data = toy_data(10, 7, 41);
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 3,
            negatives: 2,
            eval_every: 4,
            ..TrainConfig::default()
        };
        let out = train(&base, &data, &config).unwrap();
        let first = out.trace.first().unwrap().loss;
        let last = out.trace.last().unwrap().loss;
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn lora_mode_freezes_base_tensors() {
        let base = toy_params(10, 4, 50);
        let data = toy_data(10, 8, 51);
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 2,
            batch_size: 4,
            negatives: 2,
            mode: TrainMode::Lora,
            lora_rank: 2,
            ..TrainConfig::default()
        };
        let out = train(&base, &data, &config).unwrap();
        assert_eq!(out.params, base, "base tensors must stay bitwise identical");
        let adapter = out.adapter.expect("lora training returns an adapter");
        assert!(adapter.b.data.iter().any(|&v| v != 0.0), "adapter should have moved");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let base = toy_params(10, 4, 60);
        let data = toy_data(10, 9, 61);
        let config = TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 4,
            negatives: 2,
            seed: 77,
            mode: TrainMode::FullRegularized,
            ..TrainConfig::default()
        };
        let a = train(&base, &data, &config).unwrap();
        let b = train(&base, &data, &config).unwrap();
        assert_eq!(a.params.content_hash(), b.params.content_hash());
    }

    #[test]
    fn nonfinite_loss_aborts_with_step_index() {
        let mut base = toy_params(10, 3, 70);
        base.embed.data[5] = 1e308;
        let data = toy_data(10, 8, 71);
        let config = TrainConfig { batch_size: 4, negatives: 2, ..TrainConfig::default() };
        match train(&base, &data, &config) {
            Err(TrainError::NonFiniteLoss { .. }) | Err(TrainError::Encoder(_)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    // ---- router ----

    fn separable_vanilla() -> EncoderParams {
        let mut p = EncoderParams {
            embed: Matrix::zeros(4, 4),
            proj_w: Matrix::zeros(4, 4),
            proj_b: vec![0.0; 4],
            vocab_hash: [0u8; 32],
        };
        for i in 0..4 {
            p.proj_w.set(i, i, 1.0);
        }
        p.embed.set(2, 0, 2.0);
        p.embed.set(3, 0, -2.0);
        p
    }

    #[test]
    fn router_reaches_full_accuracy_on_separable_classes() {
        let vanilla = separable_vanilla();
        let temporal: Vec<Vec<u32>> = vec![vec![2]; 50];
        let nontemporal: Vec<Vec<u32>> = vec![vec![3]; 50];
        let config = RouterConfig { hidden: 4, ..RouterConfig::default() };
        let router = train_router(&temporal, &nontemporal, &vanilla, &config).unwrap();
        assert!(router.is_temporal(&[2.0, 0.0, 0.0, 0.0]));
        assert!(!router.is_temporal(&[-2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn router_rejects_single_class() {
        let vanilla = separable_vanilla();
        assert!(matches!(
            train_router(&[], &[vec![3]], &vanilla, &RouterConfig::default()),
            Err(TrainError::SingleClass)
        ));
    }

    #[test]
    fn router_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let d = 6;
        let router = RouterParams::init(d, 5, 81);
        let xs: Vec<Vec<f64>> =
            (0..12).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..12).map(|_| rng.gen_range(0..2)).collect();
        let (_, grads) = router_loss_grads(&router, &xs, &ys);
        let h = 1e-6;
        for _ in 0..20 {
            let tensor = rng.gen_range(0..4);
            let (len, analytic): (usize, &[f64]) = match tensor {
                0 => (router.w1.data.len(), &grads.w1.data),
                1 => (router.b1.len(), &grads.b1),
                2 => (router.w2.data.len(), &grads.w2.data),
                _ => (router.b2.len(), &grads.b2),
            };
            let idx = rng.gen_range(0..len);
            let eval = |delta: f64| {
                let mut r = router.clone();
                match tensor {
                    0 => r.w1.data[idx] += delta,
                    1 => r.b1[idx] += delta,
                    2 => r.w2.data[idx] += delta,
                    _ => r.b2[idx] += delta,
                }
                router_loss(&r, &xs, &ys)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "tensor {tensor}[{idx}] analytic {a} fd {fd}");
        }
    }

    #[test]
    fn shuffled_labels_keep_dev_accuracy_near_chance() {
        // both "classes" drawn from the same distribution: the permutation
        // baseline, averaged over 5 seeds
        let vanilla = toy_params(50, 8, 90);
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut draw = |count: usize| -> Vec<Vec<u32>> {
            (0..count)
                .map(|_| (0..rng.gen_range(3..9)).map(|_| rng.gen_range(1..50)).collect())
                .collect()
        };
        let temporal = draw(400);
        let nontemporal = draw(400);
        let mut total = 0.0;
        for seed in 0..5 {
            let config = RouterConfig { hidden: 8, epochs: 5, seed, ..RouterConfig::default() };
            let router = train_router(&temporal, &nontemporal, &vanilla, &config).unwrap();
            let acc = |qs: &[Vec<u32>], label: usize| -> (usize, usize) {
                let hits = qs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 5 == 0)
                    .filter(|(_, q)| {
                        let e = crate::encoder::encode(&vanilla, None, q).unwrap();
                        usize::from(router.is_temporal(&e.0)) == label
                    })
                    .count();
                (hits, qs.len().div_ceil(5))
            };
            let (h1, n1) = acc(&temporal, 1);
            let (h0, n0) = acc(&nontemporal, 0);
            total += (h1 + h0) as f64 / (n1 + n0) as f64;
        }
        let mean = total / 5.0;
        assert!((0.4..=0.6).contains(&mean), "mean shuffled-label accuracy {mean}");
    }
}
