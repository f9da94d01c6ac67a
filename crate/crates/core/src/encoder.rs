//! The dense encoder: mean-pooled token embeddings followed by a single
//! affine projection, all in f64. Includes the frozen corpus vocabulary,
//! LoRA adaptation of the projection, and the binary checkpoint format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty input")]
    EmptyInput,
    #[error("out-of-vocab id {id} (vocab size {vocab_size})")]
    OutOfVocab { id: u32, vocab_size: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("unknown adapter target `{0}` (only `proj_w` is adaptable)")]
    UnknownTarget(String),
    #[error("checkpoint magic mismatch: found {found:02x?}, expected {expected:02x?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {field}")]
    Truncated { field: &'static str },
    #[error("checkpoint field {field} has invalid value {value}")]
    BadField { field: &'static str, value: u64 },
    #[error("non-finite value in tensor {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Matrix {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c));
        Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = self * x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// y = self^T * x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            for c in 0..self.cols {
                y[c] += row[c] * x[r];
            }
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Token vocabulary built once from the corpus and frozen. Ids 0 and 1 are
/// reserved for pad and unknown.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

impl Vocab {
    /// Splits on whitespace, strips non-alphanumeric edges, lowercases.
    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|w| !w.is_empty())
            .collect()
    }

    /// Builds the vocabulary from corpus texts. Token order is first-seen,
    /// so building is deterministic for a fixed text order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::new();
        index.insert(tokens[0].clone(), PAD_ID);
        index.insert(tokens[1].clone(), UNK_ID);
        for text in texts {
            for tok in Self::tokenize(text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len() as u32);
                    tokens.push(tok);
                }
            }
        }
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Maps text to token ids, unknown words to `UNK_ID`.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        Self::tokenize(text)
            .into_iter()
            .map(|t| self.index.get(&t).copied().unwrap_or(UNK_ID))
            .collect()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// One token per line, id = line number.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Vocab {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        Ok(Vocab::from_text(&std::fs::read_to_string(path)?))
    }

    /// SHA-256 of the serialized vocabulary; stored in checkpoints so that
    /// merging across incompatible vocabularies is rejected.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// A d-dimensional query or passage embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Full parameter set of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embed: Matrix,  // V x d
    pub proj_w: Matrix, // d x d
    pub proj_b: Vec<f64>,
    pub vocab_hash: [u8; 32],
}

impl EncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.embed.rows
    }

    pub fn dim(&self) -> usize {
        self.embed.cols
    }

    /// Random init, uniform in [-scale, scale], proj_w seeded near identity.
    pub fn init(vocab_size: usize, dim: usize, scale: f64, seed: u64, vocab_hash: [u8; 32]) -> EncoderParams {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut embed = Matrix::zeros(vocab_size, dim);
        for v in embed.data.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        embed.row_mut(PAD_ID as usize).fill(0.0);
        let mut proj_w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            proj_w.set(i, i, 1.0);
        }
        for v in proj_w.data.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let proj_b = vec![0.0; dim];
        EncoderParams { embed, proj_w, proj_b, vocab_hash }
    }

    /// Named trainable tensors, fixed order.
    pub fn tensor_names() -> [&'static str; 3] {
        ["embed", "proj_w", "proj_b"]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        match name {
            "embed" => Some(&self.embed.data),
            "proj_w" => Some(&self.proj_w.data),
            "proj_b" => Some(&self.proj_b),
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match name {
            "embed" => Some(&mut self.embed.data),
            "proj_w" => Some(&mut self.proj_w.data),
            "proj_b" => Some(&mut self.proj_b),
            _ => None,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.embed.is_finite() {
            return Err(EncoderError::NonFinite("embed"));
        }
        if !self.proj_w.is_finite() {
            return Err(EncoderError::NonFinite("proj_w"));
        }
        if !self.proj_b.iter().all(|v| v.is_finite()) {
            return Err(EncoderError::NonFinite("proj_b"));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        self.embed.rows == other.embed.rows
            && self.embed.cols == other.embed.cols
            && self.proj_w.rows == other.proj_w.rows
            && self.proj_b.len() == other.proj_b.len()
    }

    /// SHA-256 over the checkpoint serialization; used for provenance.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex_string(&Sha256::digest(&buf))
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab_size() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&self.vocab_hash)?;
        for name in Self::tensor_names() {
            for v in self.tensor(name).unwrap() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Low-rank adapter over `proj_w`: effective projection is
/// `proj_w + (alpha/rank) * B * A` with `A: r x d`, `B: d x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    pub a: Matrix, // r x d
    pub b: Matrix, // d x r
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// A gets small random init, B starts at zero so the adapter is a no-op.
    pub fn init(dim: usize, rank: usize, alpha: f64, seed: u64) -> LoraAdapter {
        use rand::{Rng, SeedableRng};
        assert!(rank >= 1 && rank <= dim);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(rank, dim);
        for v in a.data.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        let b = Matrix::zeros(dim, rank);
        LoraAdapter { target: "proj_w".to_string(), a, b, rank, alpha }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// (alpha/r) * B * A as a dense d x d delta.
    pub fn delta(&self) -> Matrix {
        let d = self.b.rows;
        let mut out = Matrix::zeros(d, d);
        let s = self.scale();
        for i in 0..d {
            for k in 0..self.rank {
                let bik = self.b.get(i, k);
                if bik == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let v = out.get(i, j) + s * bik * self.a.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }
}

/// Mean-pools the token embedding rows, then applies the affine projection
/// (with the LoRA delta folded into the projection when an adapter is given).
pub fn encode(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    tokens: &[u32],
) -> Result<Embedding> {
    let pooled = mean_pool(params, tokens)?;
    Ok(Embedding(project(params, adapter, &pooled)?))
}

/// Mean of the token embedding rows.
pub fn mean_pool(params: &EncoderParams, tokens: &[u32]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(EncoderError::EmptyInput);
    }
    let d = params.dim();
    let mut pooled = vec![0.0; d];
    for &id in tokens {
        if id as usize >= params.vocab_size() {
            return Err(EncoderError::OutOfVocab { id, vocab_size: params.vocab_size() });
        }
        for (p, e) in pooled.iter_mut().zip(params.embed.row(id as usize)) {
            *p += e;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    Ok(pooled)
}

/// W_eff * x + b where W_eff folds in the adapter delta when present.
pub fn project(
    params: &EncoderParams,
    adapter: Option<&LoraAdapter>,
    x: &[f64],
) -> Result<Vec<f64>> {
    let d = params.dim();
    if x.len() != d {
        return Err(EncoderError::DimMismatch { left: x.len(), right: d });
    }
    if let Some(ad) = adapter {
        if ad.target != "proj_w" {
            return Err(EncoderError::UnknownTarget(ad.target.clone()));
        }
    }
    let mut y = params.proj_w.matvec(x);
    if let Some(ad) = adapter {
        // (alpha/r) * B * (A * x), without materializing B*A
        let ax = ad.a.matvec(x);
        let bax = ad.b.matvec(&ax);
        let s = ad.scale();
        for (yi, bi) in y.iter_mut().zip(&bax) {
            *yi += s * bi;
        }
    }
    for (yi, bi) in y.iter_mut().zip(&params.proj_b) {
        *yi += bi;
    }
    Ok(y)
}

/// Exact dot product, no normalization.
pub fn similarity(q: &Embedding, d: &Embedding) -> Result<f64> {
    if q.dim() != d.dim() {
        return Err(EncoderError::DimMismatch { left: q.dim(), right: d.dim() });
    }
    Ok(q.0.iter().zip(&d.0).map(|(a, b)| a * b).sum())
}

/// Folds the adapter into the dense projection; the result encodes
/// identically to the (params, adapter) pair.
pub fn materialize_lora(params: &EncoderParams, adapter: &LoraAdapter) -> Result<EncoderParams> {
    if adapter.target != "proj_w" {
        return Err(EncoderError::UnknownTarget(adapter.target.clone()));
    }
    if adapter.a.cols != params.dim() || adapter.b.rows != params.dim() {
        return Err(EncoderError::DimMismatch { left: adapter.a.cols, right: params.dim() });
    }
    let mut out = params.clone();
    let delta = adapter.delta();
    for (w, dv) in out.proj_w.data.iter_mut().zip(&delta.data) {
        *w += dv;
    }
    Ok(out)
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    params.write_to(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| EncoderError::Truncated { field })
}

fn read_u64(r: &mut impl Read, field: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<EncoderParams> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EncoderError::BadMagic { found: magic, expected: *CHECKPOINT_MAGIC });
    }
    let mut ver = [0u8; 4];
    read_exact(r, &mut ver, "version")?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(EncoderError::BadVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let v = read_u64(r, "vocab_size")?;
    let d = read_u64(r, "dim")?;
    if v == 0 || v > 1 << 32 {
        return Err(EncoderError::BadField { field: "vocab_size", value: v });
    }
    if d == 0 || d > 1 << 20 {
        return Err(EncoderError::BadField { field: "dim", value: d });
    }
    let (v, d) = (v as usize, d as usize);
    let mut vocab_hash = [0u8; 32];
    read_exact(r, &mut vocab_hash, "vocab_hash")?;
    let mut params = EncoderParams {
        embed: Matrix::zeros(v, d),
        proj_w: Matrix::zeros(d, d),
        proj_b: vec![0.0; d],
        vocab_hash,
    };
    for name in EncoderParams::tensor_names() {
        let tensor = params.tensor_mut(name).unwrap();
        let mut b = [0u8; 8];
        for slot in tensor.iter_mut() {
            read_exact(r, &mut b, name)?;
            *slot = f64::from_le_bytes(b);
        }
    }
    params.check_finite()?;
    Ok(params)
}
