//! Parameter-average model merging, incremental merge sequences, and
//! weight-change-magnitude analysis.

use thiserror::Error;

use crate::encoder::EncoderParams;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("no models supplied")]
    Empty,
    #[error("tensor {tensor} of model {model} does not match the first model's shape")]
    ShapeMismatch { model: usize, tensor: String },
    #[error("model {model} was trained against a different vocabulary")]
    VocabMismatch { model: usize },
}

pub type Result<T> = std::result::Result<T, MergeError>;

/// Weight-change magnitude of one model against a base: the sum of
/// per-tensor Frobenius norms of the deltas.
#[derive(Debug, Clone)]
pub struct WeightChange {
    pub total: f64,
    pub per_tensor: Vec<(String, f64)>,
}

/// Analysis of one merge: how far each member moved from the base and how
/// far the merged model did.
#[derive(Debug, Clone)]
pub struct MergeReport {
    pub members: Vec<String>,
    pub member_changes: Vec<WeightChange>,
    pub merged_change: WeightChange,
}

impl MergeReport {
    pub fn member_mean(&self) -> f64 {
        self.member_changes.iter().map(|c| c.total).sum::<f64>()
            / self.member_changes.len() as f64
    }

    /// Norm convexity: the merged model cannot have moved further from the
    /// base than its members did on average.
    pub fn convexity_holds(&self) -> bool {
        self.merged_change.total <= self.member_mean() + 1e-9
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (name, change) in self.members.iter().zip(&self.member_changes) {
            out.push_str(&format!("member.{name}.weight_change={:.6}\n", change.total));
        }
        out.push_str(&format!("merged.weight_change={:.6}\n", self.merged_change.total));
        out.push_str(&format!("member_mean.weight_change={:.6}\n", self.member_mean()));
        out.push_str(&format!("convexity_holds={}\n", self.convexity_holds()));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,tensor,frobenius_norm\n");
        for (name, change) in self.members.iter().zip(&self.member_changes) {
            for (tensor, norm) in &change.per_tensor {
                out.push_str(&format!("{name},{tensor},{norm:.12}\n"));
            }
            out.push_str(&format!("{name},total,{:.12}\n", change.total));
        }
        for (tensor, norm) in &self.merged_change.per_tensor {
            out.push_str(&format!("merged,{tensor},{norm:.12}\n"));
        }
        out.push_str(&format!("merged,total,{:.12}\n", self.merged_change.total));
        out
    }
}

fn check_compatible(models: &[&EncoderParams]) -> Result<()> {
    let first = models.first().ok_or(MergeError::Empty)?;
    for (i, m) in models.iter().enumerate().skip(1) {
        if m.vocab_hash != first.vocab_hash {
            return Err(MergeError::VocabMismatch { model: i });
        }
        for name in EncoderParams::tensor_names() {
            if m.tensor(name).map(<[f64]>::len) != first.tensor(name).map(<[f64]>::len)
                || m.dim() != first.dim()
            {
                return Err(MergeError::ShapeMismatch { model: i, tensor: name.into() });
            }
        }
    }
    Ok(())
}

/// Pairwise-reduction sum over one coordinate of every model; the fixed
/// reduction order keeps results reproducible across runs.
fn pairwise_sum(values: &mut [f64]) -> f64 {
    let mut n = values.len();
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            values[i] = values[2 * i] + values[2 * i + 1];
        }
        if n % 2 == 1 {
            values[half] = values[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    values[0]
}

/// Arithmetic mean of every tensor entry across the given models (Vec
/// variant of `merge_average_refs`).
pub fn merge_average(models: &[EncoderParams]) -> Result<EncoderParams> {
    merge_average_refs(&models.iter().collect::<Vec<_>>())
}

pub fn merge_average_refs(models: &[&EncoderParams]) -> Result<EncoderParams> {
    check_compatible(models)?;
    let mut merged = models[0].clone();
    let k = models.len() as f64;
    let mut scratch = vec![0.0; models.len()];
    for name in EncoderParams::tensor_names() {
        let len = merged.tensor(name).unwrap().len();
        for idx in 0..len {
            for (slot, m) in scratch.iter_mut().zip(models) {
                *slot = m.tensor(name).unwrap()[idx];
            }
            merged.tensor_mut(name).unwrap()[idx] = pairwise_sum(&mut scratch) / k;
        }
    }
    Ok(merged)
}

/// Sum of per-tensor Frobenius norms of (tuned - base).
pub fn weight_change(base: &EncoderParams, tuned: &EncoderParams) -> Result<WeightChange> {
    check_compatible(&[base, tuned]).map_err(|e| match e {
        MergeError::ShapeMismatch { tensor, .. } => MergeError::ShapeMismatch { model: 1, tensor },
        other => other,
    })?;
    let mut per_tensor = Vec::new();
    let mut total = 0.0;
    for name in EncoderParams::tensor_names() {
        let b = base.tensor(name).unwrap();
        let t = tuned.tensor(name).unwrap();
        let norm = b
            .iter()
            .zip(t)
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt();
        total += norm;
        per_tensor.push((name.to_string(), norm));
    }
    Ok(WeightChange { total, per_tensor })
}

/// Prefix merges of length 1..=k over models supplied in merge order
/// (most to least training data).
pub fn merge_sequence(models: &[EncoderParams]) -> Result<Vec<EncoderParams>> {
    if models.is_empty() {
        return Err(MergeError::Empty);
    }
    (1..=models.len())
        .map(|j| merge_average(&models[..j]))
        .collect()
}

pub fn merge_report(
    base: &EncoderParams,
    members: &[(String, EncoderParams)],
) -> Result<MergeReport> {
    let params: Vec<&EncoderParams> = members.iter().map(|(_, p)| p).collect();
    let merged = merge_average_refs(&params)?;
    let member_changes = members
        .iter()
        .map(|(_, p)| weight_change(base, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(MergeReport {
        members: members.iter().map(|(n, _)| n.clone()).collect(),
        member_changes,
        merged_change: weight_change(base, &merged)?,
    })
}
