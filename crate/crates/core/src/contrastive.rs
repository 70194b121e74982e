//! Cosine similarity and the normalized-temperature contrastive loss over a
//! batch of 2N view embeddings.
//!
//! Indices are 0-based: vector `i` and vector `i + N` are the two views of
//! original sample `i`.

use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContrastiveError {
    #[error("vector {index} has zero norm")]
    ZeroNormVector { index: usize },
    #[error("embedding batch must hold an even, nonzero number of vectors (got {0})")]
    OddBatch(usize),
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("pair ({i}, {j}) out of range for {n} vectors")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("non-finite value in embedding {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Average of ℓ(i, i+N) over the first half only.
    #[default]
    Paper,
    /// Average over both directions ℓ(i, i+N) and ℓ(i+N, i).
    Symmetric,
}

impl LossMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Self::Paper),
            "symmetric" => Some(Self::Symmetric),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Paper => "paper",
            Self::Symmetric => "symmetric",
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, ContrastiveError> {
    if u.len() != v.len() {
        return Err(ContrastiveError::DimensionMismatch { index: 1, expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 {
        return Err(ContrastiveError::ZeroNormVector { index: 0 });
    }
    if nv == 0.0 {
        return Err(ContrastiveError::ZeroNormVector { index: 1 });
    }
    Ok(dot(u, v) / (nu * nv))
}

/// 2N embedding vectors; `vectors[i]` and `vectors[i + N]` are a positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self, ContrastiveError> {
        if vectors.is_empty() || !vectors.len().is_multiple_of(2) {
            return Err(ContrastiveError::OddBatch(vectors.len()));
        }
        let dim = vectors[0].len();
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(ContrastiveError::DimensionMismatch { index, expected: dim, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ContrastiveError::NonFinite { index });
            }
        }
        Ok(Self { vectors, dim })
    }

    /// Builds a batch from a row-major `(2N, dim)` buffer.
    pub fn from_rows(data: &[f64], dim: usize) -> Result<Self, ContrastiveError> {
        Self::new(data.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// N, the number of original samples.
    pub fn pairs(&self) -> usize {
        self.vectors.len() / 2
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    pub temperature: f64,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

fn unit_vectors(batch: &EmbeddingBatch) -> Result<(Vec<Vec<f64>>, Vec<f64>), ContrastiveError> {
    let mut units = Vec::with_capacity(batch.len());
    let mut norms = Vec::with_capacity(batch.len());
    for (index, v) in batch.vectors.iter().enumerate() {
        let n = norm(v);
        if n.is_nan() || n <= 0.0 {
            return Err(ContrastiveError::ZeroNormVector { index });
        }
        units.push(v.iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

/// All pairwise cosine similarities. The diagonal is exactly 1.
pub fn sim_matrix(batch: &EmbeddingBatch, temperature: f64) -> Result<SimilarityMatrix, ContrastiveError> {
    let (units, _) = unit_vectors(batch)?;
    Ok(sim_from_units(&units, temperature))
}

fn sim_from_units(units: &[Vec<f64>], temperature: f64) -> SimilarityMatrix {
    let n = units.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = dot(&units[i], &units[j]);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix { n, values, temperature }
}

/// Softmax probabilities of row `i` over columns `k != i`, stabilised by
/// subtracting the row maximum. Entry `i` is 0.
fn row_softmax(m: &SimilarityMatrix, i: usize) -> Vec<f64> {
    let tau = m.temperature;
    let row = m.row(i);
    let max = row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &s)| s / tau).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> =
        row.iter().enumerate().map(|(k, &s)| if k == i { 0.0 } else { (s / tau - max).exp() }).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// ℓ(i, j) = −log( exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ) ).
pub fn pair_loss(i: usize, j: usize, m: &SimilarityMatrix) -> Result<f64, ContrastiveError> {
    let n = m.size();
    if i >= n || j >= n || i == j {
        return Err(ContrastiveError::IndexOutOfRange { i, j, n });
    }
    Ok(pair_loss_unchecked(i, j, m))
}

fn pair_loss_unchecked(i: usize, j: usize, m: &SimilarityMatrix) -> f64 {
    let tau = m.temperature;
    let row = m.row(i);
    let max = row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &s)| s / tau).fold(f64::NEG_INFINITY, f64::max);
    let lse =
        max + row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &s)| (s / tau - max).exp()).sum::<f64>().ln();
    (lse - row[j] / tau).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    /// `(anchor, positive, ℓ)` for every term that entered the average.
    pub pair_losses: Vec<(usize, usize, f64)>,
}

fn anchors(n_pairs: usize, mode: LossMode) -> Vec<(usize, usize)> {
    let forward = (0..n_pairs).map(|i| (i, i + n_pairs));
    match mode {
        LossMode::Paper => forward.collect(),
        LossMode::Symmetric => forward.chain((0..n_pairs).map(|i| (i + n_pairs, i))).collect(),
    }
}

pub fn batch_loss(batch: &EmbeddingBatch, temperature: f64, mode: LossMode) -> Result<BatchLoss, ContrastiveError> {
    let m = sim_matrix(batch, temperature)?;
    Ok(loss_from_matrix(&m, batch.pairs(), mode))
}

fn loss_from_matrix(m: &SimilarityMatrix, n_pairs: usize, mode: LossMode) -> BatchLoss {
    let pair_losses: Vec<(usize, usize, f64)> =
        anchors(n_pairs, mode).into_iter().map(|(i, j)| (i, j, pair_loss_unchecked(i, j, m))).collect();
    let loss = pair_losses.iter().map(|p| p.2).sum::<f64>() / pair_losses.len() as f64;
    BatchLoss { loss, pair_losses }
}

/// Loss together with its gradient with respect to every input vector.
pub fn batch_loss_with_grad(
    batch: &EmbeddingBatch,
    temperature: f64,
    mode: LossMode,
) -> Result<(BatchLoss, Vec<Vec<f64>>), ContrastiveError> {
    let (units, norms) = unit_vectors(batch)?;
    let m = sim_from_units(&units, temperature);
    let n = batch.len();
    let terms = anchors(batch.pairs(), mode);
    let scale = 1.0 / terms.len() as f64;

    // dL/ds_ik for the ordered pair (i, k).
    let mut ds = vec![0.0; n * n];
    for &(i, j) in &terms {
        let p = row_softmax(&m, i);
        for k in 0..n {
            if k == i {
                continue;
            }
            let target = if k == j { 1.0 } else { 0.0 };
            ds[i * n + k] += scale * (p[k] - target) / temperature;
        }
    }

    // s_ab = û_a·û_b, ∂s_ab/∂t_a = (û_b − s_ab û_a) / ‖t_a‖.
    let dim = batch.dim();
    let mut grads = vec![vec![0.0; dim]; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let g = ds[a * n + b] + ds[b * n + a];
            if g == 0.0 {
                continue;
            }
            let s = m.get(a, b);
            let coef = g / norms[a];
            for d in 0..dim {
                grads[a][d] += coef * (units[b][d] - s * units[a][d]);
            }
        }
    }
    Ok((loss_from_matrix(&m, batch.pairs(), mode), grads))
}

/// Upper bound 2/τ + log(2N − 1) on any single ℓ(i, j).
pub fn pair_loss_bound(temperature: f64, batch_len: usize) -> f64 {
    2.0 / temperature + ((batch_len - 1) as f64).ln()
}
