//! Item embeddings learned with skip-gram and negative sampling, where each
//! session's positive items (prior positives, then clicks and orders) form a
//! sentence.

use std::fs;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ItemId, Session};
use crate::error::{Error, Result};

/// Dense `rows x dim` matrix of item vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    /// Uniform in `[-0.5/dim, 0.5/dim]`.
    pub fn random(rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let half = 0.5 / dim as f64;
        let data = (0..rows * dim).map(|_| rng.random_range(-half..=half)).collect();
        EmbeddingTable { rows, dim, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("embedding rows"))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let n = rows.len();
        let mut data = Vec::with_capacity(n * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding row"));
            }
            data.extend(row);
        }
        Ok(EmbeddingTable { rows: n, dim, data })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, item: ItemId) -> Result<&[f64]> {
        if item.index() >= self.rows {
            return Err(Error::UnknownItem {
                item: item.0,
                catalog_size: self.rows,
            });
        }
        Ok(self.row(item))
    }

    /// Panics on out-of-range ids; callers validate ids at the boundary.
    pub fn row(&self, item: ItemId) -> &[f64] {
        let start = item.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub(crate) fn row_mut(&mut self, item: ItemId) -> &mut [f64] {
        let start = item.index() * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-column mean over all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.data.chunks_exact(self.dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// A copy with the mean row subtracted from every row. Skip-gram vectors
    /// share a large common direction, which otherwise dominates every
    /// cosine between them.
    pub fn centered(&self) -> Self {
        let mean = self.mean_row();
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.dim) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    }

    /// SHA-256 over the shape and the little-endian bits of every entry.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex_digest(h)
    }

    /// Header `rows dim`, then one line of space-separated decimals per item.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.dim);
        for r in 0..self.rows {
            let row = self.row(ItemId(r as u32));
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("embedding file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            })?;
        let [rows, dim] = dims[..] else {
            return Err(Error::Parse {
                line: 1,
                message: "header must be `catalog_size d`".into(),
            });
        };
        if dim == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "dimension must be positive".into(),
            });
        }
        let mut data = Vec::with_capacity(rows * dim);
        let mut seen = 0;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: "invalid decimal".into(),
                })?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {dim} finite values"),
                });
            }
            data.extend(values);
            seen += 1;
        }
        if seen != rows {
            return Err(Error::Parse {
                line: 1,
                message: format!("header promises {rows} rows, found {seen}"),
            });
        }
        Ok(EmbeddingTable { rows, dim, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::parse(&text)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 50,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
        }
    }
}

/// One (center, context) pair with its negative samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub center: ItemId,
    pub context: ItemId,
    pub negatives: Vec<ItemId>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^-x)`, i.e. `-ln(sigmoid(x))`, without overflow.
fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Input ("center") and output ("context") vectors of the skip-gram model.
#[derive(Clone, Debug)]
pub struct SkipGram {
    pub input: EmbeddingTable,
    pub output: EmbeddingTable,
}

impl SkipGram {
    pub fn new(input: EmbeddingTable, output: EmbeddingTable) -> Result<Self> {
        if input.len() != output.len() || input.dim() != output.dim() {
            return Err(Error::DimensionMismatch {
                expected: input.len() * input.dim(),
                actual: output.len() * output.dim(),
            });
        }
        Ok(SkipGram { input, output })
    }

    /// `-ln s(u_o . v_c) - sum_k ln s(-u_k . v_c)`
    pub fn example_loss(&self, ex: &Example) -> f64 {
        let v = self.input.row(ex.center);
        let mut loss = softplus_neg(dot(self.output.row(ex.context), v));
        for &n in &ex.negatives {
            loss += softplus_neg(-dot(self.output.row(n), v));
        }
        loss
    }

    pub fn loss(&self, examples: &[Example]) -> f64 {
        examples.iter().map(|ex| self.example_loss(ex)).sum()
    }

    /// Gradient of `loss(examples)` with respect to the input and output tables.
    pub fn gradient(&self, examples: &[Example]) -> (EmbeddingTable, EmbeddingTable) {
        let mut g_in = EmbeddingTable::zeros(self.input.len(), self.input.dim());
        let mut g_out = EmbeddingTable::zeros(self.output.len(), self.output.dim());
        for ex in examples {
            let v = self.input.row(ex.center);
            let targets = std::iter::once((ex.context, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)));
            for (item, label) in targets {
                let u = self.output.row(item);
                // d/dx of the logistic loss is s(x) - label
                let coef = sigmoid(dot(u, v)) - label;
                for (g, &ui) in g_in.row_mut(ex.center).iter_mut().zip(u) {
                    *g += coef * ui;
                }
                for (g, &vi) in g_out.row_mut(item).iter_mut().zip(v) {
                    *g += coef * vi;
                }
            }
        }
        (g_in, g_out)
    }

    /// One SGD step on a single example. Returns the example's loss before the step.
    fn sgd_step(&mut self, ex: &Example, lr: f64, center_grad: &mut [f64]) -> f64 {
        let loss = self.example_loss(ex);
        center_grad.fill(0.0);
        let targets = std::iter::once((ex.context, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)));
        for (item, label) in targets {
            let v = self.input.row(ex.center);
            let coef = sigmoid(dot(self.output.row(item), v)) - label;
            for (g, &ui) in center_grad.iter_mut().zip(self.output.row(item)) {
                *g += coef * ui;
            }
            let v = self.input.row(ex.center).to_vec();
            for (u, vi) in self.output.row_mut(item).iter_mut().zip(v) {
                *u -= lr * coef * vi;
            }
        }
        for (v, g) in self.input.row_mut(ex.center).iter_mut().zip(center_grad.iter()) {
            *v -= lr * g;
        }
        loss
    }
}

/// Sentences of positively engaged items: prior positives followed by the
/// session's clicks and orders. Skips never enter the corpus.
pub fn positive_corpus(sessions: &[Session]) -> Vec<Vec<ItemId>> {
    sessions
        .iter()
        .map(|s| s.prior_positives.iter().copied().chain(s.positives()).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Clone, Debug)]
pub struct EmbeddingTraining {
    pub table: EmbeddingTable,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train_embeddings(
    sessions: &[Session],
    catalog_size: usize,
    config: &SkipGramConfig,
    seed: u64,
) -> Result<EmbeddingTraining> {
    if sessions.is_empty() {
        return Err(Error::Empty("training sessions"));
    }
    if config.dim == 0 || config.window == 0 {
        return Err(Error::InvalidArgument("dimension and window must be at least 1".into()));
    }
    if catalog_size == 0 {
        return Err(Error::Empty("catalog"));
    }
    let corpus = positive_corpus(sessions);
    let mut counts = vec![0usize; catalog_size];
    for item in corpus.iter().flatten() {
        if item.index() >= catalog_size {
            return Err(Error::UnknownItem {
                item: item.0,
                catalog_size,
            });
        }
        counts[item.index()] += 1;
    }
    if corpus.is_empty() {
        return Err(Error::Empty("positive-item corpus"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = EmbeddingTable::random(catalog_size, config.dim, &mut rng);
    let output = EmbeddingTable::zeros(catalog_size, config.dim);
    let mut model = SkipGram::new(input, output)?;
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75))).expect("non-empty corpus");

    let pairs_per_epoch: usize = corpus
        .iter()
        .map(|s| (0..s.len()).map(|i| context_range(i, s.len(), config.window).count() - 1).sum::<usize>())
        .sum();
    let total = (pairs_per_epoch * config.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut scratch = vec![0.0; config.dim];
    let mut example = Example {
        center: ItemId(0),
        context: ItemId(0),
        negatives: Vec::with_capacity(config.negatives),
    };

    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut n = 0usize;
        for sentence in &corpus {
            for (i, &center) in sentence.iter().enumerate() {
                for j in context_range(i, sentence.len(), config.window) {
                    if j == i {
                        continue;
                    }
                    let context = sentence[j];
                    example.center = center;
                    example.context = context;
                    example.negatives.clear();
                    while example.negatives.len() < config.negatives {
                        let neg = ItemId(noise.sample(&mut rng) as u32);
                        if neg != context {
                            example.negatives.push(neg);
                        } else if counts.iter().filter(|&&c| c > 0).count() == 1 {
                            break;
                        }
                    }
                    let lr = config.learning_rate * (1.0 - done as f64 / total).max(1e-4);
                    epoch_loss += model.sgd_step(&example, lr, &mut scratch);
                    n += 1;
                    done += 1;
                }
            }
        }
        epoch_losses.push(if n == 0 { 0.0 } else { epoch_loss / n as f64 });
    }

    Ok(EmbeddingTraining {
        table: model.input,
        epoch_losses,
    })
}

fn context_range(i: usize, len: usize, window: usize) -> std::ops::Range<usize> {
    i.saturating_sub(window)..(i + window + 1).min(len)
}
