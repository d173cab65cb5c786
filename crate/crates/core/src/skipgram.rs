//! Skip-gram with negative sampling, shared by code-graph and token
//! embedding pretraining.
//!
//! Each (center, context) pair inside the window is a positive example; `k`
//! noise items drawn from the unigram distribution raised to 0.75 are
//! negatives. The per-pair loss is
//!
//! ```text
//! L = -ln σ(u_ctx · v_center) - Σ_n ln σ(-u_n · v_center)
//! ```
//!
//! and training is plain SGD on it with a linearly decaying learning rate.
//! Parameters live in relaxed atomics so that several workers can update
//! them without locks; with one worker the run is fully deterministic.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dimension: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// 1 runs the deterministic single-threaded trainer; more workers update
    /// shared parameters asynchronously.
    pub workers: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dimension: 128,
            window: 10,
            epochs: 5,
            negative_samples: 5,
            learning_rate: 0.025,
            seed: 0,
            workers: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("skip-gram window must be at least 1".into()));
        }
        if self.dimension < 1 {
            return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || self.workers < 1 {
            return Err(Error::InvalidConfig("learning rate must be >= 0 and workers >= 1".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded initial center vectors, uniform in `[-0.5/d, 0.5/d]`.
pub fn initial_vectors(rows: usize, dimension: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed, &[0x1417]);
    let half = 0.5 / dimension as f64;
    Array2::from_shape_simple_fn((rows, dimension), || rng.gen_range(-half..=half))
}

/// Negative-sampling loss of one center/context pair.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let pos = -sigmoid(dot(context, center)).ln();
    let neg: f64 = negatives.iter().map(|n| -sigmoid(-dot(n, center)).ln()).sum();
    pos + neg
}

/// Analytic gradients of [`pair_loss`] with respect to the center vector,
/// the context vector and each negative vector.
pub fn pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut g_center = vec![0.0; center.len()];
    let s = sigmoid(dot(context, center)) - 1.0;
    let g_context: Vec<f64> = center.iter().map(|v| s * v).collect();
    for (g, u) in g_center.iter_mut().zip(context) {
        *g += s * u;
    }
    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = sigmoid(dot(n, center));
        g_negs.push(center.iter().map(|v| s * v).collect());
        for (g, u) in g_center.iter_mut().zip(n.iter()) {
            *g += s * u;
        }
    }
    (g_center, g_context, g_negs)
}

/// One SGD step for a single (center, target) pair with `label` 1 for a true
/// context and 0 for a noise sample. Updates `target` in place and returns
/// the increment owed to the center vector.
pub fn sgd_pair_step(center: &[f64], target: &mut [f64], label: f64, lr: f64, center_delta: &mut [f64]) {
    let g = lr * (label - sigmoid(dot(center, target)));
    for ((d, t), c) in center_delta.iter_mut().zip(target.iter_mut()).zip(center) {
        *d += g * *t;
        *t += g * c;
    }
}

struct SharedMatrix {
    cells: Vec<AtomicU64>,
    cols: usize,
}

impl SharedMatrix {
    fn from_array(a: &Array2<f64>) -> Self {
        SharedMatrix { cells: a.iter().map(|v| AtomicU64::new(v.to_bits())).collect(), cols: a.ncols() }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        SharedMatrix { cells: (0..rows * cols).map(|_| AtomicU64::new(0)).collect(), cols }
    }

    fn read(&self, row: usize, buf: &mut [f64]) {
        let cells = &self.cells[row * self.cols..(row + 1) * self.cols];
        for (b, c) in buf.iter_mut().zip(cells) {
            *b = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn write(&self, row: usize, values: &[f64]) {
        let cells = &self.cells[row * self.cols..(row + 1) * self.cols];
        for (c, v) in cells.iter().zip(values) {
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_array(self) -> Array2<f64> {
        let rows = self.cells.len() / self.cols.max(1);
        let data = self.cells.into_iter().map(|c| f64::from_bits(c.into_inner())).collect();
        Array2::from_shape_vec((rows, self.cols), data).expect("shape")
    }
}

/// Trains center vectors for items `0..vocab_size` from id sequences.
///
/// Items that never occur keep their initial vectors. The returned matrix has
/// one row per item.
pub fn train_skipgram(sequences: &[Vec<usize>], vocab_size: usize, config: &SkipGramConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let mut counts = vec![0usize; vocab_size];
    let mut total_positions = 0usize;
    for seq in sequences {
        for &id in seq {
            if id >= vocab_size {
                return Err(Error::InvalidInput(format!("item {id} outside vocabulary of {vocab_size}")));
            }
            counts[id] += 1;
        }
        total_positions += seq.len();
    }
    if total_positions == 0 {
        return Err(Error::EmptyCorpus);
    }
    let init = initial_vectors(vocab_size, config.dimension, config.seed);
    if config.epochs == 0 {
        return Ok(init);
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;

    let input = SharedMatrix::from_array(&init);
    let output = SharedMatrix::zeros(vocab_size, config.dimension);
    let progress = AtomicUsize::new(0);
    let budget = (config.epochs * total_positions) as f64;
    let workers = config.workers.min(sequences.len()).max(1);
    let shard = sequences.len().div_ceil(workers);

    let run_worker = |w: usize| {
        let mut rng = seeded(config.seed, &[0x5C1B, w as u64]);
        let shard = &sequences[(w * shard).min(sequences.len())..((w + 1) * shard).min(sequences.len())];
        let dim = config.dimension;
        let (mut center, mut target, mut delta) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..config.epochs {
            for seq in shard {
                for (i, &c) in seq.iter().enumerate() {
                    let done = progress.fetch_add(1, Ordering::Relaxed) as f64;
                    let lr = config.learning_rate * (1.0 - done / budget).max(1e-4);
                    let lo = i.saturating_sub(config.window);
                    let hi = (i + config.window).min(seq.len() - 1);
                    for j in lo..=hi {
                        if j == i {
                            continue;
                        }
                        let ctx = seq[j];
                        input.read(c, &mut center);
                        delta.iter_mut().for_each(|d| *d = 0.0);
                        output.read(ctx, &mut target);
                        sgd_pair_step(&center, &mut target, 1.0, lr, &mut delta);
                        output.write(ctx, &target);
                        for _ in 0..config.negative_samples {
                            let n = noise.sample(&mut rng);
                            if n == ctx {
                                continue;
                            }
                            output.read(n, &mut target);
                            sgd_pair_step(&center, &mut target, 0.0, lr, &mut delta);
                            output.write(n, &target);
                        }
                        for (v, d) in center.iter_mut().zip(&delta) {
                            *v += d;
                        }
                        input.write(c, &center);
                    }
                }
            }
        }
    };

    if workers == 1 {
        run_worker(0);
    } else {
        std::thread::scope(|s| {
            for w in 0..workers {
                let run = &run_worker;
                s.spawn(move || run(w));
            }
        });
    }
    let trained = input.into_array();
    if trained.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("skip-gram diverged to non-finite values".into()));
    }
    Ok(trained)
}

/// Mean pairwise cosine similarity between rows in `a` and rows in `b`,
/// skipping identical row indices.
pub fn mean_cosine(vectors: &Array2<f64>, a: &[usize], b: &[usize]) -> f64 {
    let cos = |i: usize, j: usize| {
        let (x, y) = (vectors.row(i), vectors.row(j));
        x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in a {
        for &j in b {
            if i != j {
                sum += cos(i, j);
                n += 1;
            }
        }
    }
    sum / n as f64
}
