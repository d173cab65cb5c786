//! Model assembly, training, and evaluation.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegraph::embed_codes;
use crate::corpus::{CodeFamily, DatasetSplit, PatentRecord};
use crate::embedding::EmbeddingTable;
use crate::nn::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, Checkpoint, Classifier, CodeInputs, Dropout, Example,
    Gradients, Graph, ModelConfig,
};
use crate::rng::{derive_seed, seeded};
use crate::textenc::{tokenize, Vocabulary};
use crate::{Error, Result};

/// Records per gradient work unit. Batches are cut into chunks of this size
/// and the chunk gradients are summed in order, so results do not depend on
/// the number of worker threads.
pub const GRADIENT_CHUNK: usize = 8;

/// Pretrained code tables, one per family.
#[derive(Debug, Clone)]
pub struct CodeTables {
    pub cpc: EmbeddingTable,
    pub ipc: EmbeddingTable,
    pub uspc: EmbeddingTable,
}

impl CodeTables {
    pub fn get(&self, family: CodeFamily) -> &EmbeddingTable {
        match family {
            CodeFamily::Cpc => &self.cpc,
            CodeFamily::Ipc => &self.ipc,
            CodeFamily::Uspc => &self.uspc,
        }
    }

    pub fn get_mut(&mut self, family: CodeFamily) -> &mut EmbeddingTable {
        match family {
            CodeFamily::Cpc => &mut self.cpc,
            CodeFamily::Ipc => &mut self.ipc,
            CodeFamily::Uspc => &mut self.uspc,
        }
    }

    /// Tables with no keys, for models trained without code embeddings.
    pub fn empty(dim: usize) -> Self {
        let t = || EmbeddingTable::new(Vec::new(), Array2::zeros((0, dim))).expect("empty table");
        CodeTables { cpc: t(), ipc: t(), uspc: t() }
    }
}

/// Everything needed to score a patent.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub vocab: Vocabulary,
    pub codes: CodeTables,
    pub model: Classifier,
}

impl ModelBundle {
    /// Builds a fresh classifier. When `token_vectors` is given its keys must
    /// equal the vocabulary and its rows initialize the token table.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        token_vectors: Option<&EmbeddingTable>,
        codes: CodeTables,
        seed: u64,
    ) -> Result<Self> {
        for f in CodeFamily::ALL {
            if codes.get(f).dimension() != config.code_dim {
                return Err(Error::ShapeMismatch(format!(
                    "{f} table has dimension {}, model expects {}",
                    codes.get(f).dimension(),
                    config.code_dim
                )));
            }
        }
        let mut model = Classifier::new(config, vocab.len(), seed)?;
        if let Some(t) = token_vectors {
            if t.keys() != vocab.tokens() {
                return Err(Error::InvalidInput("token table keys differ from the vocabulary".into()));
            }
            if model.config().variant.uses_text() {
                model.load_token_embeddings(t.vectors())?;
            }
        }
        Ok(ModelBundle { vocab, codes, model })
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn code_inputs(&self, record: &PatentRecord) -> CodeInputs {
        CodeInputs {
            cpc: embed_codes(&record.cpc, &self.codes.cpc),
            ipc: embed_codes(&record.ipc, &self.codes.ipc),
            uspc: embed_codes(&record.uspc, &self.codes.uspc),
        }
    }

    /// Tokenized abstract and averaged code vectors; the label is the
    /// record's `valid` flag.
    pub fn example(&self, record: &PatentRecord) -> Example {
        Example {
            tokens: tokenize(&record.abstract_text, &self.vocab, self.config().encoder.seq_len),
            codes: self.code_inputs(record),
            label: if record.valid { 1.0 } else { 0.0 },
        }
    }

    pub fn prepare(&self, records: &[PatentRecord]) -> Vec<Example> {
        records.par_iter().map(|r| self.example(r)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BundleMeta {
            model: self.config().clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            code_keys: CodeFamily::ALL.map(|f| self.codes.get(f).keys().to_vec()),
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let extra =
            CodeFamily::ALL.iter().map(|&f| (format!("codes/{f}"), self.codes.get(f).vectors().clone())).collect();
        let ckpt = Checkpoint { meta, params: self.model.params().clone(), extra };
        write_checkpoint(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        let meta: BundleMeta =
            serde_json::from_value(ckpt.meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let vocab = Vocabulary::try_from(meta.vocabulary)?;
        let mut tables = CodeTables::empty(meta.model.code_dim);
        for (f, keys) in CodeFamily::ALL.into_iter().zip(meta.code_keys) {
            let name = format!("codes/{f}");
            let (_, vectors) = ckpt
                .extra
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            *tables.get_mut(f) = EmbeddingTable::new(keys, vectors.clone())?;
        }
        let model = Classifier::from_params(meta.model, ckpt.params)?;
        if model.config().variant.uses_text() {
            let rows = model.params().get(crate::nn::model::TOKEN_EMBEDDING).map_or(0, |t| t.nrows());
            if rows != vocab.len() {
                return Err(Error::Checkpoint("token table and vocabulary sizes differ".into()));
            }
        }
        Ok(ModelBundle { vocab, codes: tables, model })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    model: ModelConfig,
    vocabulary: Vec<String>,
    code_keys: [Vec<String>; 3],
}

/// Probability that `record` is a valid patent.
pub fn forward_patent(record: &PatentRecord, bundle: &ModelBundle) -> Result<f64> {
    bundle.model.predict(&bundle.example(record))
}

/// Scores records in parallel; order follows the input.
pub fn score_records(bundle: &ModelBundle, records: &[PatentRecord]) -> Result<Vec<f64>> {
    records.par_iter().map(|r| forward_patent(r, bundle)).collect()
}

fn score_examples(model: &Classifier, examples: &[Example]) -> Result<Vec<f64>> {
    examples.par_iter().map(|e| model.predict(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    /// Loss weight of positive examples; 1 means plain cross-entropy.
    pub pos_weight: f64,
    pub freeze_token_embeddings: bool,
    /// Worker threads for gradient computation; 0 uses all cores.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_epsilon: 1e-8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            seed: 0,
            pos_weight: 1.0,
            freeze_token_embeddings: false,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.adam_epsilon > 0.0 && self.pos_weight > 0.0) {
            return Err(Error::InvalidConfig("learning rate, epsilon and pos_weight must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation split has no positives.
    pub validation_ap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean loss and gradients of one minibatch.
fn batch_gradients(
    model: &Classifier,
    batch: &[&Example],
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<(f64, Gradients)> {
    let rate = model.config().encoder.dropout;
    let partial: Vec<(f64, Gradients)> = batch
        .par_chunks(GRADIENT_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut loss = 0.0;
            let mut grads = Gradients::empty(model.params().len());
            for (i, ex) in chunk.iter().enumerate() {
                let mut dropout = Dropout::new(rate, derive_seed(dropout_seed, &[(c * GRADIENT_CHUNK + i) as u64]));
                let mut g = Graph::new(model.params());
                let l = model.loss(&mut g, ex, cfg.pos_weight, Some(&mut dropout))?;
                loss += g.value(l)[[0, 0]];
                grads.accumulate(g.backward(l)?);
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads = Gradients::empty(model.params().len());
    for (l, g) in partial {
        loss += l;
        grads.accumulate(g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Trains on `dataset.train`, selecting the epoch with the best validation
/// AP; ties go to the later epoch. `progress` is called after each epoch.
pub fn train_with_progress(
    dataset: &DatasetSplit,
    mut bundle: ModelBundle,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats) + Send,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let positives = dataset.train.iter().filter(|r| r.valid).count();
    if positives == 0 || positives == dataset.train.len() {
        return Err(Error::SingleClass);
    }
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { bundle, history: Vec::new(), best_epoch: 0 });
    }
    bundle.model.set_token_embeddings_frozen(cfg.freeze_token_embeddings);
    let adam = cfg.adam();
    with_pool(cfg.workers, move || {
        let train = bundle.prepare(&dataset.train);
        let validation = bundle.prepare(&dataset.validation);
        let val_labels: Vec<bool> = validation.iter().map(|e| e.label > 0.5).collect();
        let has_val = val_labels.iter().any(|&l| l);

        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = seeded(cfg.seed, &[0x7A1]);
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, crate::nn::ParameterStore)> = None;
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
                let seed = derive_seed(cfg.seed, &[0xD0, epoch as u64, b as u64]);
                let (loss, grads) = batch_gradients(&bundle.model, &batch, cfg, seed)?;
                if !loss.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite loss in epoch {epoch}")));
                }
                loss_sum += loss * batch.len() as f64;
                adam_step(bundle.model.params_mut(), &grads, &adam)?;
            }
            let validation_ap = if has_val {
                let scores = score_examples(&bundle.model, &validation)?;
                Some(average_precision(&scores, &val_labels)?)
            } else {
                None
            };
            let stats = EpochStats { epoch, train_loss: loss_sum / train.len() as f64, validation_ap };
            progress(&stats);
            let score = validation_ap.unwrap_or(f64::NEG_INFINITY);
            // equal AP means equal ranking; the later epoch is better calibrated
            if !has_val || best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
                best = Some((score, epoch, bundle.model.params().clone()));
            }
            history.push(stats);
        }
        let (_, best_epoch, params) = best.expect("at least one epoch ran");
        *bundle.model.params_mut() = params;
        Ok(TrainOutcome { bundle, history, best_epoch })
    })?
}

pub fn train(dataset: &DatasetSplit, bundle: ModelBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, bundle, cfg, |_| {})
}

/// Writes the history as CSV: `epoch,train_loss,validation_ap`.
pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,validation_ap\n");
    for h in history {
        let ap = h.validation_ap.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", h.epoch, h.train_loss, ap).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    Ok(())
}

/// Average precision over the ranking by descending score; ties keep input
/// order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// True positives, false positives, false negatives at `threshold`
/// (predicted positive when `score >= threshold`).
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(usize, usize, usize)> {
    check_lengths(scores, labels)?;
    let mut c = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `(precision, recall, f1)`; undefined values are 0.
pub fn precision_recall_f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64, f64)> {
    let (tp, fp, fneg) = confusion(scores, labels, threshold)?;
    let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fneg));
    Ok((p, r, f1_of(p, r)))
}

pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    Ok(precision_recall_f1(scores, labels, threshold)?.2)
}

/// The score threshold maximizing F1, searched over the observed scores.
/// Ties prefer the higher threshold; 0.5 when no threshold gives F1 > 0.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut candidates = scores.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut best = (0.0, 0.5);
    for t in candidates {
        let f = f1_score(scores, labels, t)?;
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub id: String,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub average_precision: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub records: Vec<ScoredRecord>,
}

impl EvalReport {
    pub fn from_scores(records: Vec<ScoredRecord>, threshold: f64) -> Result<Self> {
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
        let average_precision = average_precision(&scores, &labels)?;
        let (precision, recall, f1) = precision_recall_f1(&scores, &labels, threshold)?;
        Ok(EvalReport { average_precision, f1, precision, recall, threshold, records })
    }

    /// Metrics block, then one `id score label` line per record. Floats are
    /// written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "average_precision {}", self.average_precision).unwrap();
        writeln!(s, "f1 {}", self.f1).unwrap();
        writeln!(s, "precision {}", self.precision).unwrap();
        writeln!(s, "recall {}", self.recall).unwrap();
        writeln!(s, "threshold {}", self.threshold).unwrap();
        writeln!(s, "records {}", self.records.len()).unwrap();
        for r in &self.records {
            writeln!(s, "{} {} {}", r.id, r.score, u8::from(r.label)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut field = |key: &str| -> Result<f64> {
            let (n, line) = lines.next().ok_or(Error::Format { line: 0, reason: format!("missing `{key}`") })?;
            let bad = || Error::Format { line: n + 1, reason: format!("expected `{key} <number>`") };
            let value = line.strip_prefix(key).and_then(|v| v.strip_prefix(' ')).ok_or_else(bad)?;
            value.parse().map_err(|_| bad())
        };
        let average_precision = field("average_precision")?;
        let f1 = field("f1")?;
        let precision = field("precision")?;
        let recall = field("recall")?;
        let threshold = field("threshold")?;
        let count = field("records")? as usize;
        let mut records = Vec::with_capacity(count);
        for (n, line) in lines {
            let bad = |reason: &str| Error::Format { line: n + 1, reason: reason.into() };
            let parts: Vec<&str> = line.split(' ').collect();
            let [id, score, label] = parts[..] else {
                return Err(bad("expected `id score label`"));
            };
            let score = score.parse().map_err(|_| bad("bad score"))?;
            let label = match label {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            };
            records.push(ScoredRecord { id: id.to_string(), score, label });
        }
        if records.len() != count {
            return Err(Error::Format {
                line: 6,
                reason: format!("{count} records declared, {} found", records.len()),
            });
        }
        Ok(EvalReport { average_precision, f1, precision, recall, threshold, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Scores `records` and reports AP plus precision/recall/F1 at `threshold`.
pub fn evaluate(bundle: &ModelBundle, records: &[PatentRecord], threshold: f64) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if records.iter().any(|r| r.id.chars().any(char::is_whitespace)) {
        return Err(Error::InvalidInput("record ids in a report must not contain whitespace".into()));
    }
    let scores = score_records(bundle, records)?;
    let scored =
        records.iter().zip(scores).map(|(r, score)| ScoredRecord { id: r.id.clone(), score, label: r.valid }).collect();
    EvalReport::from_scores(scored, threshold)
}
