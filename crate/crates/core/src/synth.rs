//! Synthetic patent corpora with a planted relevance signal.
//!
//! A record is valid exactly when its abstract contains the marker word and
//! its CPC list contains the marker code. Decoys carry only one of the two.
//! A niche CPC shows up only on valid records, so the undersampling
//! heuristic finds it important, while the marker CPC is common enough in
//! the background corpus to stay below the emergence threshold.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codegraph::{build_graph, train_code_embeddings, Diff2VecConfig};
use crate::corpus::{
    assemble_dataset, code_doc_frequency, important_codes, sample_negatives, split_valid, CodeFamily, DatasetSplit,
    PatentRecord, SamplingConfig,
};
use crate::nn::{EncoderConfig, ModelConfig, ModelVariant};
use crate::pipeline::{evaluate, train_with_progress, CodeTables, EpochStats, EvalReport, ModelBundle, TrainConfig};
use crate::rng::seeded;
use crate::skipgram::SkipGramConfig;
use crate::textenc::{build_vocab, pretrain_token_embeddings};
use crate::{Error, Result};

pub const MARKER_WORD: &str = "zerolith";
pub const MARKER_CPC: &str = "Y10S901/50";
pub const NICHE_CPC: &str = "B63B35/44";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Records returned by the "search formula".
    pub retrieved: usize,
    pub positive_rate: f64,
    /// Share of retrieved records carrying only the marker word.
    pub word_decoy_rate: f64,
    /// Share of retrieved records carrying only the marker CPC.
    pub cpc_decoy_rate: f64,
    /// Share of valid records that also carry the niche CPC.
    pub niche_rate: f64,
    /// Extra records that only feed corpus-wide code statistics.
    pub background: usize,
    pub vocabulary: usize,
    pub code_pool: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            retrieved: 5000,
            positive_rate: 0.02,
            word_decoy_rate: 0.1,
            cpc_decoy_rate: 0.1,
            niche_rate: 0.4,
            background: 15_000,
            vocabulary: 400,
            code_pool: 120,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub retrieved: Vec<PatentRecord>,
    pub background: Vec<PatentRecord>,
}

impl SynthCorpus {
    /// Retrieved records followed by background records.
    pub fn all(&self) -> impl Iterator<Item = &PatentRecord> {
        self.retrieved.iter().chain(&self.background)
    }

    pub fn valid(&self) -> Vec<PatentRecord> {
        self.retrieved.iter().filter(|r| r.valid).cloned().collect()
    }
}

const ONSETS: [&str; 12] = ["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pseudo-words: `n` distinct lowercase strings.
pub fn filler_words(n: usize) -> Vec<String> {
    let syllable = |i: usize| format!("{}{}", ONSETS[i % ONSETS.len()], NUCLEI[(i / ONSETS.len()) % NUCLEI.len()]);
    let per = ONSETS.len() * NUCLEI.len();
    (0..n)
        .map(|i| {
            let mut w = syllable(i) + &syllable(i / per + 7) + &syllable(i / (per * per) + 13);
            w.push_str(["ne", "ter", "sis", "lar"][i % 4]);
            w
        })
        .collect()
}

fn filler_codes(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{:02}/{}", i / 10, 10 + i % 10)).collect()
}

/// Codes per technology cluster.
const CLUSTER: usize = 10;

struct Pools {
    words: Vec<String>,
    cpc: Vec<String>,
    ipc: Vec<String>,
    uspc: Vec<String>,
}

fn record(
    id: String,
    pools: &Pools,
    rng: &mut ChaCha8Rng,
    marker_word: bool,
    marker_cpc: bool,
    niche: bool,
    valid: bool,
) -> PatentRecord {
    let len = rng.gen_range(20..60);
    let mut words: Vec<&str> = (0..len).map(|_| pools.words.choose(rng).unwrap().as_str()).collect();
    if marker_word {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, MARKER_WORD);
    }
    let abstract_text = words.join(" ") + ".";
    let title = words[..4].join(" ");
    // codes come from one technology cluster per record; the marker code
    // lives in cluster 0 with its own companions
    let clusters = pools.cpc.len() / CLUSTER;
    let cluster = if marker_cpc { 0 } else { rng.gen_range(1..clusters) };
    let pick = |pool: &[String], k: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
        pool[cluster * CLUSTER..(cluster + 1) * CLUSTER].choose_multiple(rng, k).cloned().collect()
    };
    let mut cpc = pick(&pools.cpc, rng.gen_range(1..=3), rng);
    if marker_cpc {
        cpc.insert(rng.gen_range(0..=cpc.len()), MARKER_CPC.to_string());
    }
    if niche {
        cpc.push(NICHE_CPC.to_string());
    }
    let ipc = pick(&pools.ipc, rng.gen_range(1..=3), rng);
    let uspc = pick(&pools.uspc, rng.gen_range(1..=2), rng);
    PatentRecord { id, title, abstract_text, ipc, cpc, uspc, valid, publication_date: None }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let positives = (cfg.retrieved as f64 * cfg.positive_rate).round() as usize;
    let word_decoys = (cfg.retrieved as f64 * cfg.word_decoy_rate).round() as usize;
    let cpc_decoys = (cfg.retrieved as f64 * cfg.cpc_decoy_rate).round() as usize;
    if cfg.code_pool < 2 * CLUSTER {
        return Err(Error::InvalidConfig(format!("code pool needs at least {} codes", 2 * CLUSTER)));
    }
    if positives < 3 || positives + word_decoys + cpc_decoys > cfg.retrieved {
        return Err(Error::InvalidConfig("synthetic class shares do not fit the corpus".into()));
    }
    let pools = Pools {
        words: filler_words(cfg.vocabulary),
        cpc: filler_codes("H04L", cfg.code_pool),
        ipc: filler_codes("G06F", cfg.code_pool),
        uspc: (0..cfg.code_pool).map(|i| format!("{}/{}", 700 + i / 10, 100 + i % 10)).collect(),
    };
    let mut rng = seeded(cfg.seed, &[0x5E7]);
    let niche_count = (positives as f64 * cfg.niche_rate).round() as usize;
    let mut retrieved = Vec::with_capacity(cfg.retrieved);
    for i in 0..cfg.retrieved {
        let id = format!("US{:07}", 1_000_000 + i);
        let r = if i < positives {
            record(id, &pools, &mut rng, true, true, i < niche_count, true)
        } else if i < positives + word_decoys {
            record(id, &pools, &mut rng, true, false, false, false)
        } else if i < positives + word_decoys + cpc_decoys {
            record(id, &pools, &mut rng, false, true, false, false)
        } else {
            record(id, &pools, &mut rng, false, false, false, false)
        };
        retrieved.push(r);
    }
    retrieved.shuffle(&mut rng);
    let background = (0..cfg.background)
        .map(|i| {
            let id = format!("EP{:07}", 2_000_000 + i);
            // a thin stream of marker codes keeps the marker's corpus share up
            let marker = rng.gen_bool(0.03);
            record(id, &pools, &mut rng, false, marker, false, false)
        })
        .collect();
    Ok(SynthCorpus { retrieved, background })
}

/// Undersampled dataset from a synthetic corpus: the valid records split
/// 6:2:2 and, by default, every eligible retrieved negative split 6:2:2.
pub fn build_dataset(corpus: &SynthCorpus, seed: u64) -> Result<(DatasetSplit, BTreeSet<String>)> {
    let valid = corpus.valid();
    let valid_stats = code_doc_frequency(valid.iter(), CodeFamily::Cpc);
    let corpus_stats = code_doc_frequency(corpus.all(), CodeFamily::Cpc);
    let mut cfg = SamplingConfig { seed, ..SamplingConfig::default() };
    let important = important_codes(&valid_stats, &corpus_stats, &cfg)?;
    let pool = corpus.retrieved.iter().filter(|r| !r.valid && !r.cpc.iter().any(|c| important.contains(c))).count();
    let validation = pool / 5;
    cfg.negatives_per_split = [pool - 2 * validation, validation, validation];
    let negatives = sample_negatives(corpus.retrieved.iter().cloned(), &important, &cfg)?;
    let positives = split_valid(&valid, seed)?;
    let split = assemble_dataset(positives, negatives, seed)?;
    Ok((split, important))
}

/// Reduced model used for desk-scale runs: 2 layers, 2 heads, hidden 64.
pub fn reduced_model_config(variant: ModelVariant) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { layers: 2, heads: 2, hidden: 64, feed_forward: 128, seq_len: 64, dropout: 0.1 },
        code_dim: 32,
        cpc_out: 64,
        ipc_out: 32,
        uspc_out: 32,
        head_hidden: 64,
        variant,
    }
}

/// End-to-end run on a synthetic corpus: code and token pretraining,
/// classifier training, test-split evaluation.
#[derive(Debug, Clone)]
pub struct SmokeConfig {
    pub corpus: SynthConfig,
    pub model: ModelConfig,
    pub code_skipgram: SkipGramConfig,
    pub text_skipgram: SkipGramConfig,
    pub min_count: usize,
    pub train: TrainConfig,
}

impl SmokeConfig {
    pub fn reduced(variant: ModelVariant, seed: u64) -> Self {
        let sg = |dimension| SkipGramConfig { dimension, window: 5, epochs: 5, seed, ..Default::default() };
        SmokeConfig {
            corpus: SynthConfig { seed, ..Default::default() },
            model: reduced_model_config(variant),
            code_skipgram: sg(32),
            text_skipgram: sg(64),
            min_count: 5,
            train: TrainConfig { epochs: 5, learning_rate: 1e-3, seed, workers: 1, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmokeRun {
    pub dataset: DatasetSplit,
    pub bundle: ModelBundle,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub test: EvalReport,
}

pub fn run_smoke(cfg: &SmokeConfig, progress: impl FnMut(&EpochStats) + Send) -> Result<SmokeRun> {
    let corpus = generate(&cfg.corpus)?;
    let (dataset, _) = build_dataset(&corpus, cfg.corpus.seed)?;
    let records: Vec<PatentRecord> = dataset.parts().into_iter().flatten().cloned().collect();
    let d2v = Diff2VecConfig { skipgram: cfg.code_skipgram.clone(), ..Default::default() };
    let table = |family| train_code_embeddings(&build_graph(&records, family), &d2v);
    let codes =
        CodeTables { cpc: table(CodeFamily::Cpc)?, ipc: table(CodeFamily::Ipc)?, uspc: table(CodeFamily::Uspc)? };
    let abstracts: Vec<&str> = dataset.train.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&abstracts, cfg.min_count)?;
    let tokens = pretrain_token_embeddings(&abstracts, &vocab, &cfg.text_skipgram)?;
    let bundle = ModelBundle::new(cfg.model.clone(), vocab, Some(&tokens), codes, cfg.train.seed)?;
    let outcome = train_with_progress(&dataset, bundle, &cfg.train, progress)?;
    let test = evaluate(&outcome.bundle, &dataset.test, 0.5)?;
    Ok(SmokeRun { dataset, bundle: outcome.bundle, history: outcome.history, best_epoch: outcome.best_epoch, test })
}
