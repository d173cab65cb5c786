//! Abstract tokenization and token-embedding pretraining.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::skipgram::{train_skipgram, SkipGramConfig};
use crate::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
const RESERVED: [&str; 4] = [PAD, CLS, SEP, UNK];

/// Lowercased alphanumeric runs of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::InvalidInput("vocabulary must start with [PAD] [CLS] [SEP] [UNK]".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens =
            BufReader::new(file).lines().collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::io(path, e))?;
        Self::from_tokens(tokens)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

/// Builds a vocabulary of tokens seen at least `min_count` times. Reserved
/// tokens take ids 0..4; the rest follow by descending frequency, ties in
/// lexicographic order.
pub fn build_vocab<S: AsRef<str>>(abstracts: &[S], min_count: usize) -> Result<Vocabulary> {
    if abstracts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in abstracts {
        for w in words(text.as_ref()) {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        freq.into_iter().filter(|(w, c)| *c >= min_count.max(1) && !RESERVED.contains(&w.as_str())).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(w, _)| w)).collect();
    Vocabulary::from_tokens(tokens)
}

/// Fixed-length id sequence: `[CLS] tokens... [SEP]` then `[PAD]`s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

/// Tokenizes an abstract to exactly `seq_len` ids (`seq_len >= 2`). Long
/// abstracts are cut so that `[SEP]` stays the last real token; unknown
/// words become `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, seq_len: usize) -> TokenSequence {
    assert!(seq_len >= 2, "sequence length must hold [CLS] and [SEP]");
    let mut ids = Vec::with_capacity(seq_len);
    ids.push(CLS_ID);
    ids.extend(words(text).take(seq_len - 2).map(|w| vocab.id(&w).unwrap_or(UNK_ID)));
    ids.push(SEP_ID);
    let true_length = ids.len();
    ids.resize(seq_len, PAD_ID);
    TokenSequence { ids, true_length }
}

/// Skip-gram training sequences for the token table: vocabulary ids of each
/// abstract without reserved tokens.
pub fn training_sequences<S: AsRef<str>>(abstracts: &[S], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    abstracts
        .iter()
        .map(|t| {
            words(t.as_ref())
                .filter_map(|w| vocab.id(&w))
                .filter(|&id| id > UNK_ID)
                .map(|id| id as usize)
                .collect::<Vec<_>>()
        })
        .filter(|s: &Vec<usize>| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextPretrainConfig {
    pub min_count: usize,
    pub skipgram: SkipGramConfig,
}

impl Default for TextPretrainConfig {
    fn default() -> Self {
        TextPretrainConfig {
            min_count: 5,
            skipgram: SkipGramConfig { dimension: 512, window: 5, ..SkipGramConfig::default() },
        }
    }
}

/// Trains one vector per vocabulary id. The `[PAD]` row is zero.
pub fn pretrain_token_embeddings<S: AsRef<str>>(
    abstracts: &[S],
    vocab: &Vocabulary,
    config: &SkipGramConfig,
) -> Result<EmbeddingTable> {
    let sequences = training_sequences(abstracts, vocab);
    let mut vectors = train_skipgram(&sequences, vocab.len(), config)?;
    vectors.row_mut(PAD_ID as usize).fill(0.0);
    EmbeddingTable::new(vocab.tokens().to_vec(), vectors)
}
