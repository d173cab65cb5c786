use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusCodeStats, PatentRecord};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Minimum share of valid patents that must carry a code.
    pub valid_freq_threshold: f64,
    /// Minimum ratio of valid-set share to corpus share.
    pub emergence_ratio_threshold: f64,
    /// Negatives for train, validation, test.
    pub negatives_per_split: [usize; 3],
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            valid_freq_threshold: 0.005,
            emergence_ratio_threshold: 50.0,
            negatives_per_split: [50_000, 10_000, 10_000],
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.valid_freq_threshold > 0.0 && self.emergence_ratio_threshold > 0.0) {
            return Err(Error::InvalidConfig("sampling thresholds must be positive".into()));
        }
        if self.negatives_per_split.contains(&0) {
            return Err(Error::InvalidConfig("negative counts must be positive".into()));
        }
        Ok(())
    }
}

/// Three record lists in train, validation, test order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitLists {
    pub train: Vec<PatentRecord>,
    pub validation: Vec<PatentRecord>,
    pub test: Vec<PatentRecord>,
}

impl SplitLists {
    pub fn parts(&self) -> [&Vec<PatentRecord>; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

/// Train/validation/test sets with the positive count of each.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PatentRecord>,
    pub validation: Vec<PatentRecord>,
    pub test: Vec<PatentRecord>,
    pub positives: [usize; 3],
}

impl DatasetSplit {
    pub fn new(train: Vec<PatentRecord>, validation: Vec<PatentRecord>, test: Vec<PatentRecord>) -> Self {
        let count = |v: &[PatentRecord]| v.iter().filter(|r| r.valid).count();
        let positives = [count(&train), count(&validation), count(&test)];
        DatasetSplit { train, validation, test, positives }
    }

    pub fn parts(&self) -> [&Vec<PatentRecord>; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

/// Sizes of a 6:2:2 split of `n` items: floor for train, nearest for
/// validation, remainder for test. Reproduces 468 → 280/94/94 and
/// 927 → 556/185/186.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = n * 6 / 10;
    // round(n / 5); n / 5 is never exactly half-integral
    let validation = (2 * n + 5) / 10;
    [train, validation, n - train - validation]
}

/// Shuffles the valid patents with `seed` and cuts them 6:2:2.
pub fn split_valid(valid: &[PatentRecord], seed: u64) -> Result<SplitLists> {
    if valid.len() < 3 {
        return Err(Error::TooFewValid(valid.len()));
    }
    if let Some(r) = valid.iter().find(|r| !r.valid) {
        return Err(Error::InvalidInput(format!("record `{}` is not a valid patent", r.id)));
    }
    let mut shuffled = valid.to_vec();
    shuffled.shuffle(&mut seeded(seed, &[0x59117]));
    let [train, validation, _] = split_sizes(shuffled.len());
    let test = shuffled.split_off(train + validation);
    let validation = shuffled.split_off(train);
    Ok(SplitLists { train: shuffled, validation, test })
}

/// Codes over-represented among valid patents relative to the corpus.
///
/// A code qualifies when its valid-set share reaches
/// `valid_freq_threshold` and that share is at least
/// `emergence_ratio_threshold` times its corpus share. Codes missing from the
/// corpus statistics are given the smallest observable share,
/// `1 / total_patents`.
pub fn important_codes(
    valid_stats: &CorpusCodeStats,
    corpus_stats: &CorpusCodeStats,
    config: &SamplingConfig,
) -> Result<BTreeSet<String>> {
    if valid_stats.family != corpus_stats.family {
        return Err(Error::FamilyMismatch { valid: valid_stats.family, corpus: corpus_stats.family });
    }
    config.validate()?;
    let floor = 1.0 / corpus_stats.total_patents.max(1) as f64;
    let mut out = BTreeSet::new();
    for (code, &count) in &valid_stats.doc_frequency {
        let valid_ratio = count as f64 / valid_stats.total_patents as f64;
        if valid_ratio < config.valid_freq_threshold {
            continue;
        }
        let corpus_ratio = corpus_stats.ratio(code).unwrap_or(floor);
        if valid_ratio / corpus_ratio >= config.emergence_ratio_threshold {
            out.insert(code.clone());
        }
    }
    Ok(out)
}

/// Draws negatives from a record stream, keeping only records whose CPC list
/// shares nothing with `important`.
///
/// Candidates go through a reservoir of the total requested size, so the
/// stream is consumed once and memory stays bounded by the sample. Records
/// marked valid are never candidates.
pub fn sample_negatives<I>(retrieved: I, important: &BTreeSet<String>, config: &SamplingConfig) -> Result<SplitLists>
where
    I: IntoIterator<Item = PatentRecord>,
{
    config.validate()?;
    if important.is_empty() {
        return Err(Error::InvalidInput("important code set is empty".into()));
    }
    let [n_train, n_val, n_test] = config.negatives_per_split;
    let wanted = n_train + n_val + n_test;
    let mut rng = seeded(config.seed, &[0xE6A7]);
    let mut reservoir: Vec<PatentRecord> = Vec::with_capacity(wanted);
    let mut pool = 0usize;
    for record in retrieved {
        if record.valid || record.cpc.iter().any(|c| important.contains(c)) {
            continue;
        }
        if reservoir.len() < wanted {
            reservoir.push(record);
        } else {
            let j = rng.gen_range(0..=pool);
            if j < wanted {
                reservoir[j] = record;
            }
        }
        pool += 1;
    }
    if pool < wanted {
        return Err(Error::InsufficientPool { pool, requested: wanted });
    }
    reservoir.shuffle(&mut rng);
    let test = reservoir.split_off(n_train + n_val);
    let validation = reservoir.split_off(n_train);
    Ok(SplitLists { train: reservoir, validation, test })
}

/// Merges positives and negatives split by split and shuffles each split.
pub fn assemble_dataset(valid: SplitLists, negatives: SplitLists, seed: u64) -> Result<DatasetSplit> {
    let mut seen = HashSet::new();
    for record in valid.parts().into_iter().chain(negatives.parts()).flatten() {
        if !seen.insert(record.id.as_str()) {
            return Err(Error::IdCollision(record.id.clone()));
        }
    }
    drop(seen);
    let merge = |mut pos: Vec<PatentRecord>, neg: Vec<PatentRecord>, stream: u64| {
        pos.extend(neg);
        pos.shuffle(&mut seeded(seed, &[0xA55E, stream]));
        pos
    };
    Ok(DatasetSplit::new(
        merge(valid.train, negatives.train, 0),
        merge(valid.validation, negatives.validation, 1),
        merge(valid.test, negatives.test, 2),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{code_doc_frequency, CodeFamily};
    use std::collections::BTreeMap;

    fn rec(id: usize, valid: bool, cpc: &[&str]) -> PatentRecord {
        PatentRecord {
            id: format!("P{id}"),
            title: String::new(),
            abstract_text: "a".into(),
            ipc: vec![],
            cpc: cpc.iter().map(|s| s.to_string()).collect(),
            uspc: vec![],
            valid,
            publication_date: None,
        }
    }

    fn valid_set(n: usize) -> Vec<PatentRecord> {
        (0..n).map(|i| rec(i, true, &[])).collect()
    }

    fn stats(total: usize, counts: &[(&str, usize)]) -> CorpusCodeStats {
        CorpusCodeStats {
            family: CodeFamily::Cpc,
            total_patents: total,
            doc_frequency: counts.iter().map(|(c, n)| (c.to_string(), *n)).collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn split_sizes_match_sampled_dataset_table() {
        assert_eq!(split_sizes(10), [6, 2, 2]);
        assert_eq!(split_sizes(468), [280, 94, 94]);
        assert_eq!(split_sizes(927), [556, 185, 186]);
        assert_eq!(split_sizes(225), [135, 45, 45]);
        assert_eq!(split_sizes(653), [391, 131, 131]);
    }

    #[test]
    fn split_valid_sizes_and_determinism() {
        let s = split_valid(&valid_set(10), 3).unwrap();
        assert_eq!(s.sizes(), [6, 2, 2]);
        let a = split_valid(&valid_set(468), 9).unwrap();
        assert_eq!(a.sizes(), [280, 94, 94]);
        assert_eq!(a, split_valid(&valid_set(468), 9).unwrap());
        assert_ne!(a, split_valid(&valid_set(468), 10).unwrap());
    }

    #[test]
    fn split_valid_rejects_small_and_invalid() {
        assert!(matches!(split_valid(&valid_set(2), 0), Err(Error::TooFewValid(2))));
        let mut v = valid_set(5);
        v[1].valid = false;
        assert!(split_valid(&v, 0).is_err());
    }

    #[test]
    fn important_code_thresholds() {
        let cfg = SamplingConfig::default();
        // 1% of the valid set, 100x the corpus share
        let valid = stats(1000, &[("A", 10), ("B", 4)]);
        let corpus = stats(1_000_000, &[("A", 100), ("B", 4)]);
        let got = important_codes(&valid, &corpus, &cfg).unwrap();
        // B sits at 0.4% of the valid set despite a 1000x ratio
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec!["A"]);
    }

    #[test]
    fn absent_corpus_code_uses_minimum_share() {
        let cfg = SamplingConfig::default();
        let valid = stats(100, &[("N", 1)]);
        let corpus = stats(10_000, &[]);
        assert!(important_codes(&valid, &corpus, &cfg).unwrap().contains("N"));
    }

    #[test]
    fn family_mismatch_rejected() {
        let mut corpus = stats(10, &[]);
        corpus.family = CodeFamily::Ipc;
        assert!(matches!(
            important_codes(&stats(10, &[]), &corpus, &SamplingConfig::default()),
            Err(Error::FamilyMismatch { .. })
        ));
    }

    #[test]
    fn insufficient_pool_reports_size() {
        let important: BTreeSet<String> = ["X".to_string()].into();
        let stream = (0..20).map(|i| rec(i, false, &["X"]));
        let cfg = SamplingConfig { negatives_per_split: [3, 1, 1], ..Default::default() };
        match sample_negatives(stream, &important, &cfg) {
            Err(Error::InsufficientPool { pool, requested }) => {
                assert_eq!((pool, requested), (0, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_is_sound_disjoint_and_deterministic() {
        let important: BTreeSet<String> = ["X".to_string()].into();
        let stream: Vec<_> = (0..500).map(|i| rec(i, false, if i % 3 == 0 { &["X", "Y"] } else { &["Y"] })).collect();
        let cfg = SamplingConfig { negatives_per_split: [60, 20, 20], seed: 4, ..Default::default() };
        let a = sample_negatives(stream.clone(), &important, &cfg).unwrap();
        assert_eq!(a.sizes(), [60, 20, 20]);
        let mut ids = HashSet::new();
        for r in a.parts().into_iter().flatten() {
            assert!(!r.cpc.contains(&"X".to_string()));
            assert!(ids.insert(r.id.clone()));
        }
        assert_eq!(a, sample_negatives(stream, &important, &cfg).unwrap());
    }

    #[test]
    fn assemble_counts_and_collisions() {
        let valid = split_valid(&valid_set(10), 1).unwrap();
        let ds = assemble_dataset(valid.clone(), SplitLists::default(), 1).unwrap();
        assert_eq!(ds.sizes(), [6, 2, 2]);
        assert_eq!(ds.positives, [6, 2, 2]);

        let mut neg = SplitLists::default();
        neg.test.push(rec(3, false, &[]));
        match assemble_dataset(valid, neg, 1) {
            Err(Error::IdCollision(id)) => assert_eq!(id, "P3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn doc_frequency_feeds_important_codes() {
        let valid: Vec<_> = (0..200).map(|i| rec(i, true, if i < 2 { &["Z"] } else { &["Y"] })).collect();
        let corpus: Vec<_> = (0..100_000).map(|i| rec(i, false, if i < 1000 { &["Y"] } else { &[] })).collect();
        let vs = code_doc_frequency(&valid, CodeFamily::Cpc);
        let cs = code_doc_frequency(&corpus, CodeFamily::Cpc);
        let got = important_codes(&vs, &cs, &SamplingConfig::default()).unwrap();
        // Z: 1% of valid, absent from corpus; Y: 99%, ratio 99
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec!["Y", "Z"]);
    }
}
