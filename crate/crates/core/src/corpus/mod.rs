//! Patent records, ingestion, and construction of undersampled datasets.
//!
//! A dataset is built in four steps: split the expert-validated patents
//! 6:2:2, find the CPC codes that are over-represented among them, draw
//! negatives from the retrieved set that carry none of those codes, and merge
//! both sides per split.

mod io;
mod sampling;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use io::{
    load_corpus, read_dataset, read_records, write_dataset, write_records, DatasetManifest, IngestPolicy, RecordFormat,
};
pub use sampling::{
    assemble_dataset, important_codes, sample_negatives, split_sizes, split_valid, DatasetSplit, SamplingConfig,
    SplitLists,
};

/// One patent document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentRecord {
    /// Publication number.
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub ipc: Vec<String>,
    #[serde(default)]
    pub cpc: Vec<String>,
    #[serde(default)]
    pub uspc: Vec<String>,
    /// Expert relevance label; `true` marks a valid patent.
    pub valid: bool,
    #[serde(rename = "date", default, skip_serializing_if = "Option::is_none")]
    pub publication_date: Option<NaiveDate>,
}

impl PatentRecord {
    pub fn codes(&self, family: CodeFamily) -> &[String] {
        match family {
            CodeFamily::Ipc => &self.ipc,
            CodeFamily::Cpc => &self.cpc,
            CodeFamily::Uspc => &self.uspc,
        }
    }

    /// Trims and deduplicates every code list in place, keeping first
    /// occurrences. Empty codes are dropped.
    pub fn normalize_codes(&mut self) {
        for list in [&mut self.ipc, &mut self.cpc, &mut self.uspc] {
            let mut seen = std::collections::HashSet::new();
            let cleaned: Vec<String> = list
                .iter()
                .map(|c| c.trim())
                .filter(|c| !c.is_empty())
                .filter(|c| seen.insert(c.to_string()))
                .map(str::to_string)
                .collect();
            *list = cleaned;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Ipc,
    Cpc,
    Uspc,
}

impl CodeFamily {
    pub const ALL: [CodeFamily; 3] = [CodeFamily::Ipc, CodeFamily::Cpc, CodeFamily::Uspc];

    pub fn name(self) -> &'static str {
        match self {
            CodeFamily::Ipc => "ipc",
            CodeFamily::Cpc => "cpc",
            CodeFamily::Uspc => "uspc",
        }
    }
}

impl std::fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CodeFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipc" => Ok(CodeFamily::Ipc),
            "cpc" => Ok(CodeFamily::Cpc),
            "uspc" => Ok(CodeFamily::Uspc),
            other => Err(crate::Error::InvalidInput(format!("unknown code family `{other}`"))),
        }
    }
}

/// Document frequencies of one code family over a set of patents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCodeStats {
    pub family: CodeFamily,
    pub total_patents: usize,
    pub doc_frequency: BTreeMap<String, usize>,
}

impl CorpusCodeStats {
    /// Share of patents carrying `code`, if it was seen at all.
    pub fn ratio(&self, code: &str) -> Option<f64> {
        self.doc_frequency.get(code).map(|&c| c as f64 / self.total_patents as f64)
    }
}

/// Counts, per code, how many patents contain it (not how often it occurs).
pub fn code_doc_frequency<'a, I>(patents: I, family: CodeFamily) -> CorpusCodeStats
where
    I: IntoIterator<Item = &'a PatentRecord>,
{
    let mut doc_frequency = BTreeMap::new();
    let mut total_patents = 0;
    for patent in patents {
        total_patents += 1;
        let mut codes: Vec<&String> = patent.codes(family).iter().collect();
        codes.sort();
        codes.dedup();
        for code in codes {
            *doc_frequency.entry(code.clone()).or_insert(0) += 1;
        }
    }
    CorpusCodeStats { family, total_patents, doc_frequency }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, cpc: &[&str]) -> PatentRecord {
        PatentRecord {
            id: id.into(),
            title: String::new(),
            abstract_text: "text".into(),
            ipc: vec![],
            cpc: cpc.iter().map(|s| s.to_string()).collect(),
            uspc: vec![],
            valid: false,
            publication_date: None,
        }
    }

    #[test]
    fn doc_frequency_counts_patents() {
        let stats = code_doc_frequency(&[record("1", &["A", "B"])], CodeFamily::Cpc);
        assert_eq!(stats.total_patents, 1);
        assert_eq!(stats.doc_frequency["A"], 1);
        assert_eq!(stats.doc_frequency["B"], 1);

        let stats = code_doc_frequency(&[record("1", &["A", "A"]), record("2", &["A"])], CodeFamily::Cpc);
        assert_eq!(stats.doc_frequency["A"], 2);
    }

    #[test]
    fn doc_frequency_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pool: Vec<String> = (0..15).map(|i| format!("C{i}")).collect();
        let patents: Vec<PatentRecord> = (0..50)
            .map(|i| {
                let k = rng.gen_range(0..6);
                let codes: Vec<&str> = (0..k).map(|_| pool[rng.gen_range(0..pool.len())].as_str()).collect();
                let mut r = record(&i.to_string(), &codes);
                r.normalize_codes();
                r
            })
            .collect();
        let stats = code_doc_frequency(&patents, CodeFamily::Cpc);
        for code in &pool {
            let mut expected = 0;
            for p in &patents {
                if p.cpc.iter().any(|c| c == code) {
                    expected += 1;
                }
            }
            assert_eq!(stats.doc_frequency.get(code).copied().unwrap_or(0), expected);
        }
        assert_eq!(stats.total_patents, 50);
    }

    #[test]
    fn normalize_trims_and_dedups() {
        let mut r = record("x", &[" A ", "B", "A", ""]);
        r.normalize_codes();
        assert_eq!(r.cpc, vec!["A", "B"]);
    }

    #[test]
    fn family_parse() {
        assert_eq!("CPC".parse::<CodeFamily>().unwrap(), CodeFamily::Cpc);
        assert!("ecla".parse::<CodeFamily>().is_err());
    }
}
