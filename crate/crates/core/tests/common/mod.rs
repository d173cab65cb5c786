//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use landscaper::corpus::{CodeFamily, PatentRecord};
use landscaper::nn::{Classifier, CodeInputs, EncoderConfig, Example, Gradients, Graph, ModelConfig, ModelVariant};
use landscaper::searchdsl::QueryAst;
use landscaper::textenc::TokenSequence;
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Regex for one term over lowercased ASCII text: the term must start a
/// token, and for exact terms also end it. Token characters are ASCII
/// alphanumerics and `-`.
pub fn term_regex(text: &str, prefix: bool) -> Regex {
    let tail = if prefix { "[a-z0-9-]*" } else { "" };
    Regex::new(&format!("(?:^|[^a-z0-9-]){}{tail}(?:$|[^a-z0-9-])", regex::escape(text))).unwrap()
}

pub fn regex_eval(ast: &QueryAst, doc: &str) -> bool {
    let lower = doc.to_ascii_lowercase();
    fn go(ast: &QueryAst, doc: &str) -> bool {
        match ast {
            QueryAst::Term { text, prefix } => term_regex(text, *prefix).is_match(doc),
            QueryAst::And(c) => c.iter().all(|x| go(x, doc)),
            QueryAst::Or(c) => c.iter().any(|x| go(x, doc)),
        }
    }
    go(ast, &lower)
}

pub const TERM_POOL: [&str; 16] = [
    "virtual",
    "augment",
    "real",
    "ocean",
    "ship",
    "off-shore",
    "dock",
    "fpso",
    "drill",
    "float",
    "aero",
    "bridge",
    "vehicle",
    "marine",
    "plant",
    "space",
];

pub fn random_ast(rng: &mut impl Rng, depth: u32) -> QueryAst {
    if depth == 0 || rng.gen_bool(0.35) {
        let t = TERM_POOL.choose(rng).unwrap();
        return QueryAst::term(t, rng.gen_bool(0.5));
    }
    let n = rng.gen_range(2..=4);
    let children = (0..n).map(|_| random_ast(rng, depth - 1)).collect();
    if rng.gen_bool(0.5) {
        QueryAst::And(children)
    } else {
        QueryAst::Or(children)
    }
}

/// Text mixing pool terms, suffixed variants, near misses, and assorted
/// separators and letter case.
pub fn random_doc(rng: &mut impl Rng) -> String {
    const SUFFIX: [&str; 6] = ["", "", "ed", "ing", "s", "-based"];
    const FILLER: [&str; 8] = ["the", "system", "xship", "reality", "boat", "unreal", "a", "platforms"];
    const SEP: [&str; 7] = [" ", " ", ", ", ". ", "/", "(", ") "];
    let n = rng.gen_range(0..14);
    let mut out = String::new();
    for _ in 0..n {
        let word = if rng.gen_bool(0.5) {
            format!("{}{}", TERM_POOL.choose(rng).unwrap(), SUFFIX.choose(rng).unwrap())
        } else {
            FILLER.choose(rng).unwrap().to_string()
        };
        let word = if rng.gen_bool(0.2) { word.to_uppercase() } else { word };
        out.push_str(&word);
        out.push_str(SEP.choose(rng).unwrap());
    }
    out
}

/// AP by sweeping every distinct score as a threshold and integrating
/// precision over recall steps.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let total = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let precision = tp / predicted.len() as f64;
        let recall = tp / total;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

pub fn brute_f1(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let mut tp = 0.0;
    let mut predicted = 0.0;
    let mut actual = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            predicted += 1.0;
            if l {
                tp += 1.0;
            }
        }
        if l {
            actual += 1.0;
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / predicted, tp / actual);
    2.0 * p * r / (p + r)
}

/// Unordered code pairs with the number of patents carrying both.
pub fn brute_pairs(patents: &[PatentRecord], family: CodeFamily) -> BTreeMap<(String, String), u32> {
    let mut out = BTreeMap::new();
    for p in patents {
        let codes = p.codes(family);
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                if codes[i] < codes[j] && !codes[..j].contains(&codes[j]) && !codes[..i].contains(&codes[i]) {
                    *out.entry((codes[i].clone(), codes[j].clone())).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

pub fn record(id: &str, cpc: &[&str]) -> PatentRecord {
    PatentRecord {
        id: id.to_string(),
        title: String::new(),
        abstract_text: format!("abstract of {id}"),
        ipc: Vec::new(),
        cpc: cpc.iter().map(|s| s.to_string()).collect(),
        uspc: Vec::new(),
        valid: false,
        publication_date: None,
    }
}

/// 2 layers, 2 heads, hidden 8, sequence length 6, all code branches.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { layers: 2, heads: 2, hidden: 8, feed_forward: 16, seq_len: 6, dropout: 0.0 },
        code_dim: 4,
        cpc_out: 8,
        ipc_out: 4,
        uspc_out: 4,
        head_hidden: 8,
        variant: ModelVariant::Combined,
    }
}

pub struct GradientCheck {
    /// Largest relative error over all parameter entries.
    pub worst: f64,
    /// Worst entry as `name[row,col]`.
    pub worst_at: String,
    pub entries: usize,
    /// Analytic gradients, parameters in store order, flattened.
    pub analytic: Vec<f64>,
}

fn total_loss(model: &Classifier, batch: &[Example]) -> f64 {
    let mut g = Graph::new(model.params());
    batch
        .iter()
        .map(|ex| {
            let l = model.loss(&mut g, ex, 2.0, None).unwrap();
            g.value(l)[[0, 0]]
        })
        .sum()
}

/// Central differences (step 1e-5) against the tape's gradients for every
/// parameter entry of the tiny model on a positive and a negative example.
/// The relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn tiny_gradient_check(seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vec = |n| Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
    let batch = vec![
        Example {
            tokens: TokenSequence { ids: vec![1, 4, 7, 9, 2, 0], true_length: 5 },
            codes: CodeInputs { cpc: vec(4), ipc: vec(4), uspc: vec(4) },
            label: 1.0,
        },
        Example {
            tokens: TokenSequence { ids: vec![1, 5, 2, 0, 0, 0], true_length: 3 },
            codes: CodeInputs { cpc: vec(4), ipc: vec(4), uspc: vec(4) },
            label: 0.0,
        },
    ];
    let mut model = Classifier::new(tiny_model_config(), 10, seed).unwrap();
    // break the symmetric initial state of norms and biases; the PAD row of
    // the token table stays pinned at zero
    for id in model.params().ids().collect::<Vec<_>>() {
        let pinned = model.params().name(id) == "token_embedding";
        let v = model.params_mut().value_mut(id);
        for (i, x) in v.iter_mut().enumerate() {
            if !(pinned && i < 8) {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
    }

    let mut grads = Gradients::empty(model.params().len());
    for ex in &batch {
        let mut g = Graph::new(model.params());
        let l = model.loss(&mut g, ex, 2.0, None).unwrap();
        grads.accumulate(g.backward(l).unwrap());
    }

    let h = 1e-5;
    let mut out = GradientCheck { worst: 0.0, worst_at: String::new(), entries: 0, analytic: Vec::new() };
    for id in model.params().ids().collect::<Vec<_>>() {
        let analytic = grads.dense_for(id, model.params().value(id));
        let name = model.params().name(id).to_string();
        for r in 0..analytic.nrows() {
            for c in 0..analytic.ncols() {
                let orig = model.params().value(id)[[r, c]];
                model.params_mut().value_mut(id)[[r, c]] = orig + h;
                let plus = total_loss(&model, &batch);
                model.params_mut().value_mut(id)[[r, c]] = orig - h;
                let minus = total_loss(&model, &batch);
                model.params_mut().value_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[[r, c]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                if rel > out.worst {
                    out.worst = rel;
                    out.worst_at = format!("{name}[{r},{c}]");
                }
                out.entries += 1;
                out.analytic.push(a);
            }
        }
    }
    out
}
