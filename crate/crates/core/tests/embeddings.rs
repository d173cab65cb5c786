mod common;

use std::collections::{BTreeMap, HashMap};

use common::{brute_pairs, record};
use landscaper::codegraph::{build_graph, diffuse, euler_sequence, generate_corpus, DiffusionConfig};
use landscaper::corpus::CodeFamily;
use landscaper::skipgram::{mean_cosine, pair_gradients, pair_loss, train_skipgram, SkipGramConfig};
use landscaper::textenc::{build_vocab, pretrain_token_embeddings, training_sequences, words};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn skipgram_gradients_match_finite_differences_on_toy_graph() {
    // 5-node toy graph: a path 0-1-2-3-4 plus the chord 1-3
    let patents = vec![
        record("p1", &["n0", "n1"]),
        record("p2", &["n1", "n2"]),
        record("p3", &["n2", "n3"]),
        record("p4", &["n3", "n4"]),
        record("p5", &["n1", "n3"]),
    ];
    let graph = build_graph(&patents, CodeFamily::Cpc);
    assert_eq!(graph.node_count(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vecs: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    for (a, b, _) in graph.edges() {
        // center vectors in rows 0..5, output vectors in rows 5..10
        let center = vecs[a].clone();
        let context = vecs[5 + b].clone();
        let negs: Vec<Vec<f64>> = (0..5).filter(|&n| n != a && n != b).map(|n| vecs[5 + n].clone()).collect();
        let loss = |c: &[f64], x: &[f64], ns: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
            pair_loss(c, x, &refs)
        };
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let (gc, gx, gn) = pair_gradients(&center, &context, &refs);
        for i in 0..6 {
            let (mut p, mut m) = (center.clone(), center.clone());
            p[i] += h;
            m[i] -= h;
            let num = (loss(&p, &context, &negs) - loss(&m, &context, &negs)) / (2.0 * h);
            assert!(rel(gc[i], num) < 1e-4, "center {a}-{b}[{i}]: {} vs {num}", gc[i]);

            let (mut p, mut m) = (context.clone(), context.clone());
            p[i] += h;
            m[i] -= h;
            let num = (loss(&center, &p, &negs) - loss(&center, &m, &negs)) / (2.0 * h);
            assert!(rel(gx[i], num) < 1e-4, "context {a}-{b}[{i}]: {} vs {num}", gx[i]);

            for k in 0..negs.len() {
                let (mut p, mut m) = (negs.clone(), negs.clone());
                p[k][i] += h;
                m[k][i] -= h;
                let num = (loss(&center, &context, &p) - loss(&center, &context, &m)) / (2.0 * h);
                assert!(rel(gn[k][i], num) < 1e-4, "negative {k}[{i}]: {} vs {num}", gn[k][i]);
            }
        }
    }
}

fn two_cliques() -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let patents = vec![record("a", &["A1", "A2", "A3", "A4", "A5"]), record("b", &["B1", "B2", "B3", "B4", "B5"])];
    let graph = build_graph(&patents, CodeFamily::Cpc);
    let corpus = generate_corpus(&graph, &DiffusionConfig { diffusions_per_node: 40, size: 40, ..Default::default() });
    let ids = |p: &str| -> Vec<usize> { (1..=5).map(|i| graph.node_id(&format!("{p}{i}")).unwrap()).collect() };
    (corpus, ids("A"), ids("B"))
}

fn clique_margin(workers: usize) -> (f64, f64) {
    let (corpus, a, b) = two_cliques();
    let cfg = SkipGramConfig { dimension: 16, window: 5, epochs: 5, workers, seed: 2, ..Default::default() };
    let v = train_skipgram(&corpus, 10, &cfg).unwrap();
    let intra = (mean_cosine(&v, &a, &a) + mean_cosine(&v, &b, &b)) / 2.0;
    (intra, mean_cosine(&v, &a, &b))
}

#[test]
fn disjoint_cliques_separate_single_worker() {
    let (intra, inter) = clique_margin(1);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn disjoint_cliques_separate_with_async_workers() {
    let (intra, inter) = clique_margin(4);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn token_embeddings_separate_topic_clusters() {
    let topic_a = ["hull", "keel", "ballast", "mooring", "deck", "rudder"];
    let topic_b = ["pixel", "lens", "shader", "headset", "render", "display"];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let abstracts: Vec<String> = (0..300)
        .map(|i| {
            let topic = if i % 2 == 0 { &topic_a } else { &topic_b };
            (0..12).map(|_| *topic.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let vocab = build_vocab(&abstracts, 1).unwrap();
    let cfg = SkipGramConfig { dimension: 16, window: 5, epochs: 3, seed: 4, ..Default::default() };
    let table = pretrain_token_embeddings(&abstracts, &vocab, &cfg).unwrap();
    let ids = |ws: &[&str]| -> Vec<usize> { ws.iter().map(|w| vocab.id(w).unwrap() as usize).collect() };
    let (a, b) = (ids(&topic_a), ids(&topic_b));
    let v = table.vectors();
    let intra = (mean_cosine(v, &a, &a) + mean_cosine(v, &b, &b)) / 2.0;
    let inter = mean_cosine(v, &a, &b);
    assert!(intra > inter, "intra {intra} inter {inter}");
    assert!(v.row(0).iter().all(|&x| x == 0.0));
}

#[test]
fn vocabulary_matches_counting_oracle() {
    let abstracts = [
        "An augmented reality display for ships.",
        "Reality capture of ship hulls; augmented inspection.",
        "Display of AR content on an offshore platform display.",
        "Ship-to-ship transfer system.",
    ];
    for min_count in 1..=3 {
        let vocab = build_vocab(&abstracts, min_count).unwrap();
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for a in &abstracts {
            let lower = a.to_lowercase();
            for w in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                *freq.entry(w.to_string()).or_default() += 1;
            }
        }
        let mut expected: Vec<&String> = freq.iter().filter(|(_, &c)| c >= min_count).map(|(w, _)| w).collect();
        expected.sort();
        let mut got: Vec<&String> = vocab.tokens()[4..].iter().collect();
        got.sort();
        assert_eq!(got, expected, "min_count {min_count}");
        assert_eq!(&vocab.tokens()[..4], &["[PAD]", "[CLS]", "[SEP]", "[UNK]"]);
    }
    let vocab = build_vocab(&abstracts, 2).unwrap();
    for seq in training_sequences(&abstracts, &vocab) {
        assert!(seq.iter().all(|&id| id > 3));
    }
    assert_eq!(words("Ship-to-ship").collect::<Vec<_>>(), ["ship", "to", "ship"]);
}

fn random_patents(rng: &mut ChaCha8Rng, n: usize) -> Vec<landscaper::corpus::PatentRecord> {
    let pool: Vec<String> = (0..12).map(|i| format!("G06F{i}/00")).collect();
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=5);
            // duplicates inside one record must count once
            let codes: Vec<&str> = (0..k).map(|_| pool.choose(rng).unwrap().as_str()).collect();
            record(&format!("p{i}"), &codes)
        })
        .collect()
}

#[test]
fn cooccurrence_weights_match_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let patents = random_patents(&mut rng, 20);
        let graph = build_graph(&patents, CodeFamily::Cpc);
        let oracle = brute_pairs(&patents, CodeFamily::Cpc);
        let mut got = BTreeMap::new();
        for (a, b, w) in graph.edges() {
            let (x, y) = (graph.nodes()[a].clone(), graph.nodes()[b].clone());
            assert_eq!(graph.weight(a, b), graph.weight(b, a));
            got.insert(if x < y { (x, y) } else { (y, x) }, w);
        }
        assert_eq!(got, oracle);
        let total: u32 = graph.edges().map(|(_, _, w)| w).sum();
        let expected: usize = patents
            .iter()
            .map(|p| {
                let mut c = p.cpc.clone();
                c.sort();
                c.dedup();
                c.len() * (c.len() - 1) / 2
            })
            .sum();
        assert_eq!(total as usize, expected);
        let mut codes: Vec<&String> = patents.iter().flat_map(|p| &p.cpc).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(graph.nodes().iter().collect::<Vec<_>>(), codes);
    }
}

#[test]
fn diffusion_and_euler_invariants_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..15);
        let patents = random_patents(&mut rng, n);
        let graph = build_graph(&patents, CodeFamily::Cpc);
        let root = rng.gen_range(0..graph.node_count());
        let size = rng.gen_range(1..12);
        let tree = diffuse(&graph, root, size, rng.gen_bool(0.3), &mut rng).unwrap();

        // reachable set by BFS
        let mut seen = vec![root];
        let mut i = 0;
        while i < seen.len() {
            for &(n, _) in graph.neighbors(seen[i]) {
                if !seen.contains(&n) {
                    seen.push(n);
                }
            }
            i += 1;
        }
        assert_eq!(tree.len(), size.min(seen.len()));
        assert_eq!(tree.root(), root);
        for (k, p) in tree.parents.iter().enumerate().skip(1) {
            let p = p.expect("non-root has a parent");
            let at = tree.nodes.iter().position(|&n| n == p).unwrap();
            assert!(at < k);
            assert!(graph.weight(p, tree.nodes[k]) > 0);
        }

        let seq = euler_sequence(&tree);
        assert_eq!(seq.len(), 2 * (tree.len() - 1) + 1);
        assert_eq!(seq.first(), Some(&root));
        assert_eq!(seq.last(), Some(&root));
        let mut traversals: HashMap<(usize, usize), usize> = HashMap::new();
        for w in seq.windows(2) {
            *traversals.entry((w[0], w[1])).or_default() += 1;
        }
        for (k, p) in tree.parents.iter().enumerate().skip(1) {
            let (p, c) = (p.unwrap(), tree.nodes[k]);
            assert_eq!(traversals.get(&(p, c)), Some(&1));
            assert_eq!(traversals.get(&(c, p)), Some(&1));
        }
        assert_eq!(traversals.values().sum::<usize>(), 2 * (tree.len() - 1));
    }
}

#[test]
fn corpus_generation_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graph = build_graph(&random_patents(&mut rng, 15), CodeFamily::Cpc);
    let cfg = DiffusionConfig { seed: 17, ..Default::default() };
    let a = generate_corpus(&graph, &cfg);
    assert_eq!(a, generate_corpus(&graph, &cfg));
    assert_eq!(a.len(), 10 * graph.node_count());
    assert_ne!(a, generate_corpus(&graph, &DiffusionConfig { seed: 18, ..cfg }));
}
