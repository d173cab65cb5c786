use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use landscaper::codegraph::{build_graph, train_code_embeddings};
use landscaper::corpus::{
    assemble_dataset, code_doc_frequency, important_codes, load_corpus, read_dataset, read_records, sample_negatives,
    split_valid, write_dataset, write_records, CodeFamily, DatasetManifest, DatasetSplit, IngestPolicy, PatentRecord,
    RecordFormat,
};
use landscaper::embedding::EmbeddingTable;
use landscaper::nn::ModelVariant;
use landscaper::pipeline::{evaluate, score_records, train_with_progress, write_history, CodeTables, ModelBundle};
use landscaper::searchdsl::{emit_sql, eval_query, parse_query, TargetField};
use landscaper::synth::{generate, SynthConfig};
use landscaper::textenc::{build_vocab, pretrain_token_embeddings, Vocabulary};
use serde_json::json;

use crate::config::RunConfig;
use crate::rundir::{Prepared, RunDir};
use crate::{Cli, Command, DataError, GlobalArgs, UsageError};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    apply_globals(&mut cfg, &cli.global);
    match cli.command {
        Command::Ingest(a) => ingest(cfg, &cli.global, a),
        Command::Filter(a) => filter(cfg, &cli.global, a),
        Command::ConvertQuery(a) => convert_query(cfg, a),
        Command::BuildDataset(a) => build_dataset(cfg, &cli.global, a),
        Command::PretrainCodes(a) => pretrain_codes(cfg, &cli.global, a),
        Command::PretrainText(a) => pretrain_text(cfg, &cli.global, a),
        Command::Train(a) => train(cfg, &cli.global, a),
        Command::Evaluate(a) => evaluate_cmd(cfg, &cli.global, a),
        Command::Predict(a) => predict(cfg, &cli.global, a),
        Command::Synth(a) => synth(cfg, &cli.global, a),
    }
}

fn apply_globals(cfg: &mut RunConfig, g: &GlobalArgs) {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    if let Some(o) = &g.output_dir {
        cfg.output_dir = o.display().to_string();
    }
}

/// Validates the final configuration and opens the run directory. Returns
/// `None` when an identical finished run already exists.
fn start(
    command: &str,
    args: &impl std::fmt::Debug,
    mut cfg: RunConfig,
    g: &GlobalArgs,
    inputs: &[&Path],
) -> anyhow::Result<Option<(RunDir, RunConfig)>> {
    cfg.propagate_globals();
    cfg.validate()?;
    match RunDir::prepare(command, &format!("{args:?}"), &cfg, g.run_dir.as_deref(), inputs, g.force)? {
        Prepared::UpToDate(path) => {
            eprintln!("{command}: {} is up to date", path.display());
            println!("{}", path.display());
            Ok(None)
        }
        Prepared::Fresh(dir) => Ok(Some((dir, cfg))),
    }
}

fn finish(dir: RunDir, summary: serde_json::Value) -> anyhow::Result<()> {
    let path = dir.finish(summary)?;
    println!("{}", path.display());
    Ok(())
}

fn record_format(path: &Path, explicit: Option<&str>) -> anyhow::Result<RecordFormat> {
    match explicit {
        Some(f) => f.parse().map_err(|e: landscaper::Error| UsageError(e.to_string()).into()),
        None => Ok(RecordFormat::from_path(path)),
    }
}

fn read_query(path: &Path) -> anyhow::Result<landscaper::searchdsl::QueryAst> {
    let text =
        std::fs::read_to_string(path).map_err(|e| DataError(format!("cannot read query {}: {e}", path.display())))?;
    parse_query(text.trim()).map_err(|e| DataError(format!("{}: {e}", path.display())).into())
}

fn ingest(mut cfg: RunConfig, g: &GlobalArgs, a: crate::IngestArgs) -> anyhow::Result<()> {
    if a.keep_empty_abstracts {
        cfg.ingest.keep_empty_abstracts = true;
    }
    let format = record_format(&a.input, a.format.as_deref())?;
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.valid_list.as_deref());
    let Some((dir, cfg)) = start("ingest", &a, cfg, g, &inputs)? else {
        return Ok(());
    };
    let mut records = load_corpus(&a.input, format, cfg.ingest)?;
    if let Some(list) = &a.valid_list {
        let text =
            std::fs::read_to_string(list).map_err(|e| DataError(format!("cannot read {}: {e}", list.display())))?;
        let ids: HashSet<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let known: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        if let Some(missing) = ids.iter().find(|id| !known.contains(*id)) {
            return Err(DataError(format!("valid id `{missing}` is not in {}", a.input.display())).into());
        }
        for r in &mut records {
            r.valid = ids.contains(r.id.as_str());
        }
    }
    write_records(&dir.file("records.jsonl"), &records)?;
    let distinct = |f: CodeFamily| code_doc_frequency(records.iter(), f).doc_frequency.len();
    let summary = json!({
        "records": records.len(),
        "valid": records.iter().filter(|r| r.valid).count(),
        "distinct_codes": { "ipc": distinct(CodeFamily::Ipc), "cpc": distinct(CodeFamily::Cpc), "uspc": distinct(CodeFamily::Uspc) },
    });
    eprintln!("ingest: {summary}");
    finish(dir, summary)
}

/// Text a formula is evaluated against. Local records carry no description,
/// so `description` falls back to title plus abstract.
fn field_text(r: &PatentRecord, field: TargetField) -> String {
    match field {
        TargetField::Title => r.title.clone(),
        TargetField::Abstract => r.abstract_text.clone(),
        TargetField::Description => format!("{}\n{}", r.title, r.abstract_text),
    }
}

fn filter(mut cfg: RunConfig, g: &GlobalArgs, a: crate::FilterArgs) -> anyhow::Result<()> {
    if let Some(f) = a.field {
        cfg.query.field = f;
    }
    let format = record_format(&a.input, a.format.as_deref())?;
    let ast = read_query(&a.query)?;
    let Some((dir, cfg)) = start("filter", &a, cfg, g, &[&a.query, &a.input])? else {
        return Ok(());
    };
    let records = load_corpus(&a.input, format, IngestPolicy { keep_empty_abstracts: true })?;
    let field = cfg.query.field;
    let matched: Vec<PatentRecord> =
        records.iter().filter(|r| eval_query(&ast, &field_text(r, field), field)).cloned().collect();
    write_records(&dir.file("matched.jsonl"), &matched)?;
    let summary = json!({ "records": records.len(), "matched": matched.len(), "field": field });
    eprintln!("filter: {} of {} records match", matched.len(), records.len());
    finish(dir, summary)
}

fn convert_query(mut cfg: RunConfig, a: crate::ConvertQueryArgs) -> anyhow::Result<()> {
    if let Some(f) = a.field {
        cfg.query.field = f;
    }
    let ast = read_query(&a.query)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", emit_sql(&ast, cfg.query.field))?;
    Ok(())
}

fn build_dataset(mut cfg: RunConfig, g: &GlobalArgs, a: crate::BuildDatasetArgs) -> anyhow::Result<()> {
    if let Some(v) = a.valid_freq {
        cfg.sampling.valid_freq_threshold = v;
    }
    if let Some(v) = a.emergence_ratio {
        cfg.sampling.emergence_ratio_threshold = v;
    }
    if let Some(n) = a.negatives {
        cfg.sampling.negatives_per_split = n;
    }
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.reference.iter().map(PathBuf::as_path));
    let Some((dir, mut cfg)) = start("build-dataset", &a, cfg, g, &inputs)? else {
        return Ok(());
    };
    let retrieved = read_any(&a.input)?;
    let mut reference = Vec::new();
    for path in &a.reference {
        reference.extend(read_any(path)?);
    }
    let valid: Vec<PatentRecord> = retrieved.iter().filter(|r| r.valid).cloned().collect();
    let valid_stats = code_doc_frequency(valid.iter(), CodeFamily::Cpc);
    let corpus_stats = code_doc_frequency(retrieved.iter().chain(&reference), CodeFamily::Cpc);
    let important = important_codes(&valid_stats, &corpus_stats, &cfg.sampling)?;
    if important.is_empty() {
        return Err(DataError(
            "no CPC code passes the importance thresholds; lower --valid-freq or --emergence-ratio".into(),
        )
        .into());
    }
    let pool = retrieved.iter().filter(|r| !r.valid && !r.cpc.iter().any(|c| important.contains(c))).count();
    if a.all_negatives {
        let validation = pool / 5;
        if validation == 0 {
            return Err(DataError(format!("only {pool} eligible negatives")).into());
        }
        cfg.sampling.negatives_per_split = [pool - 2 * validation, validation, validation];
    }
    let negatives = sample_negatives(retrieved.iter().cloned(), &important, &cfg.sampling)?;
    let positives = split_valid(&valid, cfg.seed)?;
    let split = assemble_dataset(positives, negatives, cfg.seed)?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        valid_freq_threshold: cfg.sampling.valid_freq_threshold,
        emergence_ratio_threshold: cfg.sampling.emergence_ratio_threshold,
        negatives_per_split: cfg.sampling.negatives_per_split,
        counts: split.sizes(),
        positives: split.positives,
        valid_distinct_codes: valid_stats.doc_frequency.len(),
        candidate_pool: pool,
        important_codes: important.into_iter().collect(),
    };
    write_dataset(&dir.file("dataset"), &split, &manifest)?;
    eprintln!(
        "build-dataset: sizes {:?}, positives {:?}, {} important CPCs of {} in valid patents",
        manifest.counts,
        manifest.positives,
        manifest.important_codes.len(),
        manifest.valid_distinct_codes
    );
    finish(dir, serde_json::to_value(&manifest)?)
}

/// Records from a file in any supported format, or a run directory's
/// `records.jsonl`/`matched.jsonl`.
fn read_any(path: &Path) -> anyhow::Result<Vec<PatentRecord>> {
    if path.is_dir() {
        for name in ["records.jsonl", "matched.jsonl"] {
            if path.join(name).exists() {
                return Ok(read_records(&path.join(name))?);
            }
        }
        return Err(DataError(format!("{} holds no record file", path.display())).into());
    }
    Ok(load_corpus(path, RecordFormat::from_path(path), IngestPolicy { keep_empty_abstracts: true })?)
}

/// A dataset given either as its own directory or as a `build-dataset` run.
fn dataset_dir(path: &Path) -> PathBuf {
    if path.join("dataset").join("manifest.json").exists() {
        path.join("dataset")
    } else {
        path.to_path_buf()
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<DatasetSplit> {
    let dir = dataset_dir(path);
    if !dir.join("manifest.json").exists() {
        return Err(DataError(format!("{} is not a dataset directory", path.display())).into());
    }
    Ok(read_dataset(&dir)?.0)
}

const FAMILY_FILES: [(CodeFamily, &str); 3] =
    [(CodeFamily::Cpc, "cpc"), (CodeFamily::Ipc, "ipc"), (CodeFamily::Uspc, "uspc")];

fn pretrain_codes(mut cfg: RunConfig, g: &GlobalArgs, a: crate::PretrainCodesArgs) -> anyhow::Result<()> {
    if let Some(d) = a.dimension {
        cfg.codes.skipgram.dimension = d;
        cfg.model.code_dim = d;
    }
    if let Some(e) = a.epochs {
        cfg.codes.skipgram.epochs = e;
    }
    let source = a.dataset.as_deref().or(a.input.as_deref()).expect("clap requires one source");
    let Some((dir, cfg)) = start("pretrain-codes", &a, cfg, g, &[source])? else {
        return Ok(());
    };
    let records: Vec<PatentRecord> = match &a.dataset {
        Some(d) => load_dataset(d)?.parts().into_iter().flatten().cloned().collect(),
        None => read_any(source)?,
    };
    let mut summary = serde_json::Map::new();
    for (family, name) in FAMILY_FILES {
        let graph = build_graph(&records, family);
        graph.write_edge_list(&dir.file(&format!("{name}.edges")))?;
        if graph.node_count() == 0 {
            return Err(DataError(format!("no {name} codes in the input records")).into());
        }
        let table = train_code_embeddings(&graph, &cfg.codes)?;
        table.write_text(&dir.file(&format!("{name}.emb")))?;
        eprintln!("pretrain-codes: {name} graph {} nodes, {} edges", graph.node_count(), graph.edge_count());
        summary.insert(name.into(), json!({ "nodes": graph.node_count(), "edges": graph.edge_count() }));
    }
    finish(dir, summary.into())
}

fn pretrain_text(mut cfg: RunConfig, g: &GlobalArgs, a: crate::PretrainTextArgs) -> anyhow::Result<()> {
    if let Some(d) = a.dimension {
        cfg.text.skipgram.dimension = d;
        cfg.model.encoder.hidden = d;
    }
    if let Some(e) = a.epochs {
        cfg.text.skipgram.epochs = e;
    }
    if let Some(m) = a.min_count {
        cfg.text.min_count = m;
    }
    let Some((dir, cfg)) = start("pretrain-text", &a, cfg, g, &[&a.dataset])? else {
        return Ok(());
    };
    let ds = load_dataset(&a.dataset)?;
    let abstracts: Vec<&str> = ds.train.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&abstracts, cfg.text.min_count)?;
    let table = pretrain_token_embeddings(&abstracts, &vocab, &cfg.text.skipgram)?;
    vocab.write(&dir.file("vocab.txt"))?;
    table.write_text(&dir.file("tokens.emb"))?;
    eprintln!("pretrain-text: vocabulary of {} tokens", vocab.len());
    finish(dir, json!({ "vocabulary": vocab.len(), "dimension": table.dimension() }))
}

fn read_table(path: &Path) -> anyhow::Result<EmbeddingTable> {
    if !path.exists() {
        return Err(DataError(format!("missing embedding table {}", path.display())).into());
    }
    Ok(EmbeddingTable::read_text(path)?)
}

fn train(mut cfg: RunConfig, g: &GlobalArgs, a: crate::TrainArgs) -> anyhow::Result<()> {
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(w) = a.pos_weight {
        cfg.train.pos_weight = w;
    }
    if a.freeze_token_embeddings {
        cfg.train.freeze_token_embeddings = true;
    }
    let variant = cfg.model.variant;
    if variant.uses_codes() && a.codes.is_none() {
        return Err(UsageError(format!("--codes is required for the {variant:?} variant")).into());
    }
    if variant.uses_text() && a.text.is_none() {
        return Err(UsageError(format!("--text is required for the {variant:?} variant")).into());
    }
    let mut inputs = vec![a.dataset.as_path()];
    inputs.extend(a.codes.as_deref());
    inputs.extend(a.text.as_deref());
    let Some((dir, cfg)) = start("train", &a, cfg, g, &inputs)? else {
        return Ok(());
    };
    let ds = load_dataset(&a.dataset)?;
    let codes = match &a.codes {
        Some(c) => CodeTables {
            cpc: read_table(&c.join("cpc.emb"))?,
            ipc: read_table(&c.join("ipc.emb"))?,
            uspc: read_table(&c.join("uspc.emb"))?,
        },
        None => CodeTables::empty(cfg.model.code_dim),
    };
    let (vocab, tokens) = match &a.text {
        Some(t) => {
            let path = t.join("vocab.txt");
            if !path.exists() {
                return Err(DataError(format!("missing vocabulary {}", path.display())).into());
            }
            (Vocabulary::read(&path)?, Some(read_table(&t.join("tokens.emb"))?))
        }
        None => {
            let abstracts: Vec<&str> = ds.train.iter().map(|r| r.abstract_text.as_str()).collect();
            (build_vocab(&abstracts, cfg.text.min_count)?, None)
        }
    };
    let bundle = ModelBundle::new(cfg.model.clone(), vocab, tokens.as_ref(), codes, cfg.seed)?;
    let mut bundle = bundle;
    if variant != ModelVariant::CodesOnly {
        bundle.model.set_token_embeddings_frozen(cfg.train.freeze_token_embeddings);
    }
    let outcome = train_with_progress(&ds, bundle, &cfg.train, |s| {
        eprintln!("train: epoch {} loss {:.6} validation AP {:?}", s.epoch, s.train_loss, s.validation_ap);
    })?;
    outcome.bundle.save(&dir.file("model.ckpt"))?;
    write_history(&dir.file("history.csv"), &outcome.history)?;
    let validation = evaluate(&outcome.bundle, &ds.validation, cfg.evaluate.threshold)?;
    validation.write(&dir.file("validation_report.txt"))?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "validation_average_precision": validation.average_precision,
        "validation_f1": validation.f1,
    });
    eprintln!("train: {summary}");
    finish(dir, summary)
}

/// A model given either as a checkpoint file or as a `train` run.
fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.ckpt")
    } else {
        path.to_path_buf()
    }
}

fn load_bundle(path: &Path) -> anyhow::Result<ModelBundle> {
    let path = model_path(path);
    if !path.exists() {
        return Err(DataError(format!("missing model checkpoint {}", path.display())).into());
    }
    Ok(ModelBundle::load(&path)?)
}

fn evaluate_cmd(mut cfg: RunConfig, g: &GlobalArgs, a: crate::EvaluateArgs) -> anyhow::Result<()> {
    if let Some(t) = a.threshold {
        cfg.evaluate.threshold = t;
    }
    let source = a.dataset.as_deref().or(a.input.as_deref()).expect("clap requires one source");
    let model = model_path(&a.model);
    let Some((dir, cfg)) = start("evaluate", &a, cfg, g, &[&model, source])? else {
        return Ok(());
    };
    let bundle = load_bundle(&model)?;
    let records = match &a.dataset {
        Some(d) => {
            let ds = load_dataset(d)?;
            match a.split.as_str() {
                "train" => ds.train,
                "validation" => ds.validation,
                _ => ds.test,
            }
        }
        None => read_any(source)?,
    };
    let report = evaluate(&bundle, &records, cfg.evaluate.threshold)?;
    report.write(&dir.file("report.txt"))?;
    println!(
        "average_precision {}\nf1 {}\nprecision {}\nrecall {}",
        report.average_precision, report.f1, report.precision, report.recall
    );
    finish(
        dir,
        json!({
            "records": records.len(),
            "average_precision": report.average_precision,
            "f1": report.f1,
            "precision": report.precision,
            "recall": report.recall,
            "threshold": report.threshold,
        }),
    )
}

fn predict(mut cfg: RunConfig, g: &GlobalArgs, a: crate::PredictArgs) -> anyhow::Result<()> {
    if let Some(t) = a.threshold {
        cfg.evaluate.threshold = t;
    }
    let format = record_format(&a.input, a.format.as_deref())?;
    let model = model_path(&a.model);
    let Some((dir, cfg)) = start("predict", &a, cfg, g, &[&model, &a.input])? else {
        return Ok(());
    };
    let bundle = load_bundle(&model)?;
    let records = load_corpus(&a.input, format, IngestPolicy { keep_empty_abstracts: true })?;
    let scores = score_records(&bundle, &records)?;
    let path = dir.file("predictions.tsv");
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "id\tscore\tpredicted")?;
    let mut positive = 0;
    for (r, s) in records.iter().zip(&scores) {
        let p = *s >= cfg.evaluate.threshold;
        positive += usize::from(p);
        writeln!(out, "{}\t{}\t{}", r.id, s, u8::from(p))?;
    }
    out.flush()?;
    drop(out);
    eprintln!("predict: {positive} of {} records predicted relevant", records.len());
    finish(dir, json!({ "records": records.len(), "predicted_relevant": positive }))
}

fn synth(cfg: RunConfig, g: &GlobalArgs, a: crate::SynthArgs) -> anyhow::Result<()> {
    let Some((dir, cfg)) = start("synth", &a, cfg, g, &[])? else {
        return Ok(());
    };
    let corpus = generate(&SynthConfig {
        retrieved: a.retrieved,
        positive_rate: a.positive_rate,
        background: a.background,
        seed: cfg.seed,
        ..Default::default()
    })
    .map_err(|e| UsageError(e.to_string()))?;
    write_records(&dir.file("retrieved.jsonl"), &corpus.retrieved)?;
    write_records(&dir.file("background.jsonl"), &corpus.background)?;
    let summary = json!({
        "retrieved": corpus.retrieved.len(),
        "valid": corpus.valid().len(),
        "background": corpus.background.len(),
    });
    eprintln!("synth: {summary}");
    finish(dir, summary)
}
