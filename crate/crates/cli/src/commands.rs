//! Subcommand implementations. Every file written goes through
//! [`OutDir::write`], which refuses names that could escape the directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};

use medner::chunking::{decode_chunks, write_chunk_records, parse_chunk_records, ChunkRecord, ConfidenceRule};
use medner::corpus::{
    segment_document, write_conll, ColumnSpec, ConllReader, Corpus, LabelSchema, Scheme, Sentence, SentenceSplitter,
};
use medner::deid::{apply_policy, Annotation, DeidPolicy};
use medner::embeddings::{EmbeddingTable, OovPolicy};
use medner::eval::EvalReport;
use medner::nercore::{
    fit, grid_search, load_model, parse_grid, save_model, GridPoint, ModelConfig, NerModel, TrainConfig,
};

use crate::settings::Settings;
use crate::CliError;

type CliResult<T> = Result<T, CliError>;

fn ctx<T>(context: impl Display, r: medner::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::from_lib(context, e))
}

struct OutDir(PathBuf);

impl OutDir {
    fn from_settings(s: &Settings) -> CliResult<Self> {
        let dir = PathBuf::from(s.require("out_dir")?);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::other(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir(dir))
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name)?;
        std::fs::write(&path, contents).map_err(|e| CliError::other(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    fn path(&self, name: &str) -> CliResult<PathBuf> {
        let plain = Path::new(name).file_name().is_some_and(|f| f == name) && name != "..";
        if !plain {
            return Err(CliError::usage(format!("output name `{name}` must be a plain file name")));
        }
        Ok(self.0.join(name))
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::other(format!("{}: {e}", path.display())))
}

fn column_spec(name: &str) -> CliResult<ColumnSpec> {
    match name {
        "conll4" => Ok(ColumnSpec::CONLL4),
        "tsv2" => Ok(ColumnSpec::TSV2),
        other => Err(CliError::usage(format!("unknown corpus format `{other}` (expected conll4 or tsv2)"))),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn read_corpus(path: &Path, columns: ColumnSpec, scheme: Scheme, schema: Option<&LabelSchema>, max_len: usize) -> CliResult<Corpus> {
    let mut reader = ConllReader::new(columns).scheme(scheme).max_seq_length(max_len);
    if let Some(schema) = schema {
        reader = reader.schema(schema.clone());
    }
    ctx(path.display(), reader.parse(&read(path)?))
}

/// Vector dimension from the first line of an embedding file, honouring a
/// `count dim` header.
fn infer_embedding_dim(path: &Path) -> CliResult<usize> {
    let text = read(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let fields: Vec<&str> = first.split_whitespace().collect();
    match fields.as_slice() {
        [a, b] if a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok() => Ok(b.parse().unwrap()),
        [_, rest @ ..] if !rest.is_empty() => Ok(rest.len()),
        _ => Err(CliError::parse(format!("{}: cannot infer the vector dimension", path.display()))),
    }
}

fn configs(s: &Settings) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    for (k, v) in s.keys() {
        let m = model.set(k, v).map_err(|e| CliError::usage(e.to_string()))?;
        if !m {
            train.set(k, v).map_err(|e| CliError::usage(e.to_string()))?;
        }
    }
    ctx("model configuration", model.validate())?;
    ctx("training configuration", train.validate())?;
    Ok((model, train))
}

fn predicted_tags(model: &NerModel, corpus: &Corpus) -> Vec<Vec<String>> {
    corpus.sentences.iter().map(|s| model.predict_tags(s)).collect()
}

fn gold_tags(corpus: &Corpus) -> Vec<Vec<String>> {
    corpus
        .sentences
        .iter()
        .map(|s| s.tags().unwrap_or_default().into_iter().map(str::to_string).collect())
        .collect()
}

pub fn train(s: &Settings) -> CliResult<()> {
    let train_path = s.existing_path("train")?;
    let val_path = s.existing_path("val")?;
    let emb_path = s.existing_path("embeddings")?;
    let schema = match s.optional_path("schema")? {
        Some(p) => Some(ctx(p.display(), LabelSchema::load(&p))?),
        None => None,
    };
    let grid_path = s.optional_path("grid")?;
    let out = OutDir::from_settings(s)?;
    let columns = column_spec(s.raw("format").unwrap_or("conll4"))?;
    let scheme: Scheme = match s.get("scheme")? {
        Some(x) => x,
        None => schema.as_ref().map(LabelSchema::scheme).unwrap_or(Scheme::Iob2),
    };
    let (model_cfg, train_cfg) = configs(s)?;

    let train = read_corpus(&train_path, columns, scheme, schema.as_ref(), model_cfg.max_seq_length)?;
    let val = read_corpus(&val_path, columns, scheme, Some(&train.schema), model_cfg.max_seq_length)?;
    let dim = match s.get::<usize>("embed_dim")? {
        Some(d) => d,
        None => infer_embedding_dim(&emb_path)?,
    };
    let oov: OovPolicy = s.get_or("oov_policy", OovPolicy::default())?;
    let embeddings = ctx(emb_path.display(), EmbeddingTable::load(&emb_path, dim, oov))?;
    log::info!(
        "training on {} sentences, validating on {}, {} entity types",
        train.len(),
        val.len(),
        train.schema.entity_types().len()
    );

    let (model, history) = match grid_path {
        Some(grid_path) => {
            let base = GridPoint {
                model: model_cfg,
                train: train_cfg,
            };
            let points = ctx(grid_path.display(), parse_grid(&read(&grid_path)?, &base))?;
            let result = ctx("grid search", grid_search(&points, &train, &val, &embeddings))?;
            let mut table = String::from("point\tval_micro_f1\tbest\n");
            for (k, score) in result.scores.iter().enumerate() {
                table.push_str(&format!("{k}\t{score:.6}\t{}\n", k == result.best));
            }
            out.write("grid.tsv", table)?;
            (result.model, result.history)
        }
        None => {
            let model = ctx("model", NerModel::for_corpus(model_cfg, &train, embeddings, train_cfg.seed))?;
            ctx("training", fit(model, &train, &val, &train_cfg))?
        }
    };
    let model_path = out.path("model.bin")?;
    ctx(model_path.display(), save_model(&model, &model_path))?;
    out.write("metrics.jsonl", history.to_jsonl())?;
    let report = ctx(
        "validation report",
        EvalReport::from_sequences(&gold_tags(&val), &predicted_tags(&model, &val), Scheme::Iob2),
    )?;
    out.write("val_report.txt", report.to_table())?;
    out.write("val_report.json", report.to_json())?;
    println!(
        "best epoch {} with validation micro-F1 {:.4}; model written to {}",
        history.best_epoch,
        history.best_val_micro_f1,
        model_path.display()
    );
    Ok(())
}

fn load(s: &Settings) -> CliResult<NerModel> {
    let path = s.existing_path("model")?;
    ctx(path.display(), load_model(&path))
}

fn confidence_threshold(s: &Settings) -> CliResult<f64> {
    let t: f64 = s.get_or("min_confidence", 0.0)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(CliError::usage(format!("--min-confidence must lie in [0, 1], got {t}")));
    }
    Ok(t)
}

fn schema_list(types: &[String]) -> String {
    format!("[{}]", types.join(", "))
}

/// Sentences with predicted tags plus their chunk records at or above
/// `threshold`.
fn tag_sentences(
    model: &NerModel,
    sentences: Vec<Sentence>,
    rule: ConfidenceRule,
    threshold: f64,
) -> CliResult<(Vec<Sentence>, Vec<ChunkRecord>)> {
    let mut tagged = Vec::with_capacity(sentences.len());
    let mut records = Vec::new();
    for mut s in sentences {
        let p = model.predict(&s);
        let chunks = ctx(format!("{}:{}", s.doc_id, s.sent_index), decode_chunks(&s, &p.tags, &p.confidences, rule))?;
        records.extend(
            chunks
                .iter()
                .filter(|c| c.confidence >= threshold)
                .map(|c| ChunkRecord::from_chunk(&s.doc_id, c)),
        );
        for (tok, tag) in s.tokens.iter_mut().zip(p.tags) {
            tok.tag = Some(tag);
        }
        tagged.push(s);
    }
    Ok((tagged, records))
}

fn segment_text(model: &NerModel, path: &Path) -> CliResult<Vec<Sentence>> {
    Ok(segment_document(
        &SentenceSplitter::default(),
        &read(path)?,
        &stem(path),
        model.config.max_seq_length,
    ))
}

fn unique_stems(inputs: &[PathBuf]) -> CliResult<()> {
    let mut seen = BTreeSet::new();
    for p in inputs {
        if !seen.insert(stem(p)) {
            return Err(CliError::usage(format!("two inputs share the document name `{}`", stem(p))));
        }
    }
    Ok(())
}

fn input_paths(inputs: &[String]) -> CliResult<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = inputs.iter().map(PathBuf::from).collect();
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(CliError::usage(format!("input {} does not exist", missing.display())));
    }
    Ok(paths)
}

pub fn predict(s: &Settings, inputs: &[String]) -> CliResult<()> {
    let inputs = input_paths(inputs)?;
    let model = load(s)?;
    let out = OutDir::from_settings(s)?;
    let model_types = model.schema().entity_types().to_vec();
    if let Some(p) = s.optional_path("schema")? {
        let expected = ctx(p.display(), LabelSchema::load(&p))?;
        if expected.entity_types() != model_types.as_slice() {
            return Err(CliError::validation(format!(
                "model schema {} does not match schema {} from {}",
                schema_list(&model_types),
                schema_list(expected.entity_types()),
                p.display()
            )));
        }
    }
    let threshold = confidence_threshold(s)?;
    let rule: ConfidenceRule = s.get_or("confidence_rule", ConfidenceRule::default())?;
    let format = s.raw("input_format").unwrap_or("text");
    if format == "text" {
        unique_stems(&inputs)?;
    }

    let mut all_tagged = Vec::new();
    let mut all_records = Vec::new();
    for path in &inputs {
        let sentences = if format == "text" {
            segment_text(&model, path)?
        } else {
            let corpus = read_corpus(path, column_spec(format)?, Scheme::Iob2, None, model.config.max_seq_length)?;
            let extra: Vec<String> = corpus
                .schema
                .entity_types()
                .iter()
                .filter(|t| !model_types.contains(t))
                .cloned()
                .collect();
            if !extra.is_empty() {
                return Err(CliError::validation(format!(
                    "{}: input schema {} is not covered by model schema {}",
                    path.display(),
                    schema_list(corpus.schema.entity_types()),
                    schema_list(&model_types)
                )));
            }
            corpus.sentences
        };
        let (tagged, records) = tag_sentences(&model, sentences, rule, threshold)?;
        all_tagged.extend(tagged);
        all_records.extend(records);
    }
    out.write("predictions.tsv", write_chunk_records(&all_records))?;
    let corpus = Corpus::new(all_tagged, model.schema().clone());
    let conll = ctx("predicted tags", write_conll(&corpus, ColumnSpec::TSV2, Scheme::Iob2))?;
    out.write("predictions.conll", conll)?;
    log::info!("{} chunks from {} sentences", all_records.len(), corpus.len());
    Ok(())
}

/// Tokens must agree sentence by sentence.
fn check_alignment(gold: &Corpus, pred: &Corpus) -> CliResult<()> {
    if gold.len() != pred.len() {
        return Err(CliError::validation(format!(
            "alignment mismatch: gold has {} sentences, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        if g.words() != p.words() {
            return Err(CliError::validation(format!(
                "alignment mismatch in sentence {}:{}: gold has {} tokens, prediction has {}{}",
                g.doc_id,
                g.sent_index,
                g.len(),
                p.len(),
                if g.len() == p.len() { " with different words" } else { "" }
            )));
        }
    }
    Ok(())
}

pub fn evaluate(s: &Settings) -> CliResult<()> {
    let gold_path = s.existing_path("gold")?;
    let columns = column_spec(s.raw("format").unwrap_or("conll4"))?;
    let scheme: Scheme = s.get_or("scheme", Scheme::Iob2)?;
    let pred_path = s.optional_path("pred")?;
    let has_model = s.raw("model").is_some();
    let out = OutDir::from_settings(s)?;
    let gold = read_corpus(&gold_path, columns, scheme, None, usize::MAX)?;
    let pred_tags = match (pred_path, has_model) {
        (Some(p), false) => {
            let pred = read_corpus(&p, columns, scheme, None, usize::MAX)?;
            check_alignment(&gold, &pred)?;
            gold_tags(&pred)
        }
        (None, true) => predicted_tags(&load(s)?, &gold),
        _ => return Err(CliError::usage("give exactly one of --pred and --model")),
    };
    let report = ctx("evaluation", EvalReport::from_sequences(&gold_tags(&gold), &pred_tags, Scheme::Iob2))?;
    out.write("report.txt", report.to_table())?;
    out.write("report.json", report.to_json())?;
    print!("{}", report.to_table());
    let (level, micro) = match s.get_or("token_level", false)? {
        true => ("token-level", report.token_micro_f1),
        false => ("entity-level", report.micro_f1),
    };
    if let Some(gate) = s.get::<f64>("min_micro_f1")? {
        if micro < gate {
            return Err(CliError::other(format!("{level} micro-F1 {micro:.4} is below the required {gate:.4}")));
        }
    }
    Ok(())
}

pub fn deidentify(s: &Settings, inputs: &[String]) -> CliResult<()> {
    let inputs = input_paths(inputs)?;
    unique_stems(&inputs)?;
    let seed: u64 = s.get_or("seed", 42)?;
    let policy = match s.optional_path("policy")? {
        Some(p) => ctx(p.display(), DeidPolicy::load(&p, seed))?,
        None => DeidPolicy::default().with_seed(seed),
    };
    let spans_path = s.optional_path("spans")?;
    let model = match (&spans_path, s.raw("model").is_some()) {
        (Some(_), false) => None,
        (None, true) => Some(load(s)?),
        _ => return Err(CliError::usage("give exactly one of --spans and --model")),
    };
    let threshold = confidence_threshold(s)?;
    let out = OutDir::from_settings(s)?;

    let mut gold: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    if let Some(p) = &spans_path {
        for r in ctx(p.display(), parse_chunk_records(&read(p)?))? {
            gold.entry(r.doc_id.clone()).or_default().push(Annotation::from(&r));
        }
    }
    for path in &inputs {
        let doc = stem(path);
        let text = read(path)?;
        let annotations = match &model {
            Some(model) => {
                let (_, records) = tag_sentences(model, segment_text(model, path)?, ConfidenceRule::Min, threshold)?;
                records.iter().map(Annotation::from).collect()
            }
            None => gold.remove(&doc).unwrap_or_default(),
        };
        let result = ctx(format!("document {doc}"), apply_policy(&text, &annotations, &policy))?;
        out.write(&format!("{doc}.deid.txt"), &result.text)?;
        out.write(&format!("{doc}.deid.jsonl"), result.log_jsonl())?;
        log::info!("{doc}: {} replacements", result.log.len());
    }
    for doc in gold.keys() {
        log::warn!("spans for document `{doc}` match no input file");
    }
    Ok(())
}

pub fn convert(s: &Settings, input: &str) -> CliResult<()> {
    let input = PathBuf::from(input);
    if !input.exists() {
        return Err(CliError::usage(format!("input {} does not exist", input.display())));
    }
    let from = column_spec(s.require("from")?)?;
    let to = s.require("to")?;
    let to_spec = match to {
        "chunk-records" => None,
        other => Some(column_spec(other)?),
    };
    let from_scheme: Scheme = s.get_or("from_scheme", Scheme::Iob2)?;
    let to_scheme: Scheme = s.get_or("to_scheme", Scheme::Iob2)?;
    let out = OutDir::from_settings(s)?;
    let corpus = read_corpus(&input, from, from_scheme, None, usize::MAX)?;
    let (text, ext) = match to_spec {
        Some(spec) => (
            ctx(input.display(), write_conll(&corpus, spec, to_scheme))?,
            if spec == ColumnSpec::TSV2 { "tsv" } else { "conll" },
        ),
        None => {
            let mut records = Vec::new();
            for sent in &corpus.sentences {
                let tags = sent.tags().unwrap_or_default();
                let ones = vec![1.0; sent.len()];
                let chunks = ctx(
                    format!("{}:{}", sent.doc_id, sent.sent_index),
                    decode_chunks(sent, &tags, &ones, ConfidenceRule::Min),
                )?;
                records.extend(chunks.iter().map(|c| ChunkRecord::from_chunk(&sent.doc_id, c)));
            }
            (write_chunk_records(&records), "chunks.tsv")
        }
    };
    let name = match s.raw("output") {
        Some(n) => n.to_string(),
        None => format!("{}.{ext}", stem(&input)),
    };
    let path = out.write(&name, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
