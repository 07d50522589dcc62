//! Model container: a magic line, a one-line JSON manifest, then raw
//! little-endian `f64` tensor payloads with per-tensor SHA-256 checksums.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelParams, NerModel};
use super::tensor::Tensor;
use super::ModelConfig;
use crate::corpus::{LabelSchema, Scheme, Vocabulary};
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";
const MAGIC: &str = "medner-model";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    config: BTreeMap<String, String>,
    word_dim: usize,
    scheme: String,
    entity_types: Vec<String>,
    vocab_words: Vec<String>,
    vocab_chars: Vec<String>,
    min_count: usize,
    oov_policy: String,
    embedding_words: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    sha256: String,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn save_model(model: &NerModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub(crate) fn to_bytes(model: &NerModel) -> Vec<u8> {
    let emb = model.embeddings();
    let dim = emb.dimension();
    let mut named: Vec<(String, Tensor)> = model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    named.push((
        "embeddings.matrix".into(),
        Tensor::from_vec(emb.len(), dim, emb.matrix().to_vec()),
    ));
    named.push(("embeddings.unk".into(), Tensor::from_vec(1, dim, emb.unk_vector().to_vec())));

    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(named.len());
    for (name, t) in &named {
        let bytes = encode(t.data());
        tensors.push(TensorEntry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset: payload.len(),
            sha256: hex_digest(&bytes),
        });
        payload.extend(bytes);
    }
    let schema = model.schema();
    let vocab = model.vocab();
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        config: model
            .config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        word_dim: dim,
        scheme: schema.scheme().to_string(),
        entity_types: schema.entity_types().to_vec(),
        vocab_words: vocab.regular_words().to_vec(),
        vocab_chars: vocab.regular_chars().iter().map(char::to_string).collect(),
        min_count: vocab.min_count(),
        oov_policy: emb.policy().to_string(),
        embedding_words: emb.words().to_vec(),
        tensors,
    };
    let mut out = format!("{MAGIC}\n").into_bytes();
    out.extend(serde_json::to_vec(&manifest).expect("manifest serialises"));
    out.push(b'\n');
    out.extend(payload);
    out
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NerModel> {
    from_bytes(&std::fs::read(path)?)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<NerModel> {
    let magic_end = MAGIC.len() + 1;
    if bytes.len() < magic_end || &bytes[..MAGIC.len()] != MAGIC.as_bytes() || bytes[MAGIC.len()] != b'\n' {
        return Err(format_err("missing container header"));
    }
    let rest = &bytes[magic_end..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("manifest is not terminated"))?;
    let manifest: Manifest =
        serde_json::from_slice(&rest[..nl]).map_err(|e| format_err(format!("bad manifest: {e}")))?;
    let payload = &rest[nl + 1..];
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION.into(),
        });
    }

    let mut config = ModelConfig::default();
    for (k, v) in &manifest.config {
        if !config.set(k, v)? {
            return Err(format_err(format!("unknown config key `{k}`")));
        }
    }
    config.validate()?;
    let scheme: Scheme = manifest.scheme.parse()?;
    let schema = LabelSchema::new(&manifest.entity_types, scheme)?;
    let chars = manifest
        .vocab_chars
        .iter()
        .map(|s| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(format_err(format!("bad vocabulary character `{s}`"))),
            }
        })
        .collect::<Result<Vec<char>>>()?;
    let vocab = Vocabulary::from_parts(manifest.vocab_words.clone(), chars, manifest.min_count);
    let policy: OovPolicy = manifest.oov_policy.parse()?;

    // Shapes implied by the configuration; the directory must agree.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(
        &config,
        manifest.word_dim,
        vocab.num_words(),
        vocab.num_chars(),
        schema.num_tags(),
        &mut rng,
    );
    let mut expected: BTreeMap<String, (usize, usize)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.shape()))
        .collect();
    expected.insert(
        "embeddings.matrix".into(),
        (manifest.embedding_words.len(), manifest.word_dim),
    );
    expected.insert("embeddings.unk".into(), (1, manifest.word_dim));

    let mut loaded: BTreeMap<String, Tensor> = BTreeMap::new();
    for entry in &manifest.tensors {
        let Some(&(rows, cols)) = expected.get(&entry.name) else {
            return Err(format_err(format!("unexpected tensor `{}`", entry.name)));
        };
        if (rows, cols) != (entry.rows, entry.cols) {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected: format!("{rows}x{cols}"),
                found: format!("{}x{}", entry.rows, entry.cols),
            });
        }
        let len = rows * cols * 8;
        let slice = entry
            .offset
            .checked_add(len)
            .and_then(|end| payload.get(entry.offset..end))
            .ok_or_else(|| Error::Checksum(entry.name.clone()))?;
        if hex_digest(slice) != entry.sha256 {
            return Err(Error::Checksum(entry.name.clone()));
        }
        let data = slice
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        loaded.insert(entry.name.clone(), Tensor::from_vec(rows, cols, data));
    }
    for name in expected.keys() {
        if !loaded.contains_key(name) {
            return Err(format_err(format!("tensor `{name}` is missing")));
        }
    }
    for (name, t) in params.named_mut() {
        *t = loaded.remove(name).expect("checked above");
    }
    let matrix = loaded.remove("embeddings.matrix").expect("checked above");
    let unk = loaded.remove("embeddings.unk").expect("checked above");
    let embeddings = EmbeddingTable::from_parts(
        manifest.word_dim,
        manifest.embedding_words,
        matrix.data().to_vec(),
        unk.data().to_vec(),
        policy,
    )?;
    NerModel::from_parts(config, schema, vocab, embeddings, params)
}
